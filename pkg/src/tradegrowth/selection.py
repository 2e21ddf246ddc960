"""Cross-validated tuning with futility racing and the model horse race."""
from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np
import pandas as pd
from scipy import stats

from .learners import FAMILIES, ModelSpec, fit, predict
from .panel import SupervisedDataset
from .preprocess import PipelineConfig, apply_pipeline, fit_pipeline

logger = logging.getLogger(__name__)

METRICS = ("rmse", "mae", "huber", "smape")


class RaceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# folds and metrics

def kfold_split(n: int, k: int, seed: int) -> np.ndarray:
    """Fold index per row: a seeded permutation dealt round-robin into k folds."""
    if k < 2:
        raise ValueError("need k >= 2 folds")
    if k > n:
        raise ValueError(f"cannot split {n} rows into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[perm] = np.arange(n) % k
    return folds


def year_blocked_split(years, k: int) -> np.ndarray:
    """Fold index per row with whole years kept together in contiguous blocks."""
    years = np.asarray(years)
    uniq = np.unique(years)
    if k < 2 or k > len(uniq):
        raise ValueError(f"cannot split {len(uniq)} distinct years into {k} folds")
    block = {y: i * k // len(uniq) for i, y in enumerate(uniq)}
    return np.array([block[y] for y in years], dtype=np.int64)


def score(y, yhat, metric: str, delta: float = 1.0) -> float:
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {yhat.shape}")
    if y.size == 0:
        raise ValueError("cannot score zero observations")
    e = y - yhat
    a = np.abs(e)
    if metric == "rmse":
        return float(np.sqrt(np.mean(e * e)))
    if metric == "mae":
        return float(a.mean())
    if metric == "huber":
        return float(np.mean(np.where(a <= delta, 0.5 * e * e, delta * (a - 0.5 * delta))))
    if metric == "smape":
        den = np.abs(y) + np.abs(yhat)
        ratio = np.divide(2.0 * a, den, out=np.zeros_like(a), where=den > 0)
        return float(100.0 * ratio.mean())
    raise ValueError(f"unknown metric {metric!r}")


def all_scores(y, yhat) -> dict[str, float]:
    return {m: score(y, yhat, m) for m in METRICS}


# ---------------------------------------------------------------------------
# fold evaluation with per-fold preprocessing

class FoldEvaluator:
    """Scores model specs fold by fold on one fixed partition.

    The preprocessing pipeline is fitted on each training fold only and
    cached, so every model sees identical matrices.  Scores are cached by
    ``(spec key, fold)`` so a configuration is never refit.
    """

    def __init__(self, dataset: SupervisedDataset, folds: np.ndarray, pipeline: PipelineConfig | None = None,
                 seed: int = 0, n_jobs: int = 1):
        self.dataset = dataset
        self.folds = np.asarray(folds, dtype=np.int64)
        if len(self.folds) != len(dataset.y):
            raise ValueError("fold assignment length differs from dataset")
        self.k = int(self.folds.max()) + 1
        self.pipeline = pipeline or PipelineConfig()
        self.seed = seed
        self.n_jobs = max(1, int(n_jobs))
        self._matrices: dict[int, tuple] = {}
        self._scores: dict[tuple[str, int], dict | Exception] = {}
        self._lock = threading.Lock()

    def matrices(self, fold: int):
        with self._lock:
            if fold not in self._matrices:
                X, y = self.dataset.X, self.dataset.y
                tr = self.folds != fold
                fp = fit_pipeline(X[tr], self.dataset.kinds, self.pipeline)
                self._matrices[fold] = (fp, apply_pipeline(fp, X[tr]), y[tr], apply_pipeline(fp, X[~tr]), y[~tr])
            return self._matrices[fold]

    def _run(self, spec: ModelSpec, fold: int):
        fp, Xtr, ytr, Xva, yva = self.matrices(fold)
        try:
            model = fit(spec, Xtr, ytr, seed=self.seed, feature_names=fp.output_features)
            return all_scores(yva, predict(model, Xva))
        except Exception as exc:  # recorded, not raised
            logger.warning("%s failed on fold %d: %s", spec.key(), fold, exc)
            return exc

    def evaluate(self, tasks: Iterable[tuple[ModelSpec, int]]) -> None:
        todo = [(s, f) for s, f in tasks if (s.key(), f) not in self._scores]
        for f in sorted({f for _, f in todo}):
            self.matrices(f)
        if self.n_jobs > 1 and len(todo) > 1:
            with ThreadPoolExecutor(self.n_jobs) as pool:
                results = list(pool.map(lambda t: self._run(*t), todo))
        else:
            results = [self._run(*t) for t in todo]
        for (s, f), r in zip(todo, results):
            self._scores[(s.key(), f)] = r

    def result(self, spec: ModelSpec, fold: int):
        return self._scores[(spec.key(), fold)]


# ---------------------------------------------------------------------------
# futility racing

@dataclass
class RaceConfig:
    min_resamples: int = 4
    alpha: float = 0.05


@dataclass
class TuningResult:
    """Outcome of racing one family; ``best`` is None when every configuration failed."""

    family: str
    best: ModelSpec | None
    mean_rmse: dict[str, float]
    folds_completed: dict[str, int]
    eliminated: dict[str, int]
    failed: dict[str, str] = field(default_factory=dict)


def futility_pvalue(diffs: np.ndarray) -> float:
    """One-sided paired t-test p-value for H1: mean(diffs) > 0."""
    d = np.asarray(diffs, dtype=float)
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        return 0.0 if mean > 0 else 1.0
    t = mean / (sd / math.sqrt(len(d)))
    return float(stats.t.sf(t, len(d) - 1))


def _race_family(ev: FoldEvaluator, specs: list[ModelSpec], config: RaceConfig) -> TuningResult:
    alive = list(range(len(specs)))
    rmse = {i: [] for i in alive}
    eliminated: dict[str, int] = {}
    failed: dict[str, str] = {}
    for fold in range(ev.k):
        ev.evaluate((specs[i], fold) for i in alive)
        for i in list(alive):
            r = ev.result(specs[i], fold)
            if isinstance(r, Exception):
                failed[specs[i].key()] = f"{type(r).__name__}: {r}"
                alive.remove(i)
            else:
                rmse[i].append(r["rmse"])
        if not alive:
            break
        done = fold + 1
        if done >= config.min_resamples and len(alive) > 1:
            best = min(alive, key=lambda i: (np.mean(rmse[i]), i))
            for i in list(alive):
                if i == best:
                    continue
                p = futility_pvalue(np.array(rmse[i]) - np.array(rmse[best]))
                if p < config.alpha:
                    alive.remove(i)
                    eliminated[specs[i].key()] = done
    if alive:
        best_spec = specs[min(alive, key=lambda i: (np.mean(rmse[i]), i))]
    else:
        logger.warning("every %s configuration failed", specs[0].family)
        best_spec = None
    return TuningResult(
        family=specs[0].family,
        best=best_spec,
        mean_rmse={specs[i].key(): float(np.mean(v)) for i, v in rmse.items() if v},
        folds_completed={specs[i].key(): len(v) for i, v in rmse.items()},
        eliminated=eliminated,
        failed=failed,
    )


def adaptive_race(evaluator: FoldEvaluator, grid: dict[str, list[dict]],
                  config: RaceConfig | None = None) -> dict[str, TuningResult]:
    """Tune each family on ``grid``, dropping configurations found futile.

    After ``min_resamples`` folds every surviving configuration is compared
    with the current best (lowest mean RMSE so far) by a one-sided paired
    t-test on per-fold RMSE; ``p < alpha`` eliminates it.
    """
    config = config or RaceConfig()
    if evaluator.k < config.min_resamples:
        raise ValueError(f"{evaluator.k} folds < min_resamples={config.min_resamples}")
    if not grid:
        raise ValueError("empty grid")
    out = {}
    for family, configs in grid.items():
        if not configs:
            raise ValueError(f"empty grid for {family}")
        out[family] = _race_family(evaluator, [ModelSpec(family, c) for c in configs], config)
    return out


# ---------------------------------------------------------------------------
# horse race

@dataclass
class ModelScores:
    label: str
    spec: ModelSpec
    fold_scores: dict[str, np.ndarray] | None
    error: str | None = None

    def mean(self, metric: str) -> float:
        return float(self.fold_scores[metric].mean())

    def ci(self, metric: str, level: float = 0.95) -> tuple[float, float]:
        v = self.fold_scores[metric]
        half = stats.t.ppf(0.5 + level / 2, len(v) - 1) * v.std(ddof=1) / math.sqrt(len(v))
        m = v.mean()
        return float(m - half), float(m + half)


@dataclass
class RaceResult:
    models: list[ModelScores]
    winner: ModelScores
    folds: np.ndarray

    @property
    def survivors(self) -> list[ModelScores]:
        return [m for m in self.models if m.error is None]

    def leaderboard(self) -> pd.DataFrame:
        rows = []
        for m in self.survivors:
            for metric in METRICS:
                lo, hi = m.ci(metric)
                rows.append({"model": m.label, "metric": metric, "mean": m.mean(metric), "ci_low": lo, "ci_high": hi})
        return pd.DataFrame(rows, columns=["model", "metric", "mean", "ci_low", "ci_high"])


def _labels(specs: list[ModelSpec]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for s in specs:
        seen[s.family] = seen.get(s.family, 0) + 1
        out.append(s.family if seen[s.family] == 1 else f"{s.family}#{seen[s.family]}")
    return out


def horse_race(evaluator: FoldEvaluator, specs: list[ModelSpec]) -> RaceResult:
    """Score every spec on all folds; the winner has the lowest mean RMSE
    (earlier spec wins ties).  Failing specs are recorded and skipped."""
    if len(specs) < 2:
        raise ValueError("a horse race needs at least 2 models")
    evaluator.evaluate((s, f) for s in specs for f in range(evaluator.k))
    models = []
    for label, s in zip(_labels(specs), specs):
        res = [evaluator.result(s, f) for f in range(evaluator.k)]
        errs = [r for r in res if isinstance(r, Exception)]
        if errs:
            models.append(ModelScores(label, s, None, f"{type(errs[0]).__name__}: {errs[0]}"))
        else:
            models.append(ModelScores(label, s, {m: np.array([r[m] for r in res]) for m in METRICS}))
    alive = [m for m in models if m.error is None]
    if len(alive) < 2:
        raise RaceError(f"only {len(alive)} model(s) fitted successfully")
    winner = min(alive, key=lambda m: m.mean("rmse"))
    return RaceResult(models, winner, evaluator.folds)


def write_leaderboard(result: RaceResult, fh: IO[str]) -> None:
    fh.write("model,metric,mean,ci_low,ci_high\n")
    for r in result.leaderboard().itertuples(index=False):
        fh.write(f"{r.model},{r.metric},{r.mean!r},{r.ci_low!r},{r.ci_high!r}\n")


def default_grid(n_features: int | None = None) -> dict[str, list[dict]]:
    """Modest grids that keep a 10-fold race on ~2 000 rows within minutes."""
    gamma = 1.0 / n_features if n_features else 0.02
    return {
        "ols": [{}],
        "enet": [{"penalty": pen, "mixture": mix} for pen in (0.001, 0.01, 0.1) for mix in (0.5, 1.0)],
        "svr_rbf": [{"cost": c, "gamma": g} for c in (1.0, 10.0) for g in (gamma, gamma / 4)],
        "knn": [{"k": k, "distance_power": p} for k in (5, 11, 21) for p in (1.0, 2.0)],
        "rforest": [{"n_trees": 150, "mtry": m, "min_node_size": 5} for m in (None, 0.5)],
        "gbt_level": [{"n_trees": 200, "learning_rate": lr, "max_depth": d} for lr in (0.05, 0.1) for d in (3, 5)],
        "gbt_leaf": [{"n_trees": 200, "learning_rate": lr, "max_leaves": l} for lr in (0.05, 0.1) for l in (15, 31)],
    }


def validate_grid(grid: dict) -> dict[str, list[ModelSpec]]:
    """Instantiate every spec up front so bad entries fail before any fitting."""
    if not grid:
        raise ValueError("empty grid")
    out = {}
    for family, configs in grid.items():
        if family not in FAMILIES:
            raise ValueError(f"unknown model family {family!r} in grid")
        if not configs:
            raise ValueError(f"empty grid for {family}")
        out[family] = [ModelSpec(family, dict(c)) for c in configs]
    return out
