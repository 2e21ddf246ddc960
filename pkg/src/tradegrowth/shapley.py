"""Model-agnostic Shapley attributions.

The value of a coalition ``S`` for a point ``x`` is the interventional
expectation

    v(S) = mean_b f(x_S, b_{not S})

over a background sample ``b``.  ``exact_shapley`` enumerates all ``2^n``
coalitions; ``sampled_shapley`` averages marginal contributions over random
feature orderings.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
import pandas as pd

MAX_EXACT_FEATURES = 15
ROW_BUDGET = 262_144  # model rows evaluated per batch


class ShapleyError(ValueError):
    pass


def _as_function(model) -> Callable[[np.ndarray], np.ndarray]:
    if callable(model) and not hasattr(model, "state"):
        return model
    from .learners import predict

    return lambda X: predict(model, X)


@dataclass
class ShapMatrix:
    values: np.ndarray
    base_value: float
    feature_names: list[str]
    std_errors: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != len(self.feature_names):
            raise ShapleyError("values and feature names disagree on the feature count")


class ValueFunction:
    """Interventional coalition values for one model and background set."""

    def __init__(self, model, background):
        self.f = _as_function(model)
        self.background = np.atleast_2d(np.asarray(background, dtype=float))
        if len(self.background) == 0:
            raise ShapleyError("empty background set")
        self.base_value = float(np.mean(self.f(self.background)))

    @property
    def n_features(self) -> int:
        return self.background.shape[1]

    def __call__(self, x: np.ndarray, masks: np.ndarray) -> np.ndarray:
        """``v(S)`` for each boolean row of ``masks`` (True = taken from ``x``)."""
        x = np.asarray(x, dtype=float)
        masks = np.atleast_2d(masks).astype(bool)
        B = self.background
        out = np.empty(len(masks))
        step = max(1, ROW_BUDGET // len(B))
        for start in range(0, len(masks), step):
            m = masks[start:start + step]
            Z = np.where(m[:, None, :], x[None, None, :], B[None, :, :])
            out[start:start + step] = self.f(Z.reshape(-1, B.shape[1])).reshape(len(m), len(B)).mean(axis=1)
        return out


def _log_weights(n: int) -> np.ndarray:
    """log(|S|! (n-|S|-1)! / n!) for |S| = 0..n-1."""
    s = np.arange(n)
    return np.array([math.lgamma(k + 1) + math.lgamma(n - k) - math.lgamma(n + 1) for k in s])


def exact_shapley(model, x, background, max_features: int = MAX_EXACT_FEATURES,
                  value_function: ValueFunction | None = None) -> np.ndarray:
    """Shapley values of every feature at ``x`` by full coalition enumeration."""
    vf = value_function or ValueFunction(model, background)
    n = vf.n_features
    if n > max_features:
        raise ShapleyError(f"{n} features exceed the exact limit of {max_features}; use sampled_shapley")
    codes = np.arange(1 << n)
    bits = ((codes[:, None] >> np.arange(n)) & 1).astype(bool)
    v = vf(x, bits)
    size = bits.sum(axis=1)
    w = np.exp(_log_weights(n))
    phi = np.empty(n)
    for i in range(n):
        without = codes[~bits[:, i]]
        phi[i] = np.sum(w[size[without]] * (v[without | (1 << i)] - v[without]))
    return phi


def sampled_shapley(model, x, background, n_permutations: int = 1000, seed: int = 0, obs_index: int = 0,
                    value_function: ValueFunction | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Permutation-sampling estimate with per-feature standard errors.

    The RNG stream is keyed by ``(seed, obs_index)``, so each observation
    gets the same orderings however the work is scheduled.
    """
    if n_permutations < 1:
        raise ShapleyError("n_permutations must be >= 1")
    vf = value_function or ValueFunction(model, background)
    n = vf.n_features
    rng = np.random.default_rng([seed, obs_index])
    perms = np.array([rng.permutation(n) for _ in range(n_permutations)])
    full = float(vf(x, np.ones((1, n), dtype=bool))[0])
    contrib = np.empty((n_permutations, n))
    per_batch = max(1, ROW_BUDGET // (len(vf.background) * max(n - 1, 1)))
    for start in range(0, n_permutations, per_batch):
        P = perms[start:start + per_batch]
        # prefixes of length 1..n-1; the empty and full coalitions are known
        masks = np.zeros((len(P), n - 1, n), dtype=bool)
        for k in range(n - 1):
            masks[np.arange(len(P)), k:, P[:, k]] = True
        vals = vf(x, masks.reshape(-1, n)).reshape(len(P), n - 1) if n > 1 else np.empty((len(P), 0))
        chain = np.hstack([np.full((len(P), 1), vf.base_value), vals, np.full((len(P), 1), full)])
        delta = np.diff(chain, axis=1)
        rows = np.arange(len(P))[:, None]
        contrib[start + rows, P] = delta
    phi = contrib.mean(axis=0)
    se = contrib.std(axis=0, ddof=1) / math.sqrt(n_permutations) if n_permutations > 1 else np.full(n, np.nan)
    return phi, se


def sample_background(X, size: int = 200, seed: int = 0) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if len(X) <= size:
        return X.copy()
    idx = np.sort(np.random.default_rng(seed).choice(len(X), size, replace=False))
    return X[idx]


def explain(model, X, background, feature_names=None, method: str = "auto", n_permutations: int = 1000,
            seed: int = 0, n_jobs: int = 1, max_features: int = MAX_EXACT_FEATURES) -> ShapMatrix:
    """Attributions for every row of ``X``.

    ``method="auto"`` enumerates exactly when the feature count allows it
    and samples otherwise.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    vf = ValueFunction(model, background)
    n = vf.n_features
    if X.shape[1] != n:
        raise ShapleyError(f"rows have {X.shape[1]} features, background has {n}")
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(n)]
    if method == "auto":
        method = "exact" if n <= max_features else "sampled"
    if method not in ("exact", "sampled"):
        raise ShapleyError(f"unknown method {method!r}")

    def one(i: int):
        if method == "exact":
            return exact_shapley(None, X[i], None, max_features, value_function=vf), None
        return sampled_shapley(None, X[i], None, n_permutations, seed, i, value_function=vf)

    if n_jobs > 1 and len(X) > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            res = list(pool.map(one, range(len(X))))
    else:
        res = [one(i) for i in range(len(X))]
    values = np.array([r[0] for r in res]).reshape(len(X), n)
    se = None if method == "exact" else np.array([r[1] for r in res]).reshape(len(X), n)
    return ShapMatrix(values, vf.base_value, names, se)


# ---------------------------------------------------------------------------
# summaries and exports

def mean_abs_importance(sm: ShapMatrix, top_k: int | None = None) -> list[tuple[str, float]]:
    """Features by decreasing mean |phi|; ties keep column order."""
    if sm.values.size == 0:
        raise ShapleyError("empty attribution matrix")
    top_k = len(sm.feature_names) if top_k is None else top_k
    if top_k < 1:
        raise ShapleyError("top_k must be >= 1")
    imp = np.abs(sm.values).mean(axis=0)
    order = np.argsort(-imp, kind="stable")[:top_k]
    return [(sm.feature_names[j], float(imp[j])) for j in order]


def importance_table(sm: ShapMatrix, top_k: int, model_label: str) -> pd.DataFrame:
    rows = mean_abs_importance(sm, top_k)
    return pd.DataFrame({"feature": [f for f, _ in rows], "mean_abs_shap": [v for _, v in rows], "model": model_label})


def _standardize(col: np.ndarray) -> np.ndarray:
    sd = col.std()
    if not sd > 0:
        return np.zeros_like(col)
    return (col - col.mean()) / sd


def _check_aligned(sm: ShapMatrix, raw) -> np.ndarray:
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    if raw.shape != sm.values.shape:
        raise ShapleyError(f"raw values {raw.shape} do not align with attributions {sm.values.shape}")
    return raw


def beeswarm_export(sm: ShapMatrix, raw, top_k: int = 20) -> pd.DataFrame:
    """Long-format rows for the ``top_k`` most important features."""
    raw = _check_aligned(sm, raw)
    frames = []
    for name, _ in mean_abs_importance(sm, top_k):
        j = sm.feature_names.index(name)
        frames.append(pd.DataFrame({
            "feature": name,
            "observation": np.arange(len(raw)),
            "shap_value": sm.values[:, j],
            "standardized_feature_value": _standardize(raw[:, j]),
        }))
    return pd.concat(frames, ignore_index=True)


def dependence_export(sm: ShapMatrix, raw, feature: str) -> pd.DataFrame:
    """(standardized value, attribution) pairs sorted by the feature's value."""
    raw = _check_aligned(sm, raw)
    if feature not in sm.feature_names:
        raise ShapleyError(f"unknown feature {feature!r}")
    j = sm.feature_names.index(feature)
    order = np.argsort(raw[:, j], kind="stable")
    return pd.DataFrame({
        "observation": order,
        "standardized_feature_value": _standardize(raw[:, j])[order],
        "shap_value": sm.values[order, j],
    })
