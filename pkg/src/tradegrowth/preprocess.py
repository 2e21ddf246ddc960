"""Fitted preprocessing: correlation filter, near-zero-variance filter,
k-NN imputation, standardization and dummy encoding.

All statistics come from the training rows passed to :func:`fit_pipeline`;
:func:`apply_pipeline` never looks at the statistics of the rows it
transforms.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class PipelineError(ValueError):
    pass


@dataclass
class PipelineConfig:
    corr_threshold: float = 0.9
    freq_cut: float = 100.0
    knn_k: int = 5
    exclude_from_scaling: tuple[str, ...] = ("year",)

    def __post_init__(self):
        self.exclude_from_scaling = tuple(self.exclude_from_scaling)
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")


@dataclass
class FittedPipeline:
    input_features: list[str]
    nominal: list[str]
    dropped_by_correlation: list[str]
    dropped_by_nzv: list[str]
    numeric: list[str]
    knn_k: int
    reference: np.ndarray  # training rows x numeric, raw values, NaN = missing
    impute_center: np.ndarray
    impute_scale: np.ndarray
    means: dict[str, float]
    sds: dict[str, float]
    categories: dict[str, list[str]]
    config: PipelineConfig = field(default_factory=PipelineConfig)

    @property
    def output_features(self) -> list[str]:
        names = []
        for f in self.input_features:
            if f in self.numeric:
                names.append(f)
            elif f in self.categories:
                names.extend(f"{f}_{c}" for c in self.categories[f])
        return names

    def to_json(self) -> str:
        payload = {
            "format": "tradegrowth-pipeline",
            "version": FORMAT_VERSION,
            "input_features": self.input_features,
            "nominal": self.nominal,
            "dropped_by_correlation": self.dropped_by_correlation,
            "dropped_by_nzv": self.dropped_by_nzv,
            "numeric": self.numeric,
            "knn_k": self.knn_k,
            "reference": [[None if math.isnan(v) else v for v in row] for row in self.reference.tolist()],
            "impute_center": self.impute_center.tolist(),
            "impute_scale": self.impute_scale.tolist(),
            "means": self.means,
            "sds": self.sds,
            "categories": self.categories,
            "config": asdict(self.config),
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FittedPipeline":
        d = json.loads(text)
        if d.get("format") != "tradegrowth-pipeline" or d.get("version") != FORMAT_VERSION:
            raise PipelineError("not a tradegrowth pipeline (or unsupported version)")
        ref = np.array([[np.nan if v is None else v for v in row] for row in d["reference"]], dtype=float)
        return cls(
            input_features=d["input_features"],
            nominal=d["nominal"],
            dropped_by_correlation=d["dropped_by_correlation"],
            dropped_by_nzv=d["dropped_by_nzv"],
            numeric=d["numeric"],
            knn_k=d["knn_k"],
            reference=ref.reshape(-1, len(d["numeric"])),
            impute_center=np.array(d["impute_center"], dtype=float),
            impute_scale=np.array(d["impute_scale"], dtype=float),
            means=d["means"],
            sds=d["sds"],
            categories=d["categories"],
            config=PipelineConfig(**d["config"]),
        )


def pairwise_complete_corr(values: np.ndarray) -> np.ndarray:
    """Pearson r over rows where both columns are observed; NaN where undefined."""
    p = values.shape[1]
    obs = ~np.isnan(values)
    if obs.all() and len(values) >= 2:
        centered = values - values.mean(axis=0)
        norms = np.sqrt((centered**2).sum(axis=0))
        with np.errstate(invalid="ignore", divide="ignore"):
            out = (centered.T @ centered) / np.outer(norms, norms)
        out[~np.isfinite(out)] = np.nan
        return out
    out = np.full((p, p), np.nan)
    for i in range(p):
        for j in range(i, p):
            both = obs[:, i] & obs[:, j]
            if both.sum() < 2:
                continue
            a, b = values[both, i], values[both, j]
            a, b = a - a.mean(), b - b.mean()
            denom = math.sqrt(float(a @ a) * float(b @ b))
            if denom > 0:
                out[i, j] = out[j, i] = float(a @ b) / denom
    return out


def greedy_corr_filter(corr: np.ndarray, threshold: float) -> list[int]:
    """Indices to drop so that no remaining pair has |r| > threshold.

    Repeatedly takes the most correlated remaining pair and drops the member
    with the larger mean |r| to the other remaining columns (the later
    column on a tie).
    """
    r = np.abs(np.nan_to_num(corr, nan=0.0))
    np.fill_diagonal(r, 0.0)
    alive = np.ones(len(r), dtype=bool)
    dropped = []
    while alive.sum() > 1:
        sub = np.where(np.outer(alive, alive), r, 0.0)
        flat = int(np.argmax(sub))
        a, b = divmod(flat, len(r))
        if sub[a, b] <= threshold:
            break
        a, b = min(a, b), max(a, b)
        denom = max(int(alive.sum()) - 1, 1)
        mean_a = sub[a].sum() / denom
        mean_b = sub[b].sum() / denom
        drop = a if mean_a > mean_b else b
        alive[drop] = False
        dropped.append(drop)
    return dropped


def frequency_ratio(col: pd.Series) -> float:
    counts = col.dropna().value_counts(sort=True)
    if len(counts) < 2:
        return math.inf
    return counts.iloc[0] / counts.iloc[1]


def knn_impute(values: np.ndarray, reference: np.ndarray, center: np.ndarray, scale: np.ndarray, k: int) -> np.ndarray:
    """Fill NaNs with the mean of the k nearest reference rows.

    Distance is Euclidean over the standardized columns observed in both
    rows; only reference rows that observe the missing column qualify.
    Ties go to the earlier reference row.
    """
    out = values.copy()
    missing_rows = np.flatnonzero(np.isnan(values).any(axis=1))
    if len(missing_rows) == 0:
        return out
    sub = values[missing_rows]
    if np.isnan(sub).all(axis=1).any():
        bad = missing_rows[np.isnan(sub).all(axis=1)][0]
        raise PipelineError(f"unimputable row {bad}: every numeric feature is missing")

    zq = (sub - center) / scale
    zr = (reference - center) / scale
    mq, mr = ~np.isnan(zq), ~np.isnan(zr)
    q0, r0 = np.where(mq, zq, 0.0), np.where(mr, zr, 0.0)
    d2 = (q0**2) @ mr.T + mq @ (r0**2).T - 2.0 * q0 @ r0.T
    d2 = np.maximum(d2, 0.0)
    d2[(mq.astype(float) @ mr.T.astype(float)) == 0] = np.inf

    for qi, row in enumerate(missing_rows):
        for j in np.flatnonzero(np.isnan(values[row])):
            cand = np.flatnonzero(mr[:, j])
            if len(cand) == 0:
                raise PipelineError(f"no reference row observes column {j}")
            order = cand[np.argsort(d2[qi, cand], kind="stable")][:k]
            out[row, j] = reference[order, j].mean()
    return out


def _numeric_matrix(X: pd.DataFrame, cols: list[str]) -> np.ndarray:
    if not cols:
        return np.empty((len(X), 0))
    # C order so reductions do not depend on the frame's internal block layout
    return np.ascontiguousarray(X[cols].to_numpy(dtype=float, na_value=np.nan))


def fit_pipeline(X: pd.DataFrame, kinds: dict[str, str] | None = None, config: PipelineConfig | None = None) -> FittedPipeline:
    """Fit every preprocessing statistic on the training rows ``X``.

    Step order: mark nominal columns, correlation filter (pairwise-complete
    Pearson), near-zero-variance filter, k-NN imputation reference, scaling
    statistics, dummy categories.  If imputation pushes a surviving pair of
    columns over the correlation threshold, the correlation filter is rerun
    on the imputed values until no such pair remains.
    """
    config = config or PipelineConfig()
    if len(X) < 2:
        raise PipelineError("need at least 2 training rows")
    features = list(X.columns)
    kinds = kinds or {}
    nominal = [
        f for f in features
        if kinds.get(f, "numeric" if pd.api.types.is_numeric_dtype(X[f]) else "nominal") == "nominal"
    ]
    numeric = [f for f in features if f not in nominal]

    values = _numeric_matrix(X, numeric)
    drop_idx = greedy_corr_filter(pairwise_complete_corr(values), config.corr_threshold)
    dropped_corr = [numeric[i] for i in sorted(drop_idx)]
    numeric = [f for f in numeric if f not in dropped_corr]

    dropped_nzv = [f for f in numeric + nominal if frequency_ratio(X[f]) > config.freq_cut]
    numeric = [f for f in numeric if f not in dropped_nzv]
    nominal = [f for f in nominal if f not in dropped_nzv]
    if not numeric and not nominal:
        raise PipelineError("all features dropped")

    while True:
        ref = _numeric_matrix(X, numeric)
        center = np.nanmean(ref, axis=0) if numeric else np.empty(0)
        scale = np.nanstd(ref, axis=0) if numeric else np.empty(0)
        scale = np.where(scale > 0, scale, 1.0)
        imputed = knn_impute(ref, ref, center, scale, config.knn_k)
        if not np.isnan(ref).any() or len(numeric) < 2:
            break
        extra = greedy_corr_filter(np.corrcoef(imputed, rowvar=False), config.corr_threshold)
        if not extra:
            break
        gone = [numeric[i] for i in sorted(extra)]
        logger.info("dropping %s after imputation raised correlations", gone)
        dropped_corr.extend(gone)
        numeric = [f for f in numeric if f not in gone]

    means, sds = {}, {}
    for j, f in enumerate(numeric):
        if f in config.exclude_from_scaling:
            continue
        col = imputed[:, j]
        sd = float(col.std(ddof=1))
        means[f] = float(col.mean())
        sds[f] = sd if sd > 0 else 1.0

    categories = {f: sorted(X[f].dropna().astype(str).unique().tolist()) for f in nominal}
    return FittedPipeline(
        input_features=features,
        nominal=nominal,
        dropped_by_correlation=dropped_corr,
        dropped_by_nzv=dropped_nzv,
        numeric=numeric,
        knn_k=config.knn_k,
        reference=ref,
        impute_center=center,
        impute_scale=scale,
        means=means,
        sds=sds,
        categories=categories,
        config=config,
    )


def apply_pipeline(fp: FittedPipeline, X: pd.DataFrame) -> np.ndarray:
    """Transform rows into the model matrix (columns = ``fp.output_features``)."""
    absent = [f for f in fp.numeric + fp.nominal if f not in X.columns]
    if absent:
        raise PipelineError(f"rows lack feature(s): {absent}")
    values = _numeric_matrix(X, fp.numeric)
    if len(values) and fp.numeric and np.isnan(values).all(axis=1).any():
        raise PipelineError("unimputable row: every numeric feature is missing")
    values = knn_impute(values, fp.reference, fp.impute_center, fp.impute_scale, fp.knn_k)

    blocks = []
    for f in fp.input_features:
        if f in fp.numeric:
            col = values[:, fp.numeric.index(f)]
            if f in fp.means:
                col = (col - fp.means[f]) / fp.sds[f]
            blocks.append(col[:, None])
        elif f in fp.categories:
            raw = X[f].astype(object).where(X[f].notna(), None)
            cats = fp.categories[f]
            dummies = np.zeros((len(X), len(cats)))
            for i, v in enumerate(raw):
                if v is not None and str(v) in cats:
                    dummies[i, cats.index(str(v))] = 1.0
            blocks.append(dummies)
    if not blocks:
        return np.empty((len(X), 0))
    return np.hstack(blocks)
