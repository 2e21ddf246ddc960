"""Inverse-distance weighted k-nearest-neighbour regression."""
from __future__ import annotations

import numpy as np

ZERO_GUARD = 1e-12


def minkowski(A: np.ndarray, B: np.ndarray, power: float) -> np.ndarray:
    return (np.abs(A[:, None, :] - B[None, :, :]) ** power).sum(axis=2) ** (1.0 / power)


def predict_knn(X_train, y_train, X, k: int, power: float, weighting: str = "inverse", chunk: int = 64) -> np.ndarray:
    """Weighted mean over the k nearest training rows.

    Weights are ``1 / (d + 1e-12)`` (or uniform).  A query that coincides with
    training rows returns the mean target of those rows.  Neighbour ties are
    resolved by training-row order.
    """
    X = np.asarray(X, dtype=float)
    out = np.empty(len(X))
    for start in range(0, len(X), chunk):
        q = X[start:start + chunk]
        d = minkowski(q, X_train, power)
        idx = np.argsort(d, axis=1, kind="stable")[:, :k]
        dk = np.take_along_axis(d, idx, axis=1)
        yk = y_train[idx]
        for r in range(len(q)):
            exact = dk[r] == 0
            if exact.any():
                out[start + r] = yk[r][exact].mean()
            elif weighting == "inverse":
                w = 1.0 / (dk[r] + ZERO_GUARD)
                out[start + r] = (w @ yk[r]) / w.sum()
            else:
                out[start + r] = yk[r].mean()
    return out


def fit_knn(X, y, k: int, distance_power: float = 2.0, weighting: str = "inverse") -> dict:
    X = np.asarray(X, dtype=float)
    if not 1 <= k <= len(X):
        raise ValueError(f"k={k} must lie in 1..{len(X)}")
    if distance_power <= 0:
        raise ValueError("distance_power must be > 0")
    if weighting not in ("inverse", "uniform"):
        raise ValueError(f"unknown weighting {weighting!r}")
    return {"X": X.copy(), "y": np.asarray(y, dtype=float).copy()}
