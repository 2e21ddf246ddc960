"""Ordinary least squares and elastic net."""
from __future__ import annotations

import numba as nb
import numpy as np
import scipy.linalg


class RankDeficientError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


def fit_ols(X: np.ndarray, y: np.ndarray, feature_names=None) -> tuple[float, np.ndarray]:
    """Least squares with intercept via column-pivoted QR.

    Returns ``(intercept, coefficients)``.  A rank-deficient design raises
    :class:`RankDeficientError` naming the columns the pivoting found to be
    linearly dependent on the others.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n < p + 1:
        raise RankDeficientError(f"{n} rows cannot identify {p} coefficients plus intercept")
    A = np.hstack([np.ones((n, 1)), X])
    Q, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(A.shape) * np.finfo(float).eps * diag[0]
    rank = int((diag > tol).sum())
    if rank < p + 1:
        names = ["(intercept)", *(feature_names or [f"x{j}" for j in range(p)])]
        dependent = [names[k] for k in piv[rank:]]
        raise RankDeficientError(f"rank-deficient design; dependent column(s): {', '.join(dependent)}")
    z = scipy.linalg.solve_triangular(R, Q.T @ y)
    beta = np.empty(p + 1)
    beta[piv] = z
    return float(beta[0]), beta[1:]


@nb.njit(cache=True, nogil=True)
def _enet_cd(gram, xty, l1, l2, tol, max_sweeps):
    p = gram.shape[0]
    theta = np.zeros(p)
    for sweep in range(max_sweeps):
        max_change = 0.0
        for j in range(p):
            if gram[j, j] <= 0.0:
                continue
            rho = xty[j]
            for k in range(p):
                if k != j:
                    rho -= gram[j, k] * theta[k]
            if rho > l1:
                new = (rho - l1) / (gram[j, j] + 2.0 * l2)
            elif rho < -l1:
                new = (rho + l1) / (gram[j, j] + 2.0 * l2)
            else:
                new = 0.0
            change = abs(new - theta[j])
            if change > max_change:
                max_change = change
            theta[j] = new
        if max_change < tol:
            return theta, sweep + 1
    return theta, -1


def fit_enet(X: np.ndarray, y: np.ndarray, penalty: float, mixture: float, tol: float = 1e-9,
             max_sweeps: int = 100_000) -> tuple[float, np.ndarray]:
    """Coordinate descent on

        1/(2m) sum (y - b - X theta)^2 + l1 |theta|_1 + l2 |theta|_2^2

    with ``l1 = mixture * penalty`` and ``l2 = (1 - mixture) * penalty``.
    The intercept ``b`` is not penalized.
    """
    if penalty < 0:
        raise ValueError("penalty must be >= 0")
    if not 0 <= mixture <= 1:
        raise ValueError("mixture must lie in [0, 1]")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    m = len(y)
    xm, ym = X.mean(axis=0), y.mean()
    Xc, yc = X - xm, y - ym
    gram = Xc.T @ Xc / m
    xty = Xc.T @ yc / m
    theta, sweeps = _enet_cd(gram, xty, mixture * penalty, (1 - mixture) * penalty, tol, max_sweeps)
    if sweeps < 0:
        raise ConvergenceError(f"elastic net did not converge in {max_sweeps} sweeps")
    return float(ym - xm @ theta), theta


def enet_objective(X, y, intercept, theta, penalty, mixture) -> float:
    r = y - intercept - X @ theta
    return float(r @ r / (2 * len(y)) + mixture * penalty * np.abs(theta).sum()
                 + (1 - mixture) * penalty * theta @ theta)
