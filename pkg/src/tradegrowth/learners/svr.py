"""Epsilon-insensitive support vector regression with an RBF kernel.

The dual is solved over ``beta = alpha - alpha*``::

    max  y'beta - eps |beta|_1 - 1/2 beta' K beta
    s.t. sum(beta) = 0,  -C <= beta_i <= C

by SMO-style pairwise updates: each step picks the maximal KKT-violating
pair and maximizes the (piecewise quadratic, concave) objective exactly
along ``beta_i += t, beta_j -= t``.

``loss="squared"`` swaps in the squared epsilon-insensitive loss
``C sum max(0, |r| - eps)^2``; its dual is the same problem with
``K + I/(2C)`` and no upper box.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np


class ConvergenceError(RuntimeError):
    pass


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def gamma_from_sigma(sigma: float) -> float:
    return 1.0 / (2.0 * sigma * sigma)


@nb.njit(cache=True, nogil=True, inline="always")
def _line_value(t, dF, eta, eps, bi, bj):
    return t * dF - 0.5 * eta * t * t - eps * (abs(bi + t) + abs(bj - t))


@nb.njit(cache=True, nogil=True)
def _best_step(dF, eta, eps, bi, bj, hi):
    pts = np.empty(4)
    pts[0] = 0.0
    npts = 1
    for b in (-bi, bj):
        if 0.0 < b < hi:
            pts[npts] = b
            npts += 1
    pts[npts] = hi
    npts += 1
    pts[:npts].sort()
    best_t = 0.0
    best_v = _line_value(0.0, dF, eta, eps, bi, bj)
    for s in range(npts):
        t = pts[s]
        v = _line_value(t, dF, eta, eps, bi, bj)
        if v > best_v:
            best_v = v
            best_t = t
    if eta > 0.0:
        for s in range(npts - 1):
            a = pts[s]
            b = pts[s + 1]
            if not b > a:
                continue
            mid = 0.5 * (a + b)
            si = 1.0 if bi + mid > 0 else -1.0
            sj = 1.0 if bj - mid > 0 else -1.0
            t = (dF - eps * (si - sj)) / eta
            if t < a:
                t = a
            elif t > b:
                t = b
            v = _line_value(t, dF, eta, eps, bi, bj)
            if v > best_v:
                best_v = v
                best_t = t
    return best_t


@nb.njit(cache=True, nogil=True)
def _smo(K, y, C, eps, tol, max_iter):
    n = y.shape[0]
    beta = np.zeros(n)
    F = y.copy()
    viol = np.inf
    for it in range(max_iter):
        i = -1
        j = -1
        up_best = -np.inf
        dn_best = np.inf
        for k in range(n):
            if beta[k] < C:
                up = F[k] - eps if beta[k] >= 0 else F[k] + eps
                if up > up_best:
                    up_best = up
                    i = k
            if beta[k] > -C:
                dn = F[k] + eps if beta[k] <= 0 else F[k] - eps
                if dn < dn_best:
                    dn_best = dn
                    j = k
        viol = up_best - dn_best
        if viol < tol:
            return beta, F, viol, it
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        hi = min(C - beta[i], beta[j] + C)
        t = _best_step(F[i] - F[j], eta, eps, beta[i], beta[j], hi)
        if t <= 0.0:
            return beta, F, viol, -1
        beta[i] += t
        beta[j] -= t
        for k in range(n):
            F[k] -= t * (K[k, i] - K[k, j])
    return beta, F, viol, -1


def solve_dual(K: np.ndarray, y: np.ndarray, C: float, eps: float, tol: float = 1e-3, max_iter: int | None = None):
    """Run SMO on a precomputed kernel; returns ``(beta, bias, max_violation)``."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    max_iter = max_iter or max(100_000, 200 * n)
    beta, F, viol, it = _smo(np.ascontiguousarray(K), y, float(C), float(eps), float(tol), int(max_iter))
    if it < 0:
        raise ConvergenceError(f"SMO stopped without convergence; max KKT violation {viol:.3e}")
    free = (np.abs(beta) > 0) & (np.abs(beta) < C)
    if free.any():
        bias = float(np.mean(F[free] - eps * np.sign(beta[free])))
    else:
        up = np.where(beta >= 0, F - eps, F + eps)[beta < C]
        dn = np.where(beta <= 0, F + eps, F - eps)[beta > -C]
        lo = up.max() if up.size else -np.inf
        hi_ = dn.min() if dn.size else np.inf
        if math.isfinite(lo) and math.isfinite(hi_):
            bias = 0.5 * (lo + hi_)
        else:
            bias = lo if math.isfinite(lo) else hi_
    return beta, bias, float(viol)


def dual_objective(beta: np.ndarray, K: np.ndarray, y: np.ndarray, eps: float) -> float:
    return float(y @ beta - eps * np.abs(beta).sum() - 0.5 * beta @ K @ beta)


def fit_svr_rbf(X: np.ndarray, y: np.ndarray, cost: float, gamma: float, epsilon: float = 0.1,
                loss: str = "epsilon_insensitive", tol: float = 1e-3, max_iter: int | None = None) -> dict:
    """Fit and return the state needed for prediction."""
    if cost <= 0 or gamma <= 0 or epsilon < 0:
        raise ValueError("need cost > 0, gamma > 0, epsilon >= 0")
    X = np.asarray(X, dtype=float)
    K = rbf_kernel(X, X, gamma)
    if loss == "epsilon_insensitive":
        box = cost
    elif loss == "squared_epsilon_insensitive":
        K[np.diag_indices_from(K)] += 1.0 / (2.0 * cost)
        box = np.inf
    else:
        raise ValueError(f"unknown loss {loss!r}")
    beta, bias, viol = solve_dual(K, y, box, epsilon, tol, max_iter)
    sv = np.flatnonzero(beta != 0)
    return {
        "support_vectors": X[sv],
        "dual_coef": beta[sv],
        "bias": bias,
        "gamma": float(gamma),
        "kkt_violation": viol,
    }


def predict_svr(state: dict, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    sv = state["support_vectors"]
    if len(sv) == 0:
        return np.full(len(X), state["bias"])
    return rbf_kernel(X, sv, state["gamma"]) @ state["dual_coef"] + state["bias"]
