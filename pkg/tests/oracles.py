"""Brute-force reference implementations used as test oracles."""
from __future__ import annotations

import itertools
import math

import numpy as np


def random_graph(rng, n_max: int = 12, p_edge: float | None = None):
    n = int(rng.integers(3, n_max + 1))
    p = rng.uniform(0.1, 0.9) if p_edge is None else p_edge
    w = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j and rng.random() < p:
                w[i, j] = float(rng.uniform(0.1, 100.0))
    if not w.any():
        w[0, 1] = 1.0
    return w


def density(w):
    n = len(w)
    m = sum(1 for i in range(n) for j in range(n) if w[i][j] > 0)
    return m / (n * (n - 1))


def reciprocity(w):
    n = len(w)
    edges = [(i, j) for i in range(n) for j in range(n) if w[i][j] > 0]
    return sum(1 for i, j in edges if w[j][i] > 0) / len(edges)


def _undirected_neighbours(w):
    n = len(w)
    return [{j for j in range(n) if j != i and (w[i][j] > 0 or w[j][i] > 0)} for i in range(n)]


def transitivity(w):
    nb = _undirected_neighbours(w)
    n = len(w)
    triangles = sum(1 for a, b, c in itertools.combinations(range(n), 3) if b in nb[a] and c in nb[a] and c in nb[b])
    triples = sum(len(s) * (len(s) - 1) // 2 for s in nb)
    return 0.0 if triples == 0 else 3 * triangles / triples


def assortativity(w):
    nb = _undirected_neighbours(w)
    deg = [len(s) for s in nb]
    xs, ys = [], []
    for i in range(len(w)):
        for j in nb[i]:
            xs.append(deg[i])
            ys.append(deg[j])
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(xs, ys))
    vx = sum((a - mx) ** 2 for a in xs)
    vy = sum((b - my) ** 2 for b in ys)
    if vx == 0 or vy == 0:
        return math.nan
    return cov / math.sqrt(vx * vy)


def strengths(w):
    n = len(w)
    ins = [sum(w[i][j] for i in range(n)) for j in range(n)]
    outs = [sum(w[i][j] for j in range(n)) for i in range(n)]
    return ins, outs


def pagerank_power(w, damping=0.85, iters=5000):
    """Power iteration on the explicit Google matrix."""
    w = np.asarray(w, dtype=float)
    n = len(w)
    G = np.empty((n, n))
    for i in range(n):
        s = w[i].sum()
        G[i] = w[i] / s if s > 0 else np.full(n, 1.0 / n)
    G = damping * G + (1 - damping) / n
    x = np.full(n, 1.0 / n)
    for _ in range(iters):
        x = x @ G
    return x / x.sum()


def modularity_q(sym, labels):
    """Q = sum_c (e_cc - a_c^2) straight from the definition, pairwise loops."""
    n = len(sym)
    two_m = sum(sym[i][j] for i in range(n) for j in range(n))
    k = [sum(sym[i]) for i in range(n)]
    q = 0.0
    for i in range(n):
        for j in range(n):
            if labels[i] == labels[j]:
                q += sym[i][j] - k[i] * k[j] / two_m
    return q / two_m
