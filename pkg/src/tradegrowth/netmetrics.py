"""Topology measures for trade networks.

Strength and PageRank are node-level and use the directed weights.
Transitivity and assortativity are computed on the binarized undirected
projection; modularity uses the weighted undirected projection.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping

import numpy as np
import pandas as pd

from .ingest import period_sort_key
from .tradegraph import TradeNetwork, undirected_view

logger = logging.getLogger(__name__)

GLOBAL_METRICS = ("density", "assortativity", "reciprocity", "transitivity", "modularity")
NODE_METRICS = ("in_strength", "out_strength", "pagerank")


class ConvergenceError(RuntimeError):
    pass


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class NodeMetrics:
    in_strength: float
    out_strength: float
    pagerank: float


@dataclass(frozen=True)
class GlobalMetrics:
    density: float
    assortativity: float
    reciprocity: float
    transitivity: float
    modularity: float
    partition: Mapping[str, int] = field(default_factory=dict, compare=False)

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in GLOBAL_METRICS}


@dataclass(frozen=True)
class MetricTable:
    section: int
    period: str
    global_metrics: GlobalMetrics
    nodes: Mapping[str, NodeMetrics]


@dataclass(frozen=True)
class CentralityRanking:
    entries: list[tuple[int, str, float]]

    def write(self, fh: IO[str], decimals: int = 1) -> None:
        fh.write("rank,centrality_percent,country\n")
        for rank, country, pct in self.entries:
            fh.write(f"{rank},{pct:.{decimals}f},{country}\n")


def strength(net: TradeNetwork, node: str, direction: str = "in") -> float:
    i = net.index(node)
    if direction == "in":
        return float(net.weights[:, i].sum())
    if direction == "out":
        return float(net.weights[i, :].sum())
    raise ValueError(f"direction must be 'in' or 'out', got {direction!r}")


def pagerank(net: TradeNetwork, damping: float = 0.85, tol: float = 1e-10, max_iter: int = 1000) -> dict[str, float]:
    """Weighted PageRank along exporter -> importer edges.

    Score flows toward destinations, so large importers rank high.  Nodes
    without out-edges spread their mass uniformly.  Iterates until the L1
    change falls below ``tol``.
    """
    if net.n == 0:
        raise ValueError("empty network")
    if not 0 <= damping <= 1:
        raise ValueError("damping must lie in [0, 1]")
    n = net.n
    out = net.weights.sum(axis=1)
    dangling = out == 0
    trans = np.divide(net.weights, out[:, None], out=np.zeros_like(net.weights), where=~dangling[:, None])
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = damping * (x @ trans + x[dangling].sum() / n) + (1.0 - damping) / n
        nxt /= nxt.sum()
        residual = np.abs(nxt - x).sum()
        x = nxt
        if residual < tol:
            return dict(zip(net.nodes, x.tolist()))
    raise ConvergenceError(f"pagerank did not converge in {max_iter} iterations (L1 residual {residual:.3e})")


def density(net: TradeNetwork) -> float:
    if net.n < 2:
        raise UndefinedMetricError("density needs at least 2 nodes")
    return net.m / (net.n * (net.n - 1))


def reciprocity(net: TradeNetwork) -> float:
    a = net.adjacency
    m = int(a.sum())
    if m == 0:
        raise UndefinedMetricError("reciprocity of an edgeless network")
    return int((a & a.T).sum()) / m


def _binary_undirected(net: TradeNetwork) -> np.ndarray:
    return undirected_view(net).binary()


def transitivity(net: TradeNetwork) -> float:
    """Global clustering: 3 x triangles / connected triples (0 if no triples)."""
    if net.n < 3:
        raise UndefinedMetricError("transitivity needs at least 3 nodes")
    b = _binary_undirected(net)
    deg = b.sum(axis=1)
    triples = int((deg * (deg - 1)).sum())  # twice the number of connected triples
    if triples == 0:
        return 0.0
    closed = int(np.einsum("ij,jk,ki->", b, b, b))  # 6 x triangles
    return closed / triples


def assortativity(net: TradeNetwork) -> float:
    """Degree assortativity on the binarized undirected projection."""
    b = _binary_undirected(net)
    deg = b.sum(axis=1).astype(float)
    i, j = np.nonzero(np.triu(b))
    if len(i) < 2:
        raise UndefinedMetricError("undefined assortativity: fewer than 2 edges")
    x = np.concatenate([deg[i], deg[j]])
    y = np.concatenate([deg[j], deg[i]])
    xm = x - x.mean()
    var = float(xm @ xm)
    if var == 0:
        raise UndefinedMetricError("undefined assortativity: zero degree variance")
    return float(xm @ (y - y.mean())) / var


def modularity_of(weights: np.ndarray, labels: np.ndarray) -> float:
    """Weighted Newman-Girvan Q of a partition of a symmetric weight matrix."""
    two_m = weights.sum()
    if two_m <= 0:
        raise ValueError("modularity of an edgeless graph")
    labels = np.asarray(labels)
    communities = np.unique(labels)
    if len(communities) == 1:
        return 0.0
    deg = weights.sum(axis=1)
    q = 0.0
    for c in communities:
        mask = labels == c
        inside = weights[np.ix_(mask, mask)].sum()
        q += inside / two_m - (deg[mask].sum() / two_m) ** 2
    return float(q)


def _louvain_level(adj: np.ndarray, order: np.ndarray, resolution: float) -> tuple[np.ndarray, bool]:
    n = adj.shape[0]
    two_m = adj.sum()
    deg = adj.sum(axis=1)
    comm = np.arange(n)
    tot = deg.copy()
    moved_any = False
    improved = True
    while improved:
        improved = False
        for i in order:
            own = comm[i]
            links = np.bincount(comm, weights=adj[i], minlength=n)
            links[own] -= adj[i, i]
            tot[own] -= deg[i]
            gains = links - resolution * tot * deg[i] / two_m
            candidates = np.unique(comm[adj[i] > 0])
            best, best_gain = own, gains[own]
            for c in candidates:
                if gains[c] > best_gain + 1e-12 * deg[i]:
                    best, best_gain = c, gains[c]
            tot[best] += deg[i]
            if best != own:
                comm[i] = best
                improved = moved_any = True
    _, comm = np.unique(comm, return_inverse=True)
    return comm, moved_any


def louvain(weights: np.ndarray, seed: int = 0, resolution: float = 1.0) -> np.ndarray:
    """Louvain community labels for a symmetric nonnegative weight matrix.

    Node visiting order is a seeded permutation; labels are renumbered by
    first appearance so equal inputs give equal outputs.
    """
    rng = np.random.default_rng(seed)
    n = weights.shape[0]
    labels = np.arange(n)
    adj = np.array(weights, dtype=float)
    while True:
        order = rng.permutation(adj.shape[0])
        comm, moved = _louvain_level(adj, order, resolution)
        if not moved:
            break
        labels = comm[labels]
        k = comm.max() + 1
        member = np.zeros((adj.shape[0], k))
        member[np.arange(adj.shape[0]), comm] = 1.0
        adj = member.T @ adj @ member
    _, first = np.unique(labels, return_index=True)
    return np.argsort(np.argsort(first))[labels]


def modularity(net: TradeNetwork, seed: int = 0) -> tuple[float, dict[str, int]]:
    view = undirected_view(net)
    if view.weights.sum() <= 0:
        raise ValueError("undirected view has no edges")
    labels = louvain(view.weights, seed=seed)
    q = modularity_of(view.weights, labels)
    return q, dict(zip(net.nodes, labels.tolist()))


def rank_scores(scores: Mapping[str, float], top_k: int) -> CentralityRanking:
    """Top-k by score, normalized to the leader (100%); ties by code."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    leader = ordered[0][1]
    return CentralityRanking(
        [(r, c, 100.0 * s / leader) for r, (c, s) in enumerate(ordered[:top_k], start=1)]
    )


def centrality_ranking(net: TradeNetwork, top_k: int = 10) -> CentralityRanking:
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    return rank_scores(pagerank(net), top_k)


def _maybe(fn, net, name):
    try:
        return fn(net)
    except UndefinedMetricError as exc:
        logger.info("section %s %s: %s undefined (%s)", net.section, net.period, name, exc)
        return math.nan


def compute_metrics(net: TradeNetwork, seed: int = 0, damping: float = 0.85) -> MetricTable:
    """All global and node metrics of one network; undefined globals are NaN."""
    q, partition = modularity(net, seed=seed)
    glob = GlobalMetrics(
        density=_maybe(density, net, "density"),
        assortativity=_maybe(assortativity, net, "assortativity"),
        reciprocity=_maybe(reciprocity, net, "reciprocity"),
        transitivity=_maybe(transitivity, net, "transitivity"),
        modularity=q,
        partition=partition,
    )
    pr = pagerank(net, damping=damping)
    ins = net.weights.sum(axis=0)
    outs = net.weights.sum(axis=1)
    nodes = {
        c: NodeMetrics(float(ins[i]), float(outs[i]), pr[c]) for i, c in enumerate(net.nodes)
    }
    return MetricTable(net.section, net.period, glob, nodes)


def series_from_tables(tables: Iterable[MetricTable]) -> dict[int, pd.DataFrame]:
    rows: dict[int, list[dict]] = {}
    for t in tables:
        rows.setdefault(t.section, []).append({"period": t.period, **t.global_metrics.as_dict()})
    out = {}
    for section, rs in sorted(rows.items()):
        rs.sort(key=lambda r: period_sort_key(r["period"]))
        out[section] = pd.DataFrame(rs, columns=["period", *GLOBAL_METRICS])
    return out


def metric_series(networks: Iterable[TradeNetwork], seed: int = 0) -> dict[int, pd.DataFrame]:
    """Period x metric table per section, sorted chronologically."""
    return series_from_tables(compute_metrics(net, seed=seed) for net in networks)
