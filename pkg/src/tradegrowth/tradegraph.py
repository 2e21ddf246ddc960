"""Directed weighted trade networks, one per (section, period)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Iterable, Mapping

import numpy as np

from .ingest import FlowTable


class EmptyNetworkError(ValueError):
    pass


@dataclass(frozen=True)
class TradeNetwork:
    """Countries as nodes (sorted by code), exporter -> importer edges.

    ``weights[i, j]`` is the flow value from ``nodes[i]`` to ``nodes[j]``;
    absent edges are stored as 0 and the diagonal is always 0.
    """

    nodes: tuple[str, ...]
    weights: np.ndarray
    section: int
    period: str

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if w.shape != (len(self.nodes), len(self.nodes)):
            raise ValueError("weight matrix does not match node count")
        if np.any(np.diag(w) != 0):
            raise ValueError("self-loops are not allowed")
        if np.any(w < 0):
            raise ValueError("negative edge weight")
        w.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> int:
        return int(np.count_nonzero(self.weights))

    @property
    def adjacency(self) -> np.ndarray:
        return self.weights > 0

    @property
    def edges(self) -> dict[tuple[int, int], float]:
        rows, cols = np.nonzero(self.weights)
        return {(int(i), int(j)): float(self.weights[i, j]) for i, j in zip(rows, cols)}

    def index(self, node: str) -> int:
        try:
            return self.nodes.index(node)
        except ValueError:
            raise KeyError(f"unknown node {node!r}") from None


@dataclass(frozen=True)
class UndirectedView:
    """Symmetric projection: ``weights[i, j] = w(i->j) + w(j->i)``."""

    nodes: tuple[str, ...]
    weights: np.ndarray

    @property
    def edges(self) -> dict[frozenset, float]:
        rows, cols = np.nonzero(np.triu(self.weights))
        return {
            frozenset((self.nodes[i], self.nodes[j])): float(self.weights[i, j])
            for i, j in zip(rows, cols)
        }

    def binary(self) -> np.ndarray:
        return (self.weights > 0).astype(np.int64)


def network_from_flows(
    flows: Mapping[tuple[str, str], float],
    section: int,
    period: str,
    universe: Iterable[str] | None = None,
) -> TradeNetwork:
    """Build a network from an ``(origin, destination) -> value`` mapping.

    Zero-valued flows are dropped.  Countries only appear if they touch a
    positive flow, unless ``universe`` lists extra nodes to keep isolated.
    """
    positive = {k: float(v) for k, v in flows.items() if v > 0}
    if any(o == d for o, d in positive):
        raise ValueError("self-loop in flows")
    nodes = {c for pair in positive for c in pair}
    if not positive:
        raise EmptyNetworkError(f"empty network for section {section}, period {period}")
    if universe is not None:
        nodes.update(universe)
    order = tuple(sorted(nodes))
    pos = {c: i for i, c in enumerate(order)}
    w = np.zeros((len(order), len(order)))
    for (o, d), v in positive.items():
        w[pos[o], pos[d]] = v
    return TradeNetwork(order, w, section, period)


def build_network(table: FlowTable, section: int, period: str, universe: Iterable[str] | None = None) -> TradeNetwork:
    return network_from_flows(table.select(section, period), section, period, universe)


def undirected_view(net: TradeNetwork) -> UndirectedView:
    if net.n == 0:
        raise EmptyNetworkError("empty network")
    w = net.weights
    return UndirectedView(net.nodes, w + w.T)


def write_edge_list(net: TradeNetwork, fh: IO[str]) -> None:
    """One ``origin destination weight`` line per edge, sorted by codes."""
    for (i, j), v in sorted(net.edges.items()):
        fh.write(f"{net.nodes[i]} {net.nodes[j]} {v!r}\n")


def read_edge_list(fh: IO[str], section: int, period: str) -> TradeNetwork:
    flows: dict[tuple[str, str], float] = {}
    for line in fh:
        parts = line.split()
        if not parts:
            continue
        o, d, v = parts
        flows[(o, d)] = flows.get((o, d), 0.0) + float(v)
    return network_from_flows(flows, section, period)
