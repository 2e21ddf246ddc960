"""Random forest and second-order gradient boosting on the shared growers."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .trees import Tree, bin_edges, bin_matrix, grow_exact, grow_leafwise, pack_trees, predict_packed, presort


def resolve_mtry(mtry, p: int) -> int:
    """Integer count, a fraction in (0, 1), or None for max(1, p // 3)."""
    if mtry is None:
        return max(1, p // 3)
    if isinstance(mtry, float) and 0 < mtry < 1:
        return max(1, int(round(mtry * p)))
    mtry = int(mtry)
    if not 1 <= mtry <= p:
        raise ValueError(f"mtry={mtry} must lie in 1..{p}")
    return mtry


def _tree_streams(seed: int, n_trees: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_trees)]


def fit_rforest(X, y, n_trees: int = 500, mtry=None, min_node_size: int = 5, max_depth: int = -1,
                bootstrap: bool = True, seed: int = 0, n_jobs: int = 1) -> list[Tree]:
    """Bagged CART regression trees with ``mtry`` features drawn per split.

    Nodes holding at most ``min_node_size`` samples are not split further.
    Every tree owns an RNG stream spawned from ``seed``, so the result does
    not depend on ``n_jobs``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    m = resolve_mtry(mtry, p)
    order = presort(X)
    g, h = -y, np.ones(n)

    def one(rng: np.random.Generator) -> Tree:
        w = np.bincount(rng.integers(0, n, n), minlength=n).astype(float) if bootstrap else np.ones(n)
        tree_seed = int(rng.integers(0, 2**63 - 1))
        return grow_exact(X, g, h, w, order=order, max_depth=max_depth, min_split_size=min_node_size + 1,
                          mtry=m, seed=tree_seed)

    streams = _tree_streams(seed, n_trees)
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            return list(pool.map(one, streams))
    return [one(r) for r in streams]


class SquaredLoss:
    name = "squared"

    def value(self, y, f):
        return 0.5 * (f - y) ** 2

    def grad_hess(self, y, f):
        return f - y, np.ones_like(f)


class HuberLoss:
    name = "huber"

    def __init__(self, delta: float = 1.0):
        self.delta = delta

    def value(self, y, f):
        e = np.abs(f - y)
        return np.where(e <= self.delta, 0.5 * e**2, self.delta * (e - 0.5 * self.delta))

    def grad_hess(self, y, f):
        e = f - y
        inside = np.abs(e) <= self.delta
        return np.where(inside, e, self.delta * np.sign(e)), inside.astype(float)


def make_loss(name: str, huber_delta: float = 1.0):
    if name == "squared":
        return SquaredLoss()
    if name == "huber":
        return HuberLoss(huber_delta)
    raise ValueError(f"unknown loss {name!r}")


def fit_gbt(X, y, variant: str = "level", n_trees: int = 100, learning_rate: float = 0.1, max_depth: int | None = None,
            max_leaves: int = 31, lam: float = 1.0, alpha: float = 0.0, n_bins: int = 255,
            min_child_weight: float = 1.0, min_samples_leaf: int = 1, min_split_gain: float = 0.0,
            subsample: float = 1.0, colsample: float = 1.0, loss: str = "squared", huber_delta: float = 1.0,
            seed: int = 0) -> dict:
    """Newton boosting from ``mean(y)``.

    ``variant="level"`` grows depth-wise to ``max_depth`` (default 6) with
    exact split search; ``variant="leaf"`` grows the best leaf first up to
    ``max_leaves`` over ``n_bins`` histogram bins (``max_depth`` default
    unlimited).  Returns the fitted state including the per-iteration
    training loss.
    """
    if variant not in ("level", "leaf"):
        raise ValueError(f"unknown variant {variant!r}")
    if not 0 < learning_rate <= 1:
        raise ValueError("learning_rate must lie in (0, 1]")
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if lam < 0 or alpha < 0:
        raise ValueError("regularization must be >= 0")
    if not 0 < subsample <= 1 or not 0 < colsample <= 1:
        raise ValueError("subsample and colsample must lie in (0, 1]")
    if variant == "leaf" and (max_leaves < 2 or n_bins < 2):
        raise ValueError("leaf variant needs max_leaves >= 2 and n_bins >= 2")
    if max_depth is None:
        max_depth = 6 if variant == "level" else -1
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    lossf = make_loss(loss, huber_delta)
    mtry = max(1, int(round(colsample * p)))
    base = float(y.mean())
    F = np.full(n, base)
    history = [float(lossf.value(y, F).mean())]

    if variant == "level":
        order = presort(X)
    else:
        edges = [bin_edges(X[:, f], n_bins) for f in range(p)]
        B = bin_matrix(X, edges)

    trees = []
    for rng in _tree_streams(seed, n_trees):
        g, h = lossf.grad_hess(y, F)
        w = (rng.random(n) < subsample).astype(float) if subsample < 1 else np.ones(n)
        tree_seed = int(rng.integers(0, 2**63 - 1))
        common = dict(min_samples_leaf=min_samples_leaf, min_child_weight=min_child_weight, lam=lam,
                      alpha=alpha, min_split_gain=min_split_gain, mtry=mtry, seed=tree_seed)
        if variant == "level":
            tree = grow_exact(X, g, h, w, order=order, max_depth=max_depth, **common)
        else:
            tree = grow_leafwise(B, edges, g, h, w, max_leaves=max_leaves, max_depth=max_depth, **common)
        trees.append(tree)
        F = F + learning_rate * tree.predict(X)
        history.append(float(lossf.value(y, F).mean()))
    return {"trees": trees, "base": base, "learning_rate": float(learning_rate), "loss_history": history}


def tree_outputs(trees: list[Tree], X) -> np.ndarray:
    """Raw per-tree outputs, shape (n_trees, n_rows)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    return predict_packed(X, *pack_trees(trees))
