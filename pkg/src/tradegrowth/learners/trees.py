"""Regression-tree growers on second-order statistics.

Both growers score a split by

    gain = 1/2 [T(G_L)^2/(H_L+lam) + T(G_R)^2/(H_R+lam) - T(G)^2/(H+lam)] - min_split_gain

with T the L1 soft-threshold, and set leaves to -T(G)/(H+lam).  With
g = -y, h = 1 and no regularization this is exactly CART variance
reduction with leaf means, which is how the random forest uses them.

Ties between candidate splits go to the lowest feature index, then the
lowest threshold.  Samples go left when ``x <= threshold``.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numba as nb
import numpy as np

LEAF = -1


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _predict_tree(np.ascontiguousarray(X, dtype=np.float64), self.feature, self.threshold, self.left, self.right, self.value)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
        )

    @property
    def n_leaves(self) -> int:
        return int((self.feature == LEAF).sum())


@nb.njit(cache=True, nogil=True)
def _predict_tree(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while feature[node] != LEAF:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


def pack_trees(trees: list[Tree]):
    offsets = np.cumsum([0] + [len(t.feature) for t in trees])
    feature = np.concatenate([t.feature for t in trees])
    threshold = np.concatenate([t.threshold for t in trees])
    left = np.concatenate([np.where(t.left >= 0, t.left + o, -1) for t, o in zip(trees, offsets)])
    right = np.concatenate([np.where(t.right >= 0, t.right + o, -1) for t, o in zip(trees, offsets)])
    value = np.concatenate([t.value for t in trees])
    return feature, threshold, left, right, value, offsets[:-1].astype(np.int64)


@nb.njit(cache=True, nogil=True)
def predict_packed(X, feature, threshold, left, right, value, roots):
    """Per-tree predictions, shape (n_trees, n_rows)."""
    out = np.empty((roots.shape[0], X.shape[0]))
    for t in range(roots.shape[0]):
        for i in range(X.shape[0]):
            node = roots[t]
            while feature[node] != LEAF:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[t, i] = value[node]
    return out


# ---------------------------------------------------------------------------
# deterministic RNG usable inside compiled code

@nb.njit(cache=True, nogil=True)
def _splitmix64(state):
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True, nogil=True)
def _randint(state, upper):
    return np.int64((_splitmix64(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0) * upper)


@nb.njit(cache=True, nogil=True)
def _sample_features(state, p, mtry, allowed_row):
    allowed_row[:] = False
    if mtry >= p:
        allowed_row[:] = True
        return
    perm = np.arange(p)
    for i in range(mtry):
        j = i + _randint(state, p - i)
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
        allowed_row[perm[i]] = True


@nb.njit(cache=True, nogil=True, inline="always")
def _soft(g, alpha):
    if g > alpha:
        return g - alpha
    if g < -alpha:
        return g + alpha
    return 0.0


@nb.njit(cache=True, nogil=True, inline="always")
def _score(g, h, lam, alpha):
    t = _soft(g, alpha)
    d = h + lam
    if d <= 0.0:
        return 0.0
    return t * t / d


@nb.njit(cache=True, nogil=True, inline="always")
def _leaf_value(g, h, lam, alpha):
    d = h + lam
    if d <= 0.0:
        return 0.0
    return -_soft(g, alpha) / d


# ---------------------------------------------------------------------------
# exact, depth-wise grower over presorted columns

@nb.njit(cache=True, nogil=True)
def _compact(cur, m, node_of):
    # stable in-place filter of each sorted column to rows with a live node
    kept = 0
    for f in range(cur.shape[0]):
        kept = 0
        for idx in range(m):
            r = cur[f, idx]
            if node_of[r] >= 0:
                cur[f, kept] = r
                kept += 1
    return kept


@nb.njit(cache=True, nogil=True)
def _grow_exact(X, order, g, h, w, max_depth, min_split_size, min_samples_leaf,
                min_child_weight, lam, alpha, min_split_gain, mtry, seed):
    n, p = X.shape
    cap = 2 * n + 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    G = np.zeros(cap)
    H = np.zeros(cap)
    C = np.zeros(cap)
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed

    node_of = np.full(n, -1, dtype=np.int64)
    for r in range(n):
        if w[r] > 0:
            node_of[r] = 0
            G[0] += g[r] * w[r]
            H[0] += h[r] * w[r]
            C[0] += w[r]
    n_nodes = 1
    frontier = np.zeros(1, dtype=np.int64)
    XT = np.ascontiguousarray(X.T)
    gw = g * w
    hw = h * w
    # per-feature sort orders restricted to rows still in splittable nodes
    cur = order.copy()
    m = _compact(cur, n, node_of)

    depth = 0
    while frontier.shape[0] > 0 and (max_depth < 0 or depth < max_depth):
        k = frontier.shape[0]
        local = np.full(n_nodes, -1, dtype=np.int64)
        active = 0
        for i in range(k):
            nd = frontier[i]
            if C[nd] >= min_split_size and C[nd] >= 2 * min_samples_leaf:
                local[nd] = active
                active += 1
        if active == 0:
            break
        allowed = np.zeros((active, p), dtype=np.bool_)
        for i in range(k):
            nd = frontier[i]
            if local[nd] >= 0:
                _sample_features(state, p, mtry, allowed[local[nd]])
        any_allowed = np.zeros(p, dtype=np.bool_)
        for a in range(active):
            for f in range(p):
                if allowed[a, f]:
                    any_allowed[f] = True

        best_gain = np.full(active, -np.inf)
        best_feat = np.full(active, -1, dtype=np.int64)
        best_thr = np.zeros(active)
        parent = np.zeros(active)
        for i in range(k):
            nd = frontier[i]
            if local[nd] >= 0:
                parent[local[nd]] = _score(G[nd], H[nd], lam, alpha)

        GL = np.zeros(active)
        HL = np.zeros(active)
        CL = np.zeros(active)
        last = np.zeros(active)
        for f in range(p):
            GL[:] = 0.0
            HL[:] = 0.0
            CL[:] = 0.0
            if not any_allowed[f]:
                continue
            for idx in range(m):
                r = cur[f, idx]
                nd = node_of[r]
                loc = local[nd]
                if loc < 0 or not allowed[loc, f]:
                    continue
                v = XT[f, r]
                if CL[loc] > 0 and v > last[loc]:
                    gl = GL[loc]
                    hl = HL[loc]
                    cl = CL[loc]
                    gr = G[nd] - gl
                    hr = H[nd] - hl
                    cr = C[nd] - cl
                    if (cl >= min_samples_leaf and cr >= min_samples_leaf
                            and hl >= min_child_weight and hr >= min_child_weight):
                        gain = 0.5 * (_score(gl, hl, lam, alpha) + _score(gr, hr, lam, alpha) - parent[loc]) - min_split_gain
                        if gain > best_gain[loc]:
                            best_gain[loc] = gain
                            best_feat[loc] = f
                            thr = last[loc] + 0.5 * (v - last[loc])
                            if thr >= v:
                                thr = last[loc]
                            best_thr[loc] = thr
                GL[loc] += gw[r]
                HL[loc] += hw[r]
                CL[loc] += w[r]
                last[loc] = v

        new_frontier = np.empty(2 * active, dtype=np.int64)
        n_new = 0
        for i in range(k):
            nd = frontier[i]
            loc = local[nd]
            if loc < 0 or best_feat[loc] < 0:
                continue
            if not best_gain[loc] > 1e-12 * max(parent[loc], 1e-300):
                continue
            feature[nd] = best_feat[loc]
            threshold[nd] = best_thr[loc]
            left[nd] = n_nodes
            right[nd] = n_nodes + 1
            new_frontier[n_new] = n_nodes
            new_frontier[n_new + 1] = n_nodes + 1
            n_new += 2
            n_nodes += 2
        if n_new == 0:
            break
        for r in range(n):
            nd = node_of[r]
            if nd < 0:
                continue
            if feature[nd] == LEAF:
                node_of[r] = -1
                continue
            if XT[feature[nd], r] <= threshold[nd]:
                child = left[nd]
            else:
                child = right[nd]
            node_of[r] = child
            G[child] += g[r] * w[r]
            H[child] += h[r] * w[r]
            C[child] += w[r]
        frontier = new_frontier[:n_new].copy()
        m = _compact(cur, m, node_of)
        depth += 1

    for nd in range(n_nodes):
        if feature[nd] == LEAF:
            value[nd] = _leaf_value(G[nd], H[nd], lam, alpha)
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy())


def presort(X: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))


def grow_exact(X, g, h, w=None, *, order=None, max_depth=-1, min_split_size=2, min_samples_leaf=1,
               min_child_weight=0.0, lam=0.0, alpha=0.0, min_split_gain=0.0, mtry=None, seed=0) -> Tree:
    X = np.ascontiguousarray(X, dtype=np.float64)
    n, p = X.shape
    if order is None:
        order = presort(X)
    if w is None:
        w = np.ones(n)
    mtry = p if mtry is None else int(mtry)
    arrays = _grow_exact(
        X, order, np.asarray(g, dtype=np.float64), np.asarray(h, dtype=np.float64), np.asarray(w, dtype=np.float64),
        int(max_depth), float(min_split_size), float(min_samples_leaf), float(min_child_weight),
        float(lam), float(alpha), float(min_split_gain), mtry, np.uint64(seed),
    )
    return Tree(*arrays)


# ---------------------------------------------------------------------------
# histogram, best-leaf-first grower

def bin_edges(x: np.ndarray, n_bins: int) -> np.ndarray:
    """Upper bin edges (exclusive of the top bin).  Lossless when the column
    has at most ``n_bins`` distinct values: edges are then the midpoints of
    consecutive distinct values."""
    u = np.unique(x)
    if len(u) <= 1:
        return np.empty(0)
    if len(u) <= n_bins:
        lo, hi = u[:-1], u[1:]
    else:
        qs = np.quantile(x, np.arange(1, n_bins) / n_bins, method="lower")
        pos = np.unique(np.searchsorted(u, qs))
        pos = pos[pos < len(u) - 1]
        lo, hi = u[pos], u[pos + 1]
    edges = lo + 0.5 * (hi - lo)
    return np.where(edges >= hi, lo, edges)


def bin_matrix(X: np.ndarray, edges: list[np.ndarray]) -> np.ndarray:
    out = np.empty(X.shape, dtype=np.int32)
    for f, e in enumerate(edges):
        out[:, f] = np.searchsorted(e, X[:, f], side="left")
    return out


@nb.njit(cache=True, nogil=True)
def _histogram(B, rows, g, h, w, n_bins, hg, hh, hc):
    hg[:, :] = 0.0
    hh[:, :] = 0.0
    hc[:, :] = 0.0
    p = B.shape[1]
    for i in range(rows.shape[0]):
        r = rows[i]
        gw = g[r] * w[r]
        hw = h[r] * w[r]
        for f in range(p):
            b = B[r, f]
            hg[f, b] += gw
            hh[f, b] += hw
            hc[f, b] += w[r]


@nb.njit(cache=True, nogil=True)
def _best_hist_split(hg, hh, hc, n_bins, allowed, G, H, Cn, min_samples_leaf, min_child_weight, lam, alpha, min_split_gain):
    p = hg.shape[0]
    parent = _score(G, H, lam, alpha)
    best_gain = -np.inf
    best_f = -1
    best_b = -1
    for f in range(p):
        if not allowed[f]:
            continue
        gl = 0.0
        hl = 0.0
        cl = 0.0
        for b in range(n_bins[f] - 1):
            gl += hg[f, b]
            hl += hh[f, b]
            cl += hc[f, b]
            cr = Cn - cl
            hr = H - hl
            if cl < min_samples_leaf or cr < min_samples_leaf or hl < min_child_weight or hr < min_child_weight:
                continue
            if cl <= 0 or cr <= 0:
                continue
            gain = 0.5 * (_score(gl, hl, lam, alpha) + _score(G - gl, hr, lam, alpha) - parent) - min_split_gain
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_b = b
    return best_gain, best_f, best_b, parent


@nb.njit(cache=True, nogil=True)
def _partition(B, rows, f, b):
    n_left = 0
    for i in range(rows.shape[0]):
        if B[rows[i], f] <= b:
            n_left += 1
    lo = np.empty(n_left, dtype=np.int64)
    hi = np.empty(rows.shape[0] - n_left, dtype=np.int64)
    a = 0
    c = 0
    for i in range(rows.shape[0]):
        r = rows[i]
        if B[r, f] <= b:
            lo[a] = r
            a += 1
        else:
            hi[c] = r
            c += 1
    return lo, hi


@nb.njit(cache=True, nogil=True)
def _sums(rows, g, h, w):
    G = 0.0
    H = 0.0
    C = 0.0
    for i in range(rows.shape[0]):
        r = rows[i]
        G += g[r] * w[r]
        H += h[r] * w[r]
        C += w[r]
    return G, H, C


def grow_leafwise(B, edges, g, h, w=None, *, max_leaves=31, max_depth=-1, min_samples_leaf=1,
                  min_child_weight=0.0, lam=0.0, alpha=0.0, min_split_gain=0.0, mtry=None, seed=0) -> Tree:
    """Grow by repeatedly splitting the leaf with the largest gain."""
    n, p = B.shape
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    w = np.ones(n) if w is None else np.asarray(w, dtype=np.float64)
    n_bins = np.array([len(e) + 1 for e in edges], dtype=np.int64)
    width = int(n_bins.max()) if p else 1
    hg = np.zeros((p, width))
    hh = np.zeros((p, width))
    hc = np.zeros((p, width))
    state = np.array([np.uint64(seed)], dtype=np.uint64)
    mtry = p if mtry is None else int(mtry)
    allowed = np.zeros(p, dtype=np.bool_)

    feature, threshold, left, right, value = [], [], [], [], []
    stats = {}

    def new_node(rows, depth):
        nid = len(feature)
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        G, H, C = _sums(rows, g, h, w)
        value.append(float(_leaf_value(G, H, lam, alpha)))
        stats[nid] = (rows, depth)
        if (max_depth >= 0 and depth >= max_depth) or C < 2 * min_samples_leaf or C < 2:
            return None
        _histogram(B, rows, g, h, w, n_bins, hg, hh, hc)
        _sample_features(state, p, mtry, allowed)
        gain, f, b, parent = _best_hist_split(hg, hh, hc, n_bins, allowed, G, H, C, float(min_samples_leaf),
                                              float(min_child_weight), float(lam), float(alpha), float(min_split_gain))
        if f < 0 or not gain > 1e-12 * max(parent, 1e-300):
            return None
        return (-gain, nid, f, b)

    heap = []
    root = new_node(np.flatnonzero(w > 0).astype(np.int64), 0)
    if root is not None:
        heap.append(root)
    n_leaves = 1
    while heap and n_leaves < max_leaves:
        _, nid, f, b = heapq.heappop(heap)
        rows, depth = stats[nid]
        lo, hi = _partition(B, rows, f, b)
        feature[nid] = f
        threshold[nid] = float(edges[f][b])
        for side, part in ((left, lo), (right, hi)):
            side[nid] = len(feature)
            cand = new_node(part, depth + 1)
            if cand is not None:
                heapq.heappush(heap, cand)
        n_leaves += 1
    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.float64),
    )
