from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tradegrowth.learners import (
    FAMILIES,
    ModelSpec,
    SpecError,
    TrainedModel,
    dumps,
    fit,
    loads,
    predict,
    tree_contributions,
)
from tradegrowth.learners import ensemble, knn, linear, svr
from tradegrowth.learners.trees import Tree, bin_edges, bin_matrix, grow_exact, grow_leafwise


def problem(seed=0, n=50, p=5, noise=0.1):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = X @ rng.normal(size=p) + 0.7 + noise * rng.normal(size=n)
    return X, y


# ---------------------------------------------------------------- OLS / enet

def test_ols_exact_line_and_constant():
    x = np.arange(10.0)[:, None]
    b, w = linear.fit_ols(x, 2 * x[:, 0])
    assert abs(b) < 1e-10 and abs(w[0] - 2) < 1e-10
    b, w = linear.fit_ols(x, np.full(10, 3.0))
    assert abs(b - 3) < 1e-10 and abs(w[0]) < 1e-10


def test_ols_matches_normal_equations():
    X, y = problem()
    A = np.hstack([np.ones((len(X), 1)), X])
    oracle = np.linalg.inv(A.T @ A) @ A.T @ y
    b, w = linear.fit_ols(X, y)
    assert np.max(np.abs(np.r_[b, w] - oracle)) < 1e-8


def test_ols_rank_deficient_names_columns():
    X, y = problem()
    X = np.hstack([X, X[:, [1]] + X[:, [2]]])
    with pytest.raises(linear.RankDeficientError, match="dependent column"):
        fit(ModelSpec("ols"), X, y, feature_names=list("abcdefg")[:6])


def test_predict_ols_by_hand():
    m = TrainedModel("ols", {}, {"intercept": 0.0, "coef": np.array([2.0])}, ("x",))
    assert predict(m, np.array([[3.0]]))[0] == 6.0


def test_enet_zero_penalty_is_ols():
    X, y = problem(1)
    b0, w0 = linear.fit_ols(X, y)
    b, w = linear.fit_enet(X, y, 0.0, 0.5)
    assert np.max(np.abs(np.r_[b, w] - np.r_[b0, w0])) < 1e-6


def test_enet_huge_lasso_penalty_zeroes_slopes():
    X, y = problem(2)
    b, w = linear.fit_enet(X, y, 1e6, 1.0)
    assert np.all(w == 0) and b == pytest.approx(y.mean())


def subgradient_violation(X, y, b, w, lam, alpha):
    m = len(y)
    r = y - b - X @ w
    grad = -X.T @ r / m + 2 * (1 - alpha) * lam * w
    l1 = alpha * lam
    viol = np.where(w != 0, np.abs(grad + l1 * np.sign(w)), np.maximum(np.abs(grad) - l1, 0))
    return max(float(viol.max()), abs(float(r.mean())))


def test_enet_small_problem_optimality():
    X, y = problem(3, n=20, p=3)
    b, w = linear.fit_enet(X, y, 0.1, 0.5)
    b0, w0 = linear.fit_ols(X, y)
    assert linear.enet_objective(X, y, b, w, 0.1, 0.5) <= linear.enet_objective(X, y, b0, w0, 0.1, 0.5)
    assert subgradient_violation(X, y, b, w, 0.1, 0.5) < 1e-6


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 2.0), st.floats(0.0, 1.0))
def test_enet_subgradient_property(seed, lam, alpha):
    X, y = problem(seed, n=30, p=4)
    b, w = linear.fit_enet(X, y, lam, alpha)
    assert subgradient_violation(X, y, b, w, lam, alpha) < 1e-6


# ---------------------------------------------------------------- SVR

def test_svr_constant_targets_bias_only():
    X = np.random.default_rng(0).normal(size=(15, 2))
    m = fit(ModelSpec("svr_rbf", {"cost": 1.0, "gamma": 0.5, "epsilon": 0.1}), X, np.full(15, 4.2))
    assert np.allclose(predict(m, np.random.default_rng(1).normal(size=(5, 2))), 4.2, atol=1e-9)


def six_point_problem():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(6, 2))
    y = np.sin(X[:, 0]) + X[:, 1]
    return X, y, svr.rbf_kernel(X, X, 0.7)


def test_svr_dual_dominates_random_feasible_points():
    X, y, K = six_point_problem()
    C, eps = 2.0, 0.1
    beta, _, _ = svr.solve_dual(K, y, C, eps, tol=1e-8)
    assert abs(beta.sum()) < 1e-12 and np.all(np.abs(beta) <= C + 1e-12)
    best = svr.dual_objective(beta, K, y, eps)
    rng = np.random.default_rng(0)
    found = 0
    while found < 10_000:
        cand = rng.uniform(-C, C, size=(20_000, 6))
        cand[:, -1] = -cand[:, :-1].sum(axis=1)
        cand = cand[np.abs(cand[:, -1]) <= C]
        vals = cand @ y - eps * np.abs(cand).sum(axis=1) - 0.5 * np.einsum("ij,jk,ik->i", cand, K, cand)
        take = vals[: 10_000 - found]
        found += len(take)
        assert best >= take.max()


def test_svr_dual_matches_qp_solver():
    cp = pytest.importorskip("cvxpy")
    X, y, K = six_point_problem()
    C, eps = 2.0, 0.1
    beta, _, _ = svr.solve_dual(K, y, C, eps, tol=1e-8)
    L = np.linalg.cholesky(K + 1e-12 * np.eye(6))
    b = cp.Variable(6)
    prob = cp.Problem(cp.Maximize(y @ b - eps * cp.norm1(b) - 0.5 * cp.sum_squares(L.T @ b)),
                      [cp.sum(b) == 0, cp.abs(b) <= C])
    prob.solve(solver="CLARABEL")
    assert svr.dual_objective(beta, K, y, eps) >= prob.value - 1e-6


def test_svr_duplicate_point_fits_within_epsilon():
    X, y, _ = six_point_problem()
    X = np.vstack([X, X[:1]])
    y = np.r_[y, y[0]]
    m = fit(ModelSpec("svr_rbf", {"cost": 1e4, "gamma": 0.7, "epsilon": 0.1, "tol": 1e-6}), X, y)
    assert abs(predict(m, X[:1])[0] - y[0]) <= 0.1 + 1e-6


def test_svr_gamma_sigma_conversion_and_squared_loss():
    X, y = problem(4, n=30, p=2)
    a = fit(ModelSpec("svr_rbf", {"gamma": 0.5, "gamma_is_sigma": True}), X, y)
    b = fit(ModelSpec("svr_rbf", {"gamma": 2.0}), X, y)
    assert np.allclose(predict(a, X), predict(b, X), atol=1e-12)
    sq = fit(ModelSpec("svr_rbf", {"cost": 5.0, "loss": "squared_epsilon_insensitive"}), X, y)
    assert np.isfinite(predict(sq, X)).all()


# ---------------------------------------------------------------- kNN

def test_knn_examples():
    Xtr = np.array([[0.0], [1.0], [5.0]])
    ytr = np.array([1.0, 2.0, 9.0])
    assert knn.predict_knn(Xtr, ytr, np.array([[0.9]]), 1, 2.0)[0] == 2.0
    Xtr = np.array([[-1.0], [1.0]])
    assert knn.predict_knn(Xtr, np.array([2.0, 4.0]), np.array([[0.0]]), 2, 2.0)[0] == pytest.approx(3.0, abs=1e-12)
    Xtr = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    yy = np.array([1.0, 2.0, 3.0, 10.0])
    assert knn.predict_knn(Xtr, yy, np.zeros((1, 2)), 4, 1.3)[0] == pytest.approx(4.0, abs=1e-12)


def test_knn_exact_match_and_k_too_large():
    X, y = problem(5, n=10, p=3)
    m = fit(ModelSpec("knn", {"k": 3}), X, y)
    assert predict(m, X[4:5])[0] == y[4]
    with pytest.raises(ValueError):
        fit(ModelSpec("knn", {"k": 11}), X, y)


def test_knn_matches_bruteforce(rng):
    X, y = rng.normal(size=(40, 3)), rng.normal(size=40)
    q = rng.normal(size=(5, 3))
    got = knn.predict_knn(X, y, q, 7, 0.9)
    for r in range(5):
        d = (np.abs(X - q[r]) ** 0.9).sum(axis=1) ** (1 / 0.9)
        nn = np.argsort(d)[:7]
        w = 1 / (d[nn] + 1e-12)
        assert got[r] == pytest.approx(w @ y[nn] / w.sum(), rel=1e-12)


# ---------------------------------------------------------------- forest

def test_forest_single_full_tree_reproduces_targets():
    X, y = problem(6, n=40, p=3)
    m = fit(ModelSpec("rforest", {"n_trees": 1, "bootstrap": False, "min_node_size": 1, "mtry": 3}), X, y)
    assert np.allclose(predict(m, X), y, atol=1e-12)


def test_forest_constant_targets():
    X, _ = problem(7, n=30, p=3)
    m = fit(ModelSpec("rforest", {"n_trees": 10}), X, np.full(30, 5.0))
    assert np.all(predict(m, X) == 5.0)


def test_forest_of_constant_trees():
    t = Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([5.0]))
    forest = ensemble.tree_outputs([t, t, t], np.zeros((4, 2)))
    assert np.all(forest.mean(axis=0) == 5.0)


def test_forest_deterministic_and_jobs_independent():
    X, y = problem(8, n=120, p=6)
    spec = ModelSpec("rforest", {"n_trees": 20, "mtry": 2})
    a = predict(fit(spec, X, y, seed=3), X)
    b = predict(fit(spec, X, y, seed=3), X)
    c = predict(fit(spec, X, y, seed=3, n_jobs=4), X)
    assert np.array_equal(a, b) and np.array_equal(a, c)
    assert not np.array_equal(a, predict(fit(spec, X, y, seed=4), X))


def test_mtry_resolution():
    assert ensemble.resolve_mtry(None, 10) == 3
    assert ensemble.resolve_mtry(0.5, 10) == 5
    assert ensemble.resolve_mtry(4, 10) == 4
    with pytest.raises(ValueError):
        ensemble.resolve_mtry(11, 10)


# ---------------------------------------------------------------- boosting

def test_gbt_single_full_tree_zero_residuals():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([1.0, -2.0, 5.0, 0.5])
    for fam in ("gbt_level", "gbt_leaf"):
        m = fit(ModelSpec(fam, {"n_trees": 1, "learning_rate": 1.0, "max_depth": 10, "lam": 0.0,
                                "min_child_weight": 0.0}), X, y)
        assert np.max(np.abs(predict(m, X) - y)) < 1e-9


@pytest.mark.parametrize("variant", ["level", "leaf"])
@pytest.mark.parametrize("loss", ["squared", "huber"])
def test_gbt_loss_nonincreasing(variant, loss):
    X, y = problem(9, n=200, p=5, noise=1.0)
    st_ = ensemble.fit_gbt(X, y, variant=variant, n_trees=60, learning_rate=0.3, loss=loss)
    h = np.array(st_["loss_history"])
    assert np.all(np.diff(h) <= 1e-12)


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_squared_loss_gradients_match_finite_differences(y, f):
    loss = ensemble.SquaredLoss()
    step = 1e-4
    y_, f_ = np.array([y]), np.array([f])
    g, h = loss.grad_hess(y_, f_)
    num_g = (loss.value(y_, f_ + step) - loss.value(y_, f_ - step)) / (2 * step)
    num_h = (loss.grad_hess(y_, f_ + step)[0] - loss.grad_hess(y_, f_ - step)[0]) / (2 * step)
    assert abs(g[0] - num_g[0]) < 1e-6 and abs(h[0] - num_h[0]) < 1e-6


def test_huber_gradients_match_finite_differences(rng):
    loss = ensemble.HuberLoss(1.0)
    y, f = rng.normal(size=200), rng.normal(size=200) * 3
    f = f[np.abs(np.abs(f - y) - 1.0) > 1e-3]
    y = y[: len(f)]
    f = f[np.abs(np.abs(f - y) - 1.0) > 1e-3]
    y = y[: len(f)]
    g, _ = loss.grad_hess(y, f)
    num = (loss.value(y, f + 1e-6) - loss.value(y, f - 1e-6)) / 2e-6
    assert np.max(np.abs(g - num)) < 1e-6


def split_gain(g, h, mask, lam):
    def s(G, H):
        return G * G / (H + lam)
    return s(g[mask].sum(), h[mask].sum()) + s(g[~mask].sum(), h[~mask].sum()) - s(g.sum(), h.sum())


def test_histogram_matches_exact_first_split_gain(rng):
    x = rng.integers(0, 40, size=300).astype(float)
    X = x[:, None]
    y = np.sin(x / 5) + 0.1 * rng.normal(size=300)
    g, h = y.mean() - y, np.ones(300)
    lam = 1.0
    exact = grow_exact(X, g, h, max_depth=1, lam=lam)
    edges = [bin_edges(x, 255)]
    hist = grow_leafwise(bin_matrix(X, edges), edges, g, h, max_leaves=2, lam=lam)
    ge = split_gain(g, h, x <= exact.threshold[0], lam)
    gh = split_gain(g, h, x <= hist.threshold[0], lam)
    values = np.unique(x)
    oracle = max(split_gain(g, h, x <= v, lam) for v in values[:-1])
    assert ge == pytest.approx(oracle, rel=1e-12) and gh == pytest.approx(oracle, rel=1e-12)


def test_contribution_sum_oracle():
    X, y = problem(10, n=150, p=4)
    for fam in ("gbt_level", "gbt_leaf"):
        m = fit(ModelSpec(fam, {"n_trees": 25, "learning_rate": 0.2}), X, y)
        total = m.state["base"] + tree_contributions(m, X).sum(axis=0)
        assert np.allclose(predict(m, X), total, atol=1e-12)


def test_gbt_invalid_variant():
    with pytest.raises(ValueError):
        ensemble.fit_gbt(np.zeros((3, 1)), np.zeros(3), variant="oblique")


# ---------------------------------------------------------------- shared contract

@pytest.mark.parametrize("spec", [
    ModelSpec("ols"),
    ModelSpec("enet", {"penalty": 0.05, "mixture": 0.3}),
    ModelSpec("svr_rbf", {"cost": 3.0, "gamma": 0.2}),
    ModelSpec("knn", {"k": 4, "distance_power": 1.5}),
    ModelSpec("rforest", {"n_trees": 3, "bootstrap": False, "mtry": 4}),
])
def test_row_permutation_invariance(spec):
    X, y = problem(11, n=60, p=4)
    perm = np.random.default_rng(0).permutation(60)
    q = np.random.default_rng(1).normal(size=(20, 4))
    a = predict(fit(spec, X, y), q)
    b = predict(fit(spec, X[perm], y[perm]), q)
    assert np.max(np.abs(a - b)) < 1e-9


@pytest.mark.parametrize("family", FAMILIES)
def test_serialization_roundtrip_and_dimension_check(family):
    X, y = problem(12, n=80, p=3)
    params = {"n_trees": 5} if family in ("rforest", "gbt_level", "gbt_leaf") else {}
    m = fit(ModelSpec(family, params), X, y, seed=1)
    back = loads(dumps(m))
    assert np.array_equal(predict(back, X), predict(m, X))
    assert dumps(back) == dumps(m)
    with pytest.raises(ValueError, match="features"):
        predict(m, X[:, :2])


def test_spec_validation():
    with pytest.raises(SpecError, match="unknown model family"):
        ModelSpec("lasso")
    with pytest.raises(SpecError, match="unknown hyperparameter"):
        ModelSpec("knn", {"neighbours": 3})
    with pytest.raises(SpecError, match="invalid value"):
        ModelSpec("enet", {"mixture": 1.5})
    assert ModelSpec("knn", {"k": 3}).key() == ModelSpec("knn", {"k": 3}).key()


def test_missing_values_rejected():
    X, y = problem(13)
    X[0, 0] = np.nan
    with pytest.raises(ValueError, match="missing"):
        fit(ModelSpec("ols"), X, y)
