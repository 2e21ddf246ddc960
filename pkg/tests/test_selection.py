from __future__ import annotations

import io

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tradegrowth.learners import ModelSpec
from tradegrowth.panel import SupervisedDataset
from tradegrowth.selection import (
    FoldEvaluator,
    RaceConfig,
    RaceError,
    adaptive_race,
    all_scores,
    default_grid,
    futility_pvalue,
    horse_race,
    kfold_split,
    score,
    validate_grid,
    write_leaderboard,
    year_blocked_split,
)


def dataset(n=120, seed=0, slope=10.0, noise=0.5):
    rng = np.random.default_rng(seed)
    X = pd.DataFrame(rng.normal(size=(n, 3)), columns=["a", "b", "c"])
    y = slope * X["a"].to_numpy() + X["b"].to_numpy() ** 2 + noise * rng.normal(size=n)
    labels = [(f"C{i:03d}", 2000 + i % 12) for i in range(n)]
    return SupervisedDataset(X, y, labels, {c: "numeric" for c in X.columns})


# ---------------------------------------------------------------- folds

def test_kfold_sizes():
    assert sorted(np.bincount(kfold_split(10, 5, 0))) == [2] * 5
    assert sorted(np.bincount(kfold_split(10, 3, 0))) == [3, 3, 4]
    assert np.array_equal(kfold_split(37, 10, 4), kfold_split(37, 10, 4))
    with pytest.raises(ValueError):
        kfold_split(3, 4, 0)


@given(st.integers(2, 200), st.integers(2, 20), st.integers(0, 1000))
def test_kfold_balanced_partition(n, k, seed):
    if k > n:
        return
    f = kfold_split(n, k, seed)
    counts = np.bincount(f, minlength=k)
    assert len(f) == n and counts.max() - counts.min() <= 1 and set(f) == set(range(k))


def test_year_blocked_keeps_years_together():
    years = np.repeat(np.arange(2000, 2010), 3)
    f = year_blocked_split(years, 5)
    for y in np.unique(years):
        assert len(set(f[years == y])) == 1
    assert sorted(np.bincount(f)) == [6] * 5


# ---------------------------------------------------------------- metrics

def test_metric_examples():
    y = np.array([1.0, -2.0, 3.0])
    assert all(v == 0 for v in all_scores(y, y).values())
    s = all_scores(y, y + 1)
    assert s["huber"] == 0.5 and s["mae"] == 1 and s["rmse"] == 1
    assert score([100.0], [50.0], "smape") == pytest.approx(66.667, abs=1e-3)
    assert score([0.0, 2.0], [0.0, 2.0], "smape") == 0.0
    with pytest.raises(ValueError):
        score([1.0, 2.0], [1.0], "rmse")


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=30))
def test_metric_ranges(pairs):
    y, yh = np.array(pairs).T
    s = all_scores(y, yh)
    assert s["rmse"] >= s["mae"] - 1e-9 * max(1.0, s["mae"]) and s["mae"] >= 0
    assert 0 <= s["smape"] <= 200 + 1e-9


# ---------------------------------------------------------------- racing

def test_rigged_configuration_eliminated_at_min_resamples():
    ds = dataset()
    ev = FoldEvaluator(ds, kfold_split(len(ds.y), 10, 0))
    grid = {"enet": [{"penalty": 0.0}, {"penalty": 1e6, "mixture": 1.0}]}
    res = adaptive_race(ev, grid)["enet"]
    bad = ModelSpec("enet", grid["enet"][1]).key()
    good = ModelSpec("enet", grid["enet"][0])
    for f in range(4):
        assert ev.result(ModelSpec("enet", grid["enet"][1]), f)["rmse"] - ev.result(good, f)["rmse"] >= 3
    assert res.eliminated == {bad: 4}
    assert res.folds_completed[bad] == 4 and res.folds_completed[good.key()] == 10
    assert res.best == good


def test_single_configuration_runs_all_folds():
    ds = dataset()
    ev = FoldEvaluator(ds, kfold_split(len(ds.y), 5, 0))
    res = adaptive_race(ev, {"knn": [{"k": 3}]}, RaceConfig(min_resamples=4))["knn"]
    assert res.best == ModelSpec("knn", {"k": 3}) and res.folds_completed[res.best.key()] == 5


def test_alpha_zero_is_exhaustive_search():
    ds = dataset(noise=3.0)
    folds = kfold_split(len(ds.y), 6, 1)
    grid = {"knn": [{"k": k} for k in (1, 3, 7, 15, 31)]}
    res = adaptive_race(FoldEvaluator(ds, folds), grid, RaceConfig(alpha=0.0))["knn"]
    assert res.eliminated == {}
    ev = FoldEvaluator(ds, folds)
    specs = [ModelSpec("knn", c) for c in grid["knn"]]
    ev.evaluate((s, f) for s in specs for f in range(6))
    means = [np.mean([ev.result(s, f)["rmse"] for f in range(6)]) for s in specs]
    assert res.best == specs[int(np.argmin(means))]


def test_empty_grid_and_too_few_folds():
    ev = FoldEvaluator(dataset(), kfold_split(120, 3, 0))
    with pytest.raises(ValueError):
        adaptive_race(ev, {"ols": [{}]})
    ev = FoldEvaluator(dataset(), kfold_split(120, 5, 0))
    with pytest.raises(ValueError):
        adaptive_race(ev, {})


def test_futility_pvalue_edge_cases():
    assert futility_pvalue(np.array([3.0, 3.0, 3.0, 3.0])) == 0.0
    assert futility_pvalue(np.zeros(4)) == 1.0
    assert futility_pvalue(np.array([1.0, -1.0, 1.0, -1.0])) == pytest.approx(0.5)


def test_pipeline_refit_inside_folds_only():
    ds = dataset()
    folds = kfold_split(120, 5, 0)
    ev = FoldEvaluator(ds, folds)
    before = ev.matrices(2)[0].to_json()
    X = ds.X.copy()
    X.iloc[np.flatnonzero(folds == 2)[0]] = [1e6, -1e6, np.nan]
    ev2 = FoldEvaluator(SupervisedDataset(X, ds.y, ds.labels, ds.kinds), folds)
    assert ev2.matrices(2)[0].to_json() == before


# ---------------------------------------------------------------- horse race

def test_identical_specs_tie_on_spec_order():
    ds = dataset()
    ev = FoldEvaluator(ds, kfold_split(120, 5, 0))
    res = horse_race(ev, [ModelSpec("ols"), ModelSpec("ols")])
    a, b = res.models
    assert (a.label, b.label) == ("ols", "ols#2")
    assert all(np.array_equal(a.fold_scores[m], b.fold_scores[m]) for m in a.fold_scores)
    assert res.winner is a


def test_ci_halfwidth_uses_t_and_shrinks_with_more_folds():
    from scipy import stats

    ds = dataset(n=400, noise=2.0)
    specs = [ModelSpec("ols"), ModelSpec("enet", {"penalty": 0.01})]
    half = {5: [], 10: []}
    # fold-level spread is itself noisy, so compare averages over fold seeds
    for seed in range(20):
        for k in (5, 10):
            m = horse_race(FoldEvaluator(ds, kfold_split(400, k, seed)), specs).models[0]
            lo, hi = m.ci("rmse")
            v = m.fold_scores["rmse"]
            assert (hi - lo) / 2 == pytest.approx(stats.t.ppf(0.975, k - 1) * v.std(ddof=1) / np.sqrt(k), rel=1e-12)
            half[k].append((hi - lo) / 2)
    assert np.mean(half[10]) < np.mean(half[5])


def test_failed_model_recorded_and_race_continues():
    ds = dataset(n=30)
    ev = FoldEvaluator(ds, kfold_split(30, 5, 0))
    specs = [ModelSpec("ols"), ModelSpec("knn", {"k": 29}), ModelSpec("knn", {"k": 3})]
    res = horse_race(ev, specs)
    assert res.models[1].error is not None and len(res.survivors) == 2
    with pytest.raises(RaceError):
        horse_race(ev, specs[1:2] + [ModelSpec("knn", {"k": 28})])
    with pytest.raises(ValueError):
        horse_race(ev, specs[:1])


def test_winner_lowest_mean_and_leaderboard_export():
    ds = dataset()
    res = horse_race(FoldEvaluator(ds, kfold_split(120, 5, 0)),
                     [ModelSpec("knn", {"k": 15}), ModelSpec("ols"), ModelSpec("gbt_level", {"n_trees": 30})])
    assert res.winner.mean("rmse") == min(m.mean("rmse") for m in res.models)
    buf = io.StringIO()
    write_leaderboard(res, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "model,metric,mean,ci_low,ci_high" and len(lines) == 1 + 3 * 4
    board = pd.read_csv(io.StringIO(buf.getvalue()))
    assert (board["ci_low"] <= board["mean"]).all() and (board["mean"] <= board["ci_high"]).all()


def test_evaluation_independent_of_jobs():
    ds = dataset()
    folds = kfold_split(120, 5, 0)
    specs = [ModelSpec("rforest", {"n_trees": 10}), ModelSpec("svr_rbf"), ModelSpec("enet", {"penalty": 0.1})]
    r1 = horse_race(FoldEvaluator(ds, folds, n_jobs=1), specs)
    r4 = horse_race(FoldEvaluator(ds, folds, n_jobs=4), specs)
    for a, b in zip(r1.models, r4.models):
        assert all(np.array_equal(a.fold_scores[m], b.fold_scores[m]) for m in a.fold_scores)


def test_grid_validation():
    assert set(validate_grid(default_grid(10))) == {"ols", "enet", "svr_rbf", "knn", "rforest", "gbt_level", "gbt_leaf"}
    with pytest.raises(ValueError, match="unknown model family"):
        validate_grid({"xgboost": [{}]})
    with pytest.raises(ValueError):
        validate_grid({"ols": []})
