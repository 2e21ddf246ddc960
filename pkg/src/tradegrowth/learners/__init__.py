"""Seven regressors behind one ``fit`` / ``predict`` contract.

>>> spec = ModelSpec("enet", {"penalty": 0.01, "mixture": 0.5})
>>> model = fit(spec, X, y, seed=0)          # doctest: +SKIP
>>> yhat = predict(model, X_new)             # doctest: +SKIP
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import ensemble, knn, linear, svr
from .trees import Tree, pack_trees, predict_packed

FAMILIES = ("ols", "enet", "svr_rbf", "knn", "rforest", "gbt_level", "gbt_leaf")
MODEL_FORMAT = "tradegrowth-model"
MODEL_VERSION = 1


class SpecError(ValueError):
    """Unknown family, unknown hyperparameter or out-of-range value."""


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _unit(v):
    return 0 <= v <= 1


def _open_unit(v):
    return 0 < v <= 1


def _int_ge(lo):
    return lambda v: float(v).is_integer() and v >= lo


def _depth(v):
    return v is None or (float(v).is_integer() and (v == -1 or v >= 1))


def _choice(*opts):
    return lambda v: v in opts


_GBT = {
    "n_trees": (100, _int_ge(1)),
    "learning_rate": (0.1, _open_unit),
    "max_depth": (None, _depth),
    "lam": (1.0, _nonneg),
    "alpha": (0.0, _nonneg),
    "min_child_weight": (1.0, _nonneg),
    "min_samples_leaf": (1, _int_ge(1)),
    "min_split_gain": (0.0, _nonneg),
    "subsample": (1.0, _open_unit),
    "colsample": (1.0, _open_unit),
    "loss": ("squared", _choice("squared", "huber")),
    "huber_delta": (1.0, _pos),
}

# name -> (default, validity check)
HYPERPARAMETERS: dict[str, dict[str, tuple[Any, Callable]]] = {
    "ols": {},
    "enet": {"penalty": (0.0, _nonneg), "mixture": (0.5, _unit)},
    "svr_rbf": {
        "cost": (1.0, _pos),
        "gamma": (0.1, _pos),
        "gamma_is_sigma": (False, _choice(True, False)),
        "epsilon": (0.1, _nonneg),
        "loss": ("epsilon_insensitive", _choice("epsilon_insensitive", "squared_epsilon_insensitive")),
        "tol": (1e-3, _pos),
    },
    "knn": {
        "k": (5, _int_ge(1)),
        "distance_power": (2.0, _pos),
        "weighting": ("inverse", _choice("inverse", "uniform")),
    },
    "rforest": {
        "n_trees": (500, _int_ge(1)),
        "mtry": (None, lambda v: v is None or v > 0),
        "min_node_size": (5, _int_ge(1)),
        "max_depth": (-1, _depth),
        "bootstrap": (True, _choice(True, False)),
    },
    "gbt_level": _GBT,
    "gbt_leaf": {**_GBT, "max_leaves": (31, _int_ge(2)), "n_bins": (255, _int_ge(2))},
}


@dataclass(frozen=True)
class ModelSpec:
    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        validate_spec(self)

    def resolved(self) -> dict:
        """Hyperparameters with defaults filled in."""
        full = {k: d for k, (d, _) in HYPERPARAMETERS[self.family].items()}
        full.update(self.params)
        return full

    def key(self) -> str:
        return f"{self.family}{json.dumps(self.params, sort_keys=True)}"

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params)}


def validate_spec(spec: ModelSpec) -> None:
    if spec.family not in HYPERPARAMETERS:
        raise SpecError(f"unknown model family {spec.family!r}; expected one of {', '.join(FAMILIES)}")
    allowed = HYPERPARAMETERS[spec.family]
    for name, value in spec.params.items():
        if name not in allowed:
            raise SpecError(f"{spec.family}: unknown hyperparameter {name!r}; allowed: {', '.join(allowed) or 'none'}")
        try:
            ok = allowed[name][1](value)
        except (TypeError, ValueError):
            ok = False
        if not ok:
            raise SpecError(f"{spec.family}: invalid value {value!r} for {name!r}")


@dataclass(frozen=True, eq=False)
class TrainedModel:
    family: str
    params: dict
    state: dict
    feature_names: tuple[str, ...]

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def predict(self, X) -> np.ndarray:
        return predict(self, X)


def _svr_gamma(p: dict) -> float:
    return svr.gamma_from_sigma(p["gamma"]) if p["gamma_is_sigma"] else float(p["gamma"])


def fit(spec: ModelSpec, X, y, seed: int = 0, feature_names=None, n_jobs: int = 1) -> TrainedModel:
    """Fit ``spec`` on ``(X, y)``; ``X`` may be an array or a DataFrame."""
    if feature_names is None:
        feature_names = [str(c) for c in X.columns] if hasattr(X, "columns") else [f"x{j}" for j in range(np.shape(X)[1])]
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError(f"X {X.shape} and y {y.shape} are misaligned")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("X and y must be free of missing or infinite values")
    p = spec.resolved()
    fam = spec.family
    if fam == "ols":
        b, w = linear.fit_ols(X, y, list(feature_names))
        state = {"intercept": b, "coef": w}
    elif fam == "enet":
        b, w = linear.fit_enet(X, y, p["penalty"], p["mixture"])
        state = {"intercept": b, "coef": w}
    elif fam == "svr_rbf":
        state = svr.fit_svr_rbf(X, y, p["cost"], _svr_gamma(p), p["epsilon"], p["loss"], p["tol"])
    elif fam == "knn":
        if p["k"] > len(X):
            raise ValueError(f"k={p['k']} exceeds {len(X)} training rows")
        state = knn.fit_knn(X, y, int(p["k"]), p["distance_power"], p["weighting"])
    elif fam == "rforest":
        trees = ensemble.fit_rforest(X, y, int(p["n_trees"]), p["mtry"], int(p["min_node_size"]),
                                     int(p["max_depth"]), p["bootstrap"], seed, n_jobs)
        state = {"trees": trees}
    else:
        kw = {k: v for k, v in p.items()}
        for k in ("n_trees", "min_samples_leaf", "max_leaves", "n_bins"):
            if k in kw:
                kw[k] = int(kw[k])
        if kw["max_depth"] is not None:
            kw["max_depth"] = int(kw["max_depth"])
        state = ensemble.fit_gbt(X, y, variant=fam[4:], seed=seed, **kw)
    if "trees" in state:
        state["packed"] = pack_trees(state["trees"])
    return TrainedModel(fam, p, state, tuple(feature_names))


def _tree_matrix(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    return predict_packed(X, *model.state["packed"])


def predict(model: TrainedModel, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.n_features:
        raise ValueError(f"model was trained on {model.n_features} features, got {X.shape[1]}")
    s = model.state
    fam = model.family
    if fam in ("ols", "enet"):
        return X @ s["coef"] + s["intercept"]
    if fam == "svr_rbf":
        return svr.predict_svr(s, X)
    if fam == "knn":
        return knn.predict_knn(s["X"], s["y"], X, int(model.params["k"]), model.params["distance_power"],
                               model.params["weighting"])
    if fam == "rforest":
        return _tree_matrix(model, X).mean(axis=0)
    return s["base"] + s["learning_rate"] * _tree_matrix(model, X).sum(axis=0)


def tree_contributions(model: TrainedModel, X) -> np.ndarray:
    """Per-tree scaled outputs of a boosted model, shape (n_trees, n_rows)."""
    if not model.family.startswith("gbt"):
        raise ValueError("tree contributions exist for boosted models only")
    return model.state["learning_rate"] * _tree_matrix(model, np.ascontiguousarray(X, dtype=np.float64))


def _encode(v):
    if isinstance(v, np.ndarray):
        return {"__array__": v.tolist(), "dtype": str(v.dtype), "shape": list(v.shape)}
    if isinstance(v, Tree):
        return {"__tree__": v.to_dict()}
    if isinstance(v, (list, tuple)):
        return [_encode(x) for x in v]
    if isinstance(v, dict):
        return {k: _encode(x) for k, x in v.items()}
    if isinstance(v, float) and not math.isfinite(v):
        return {"__float__": repr(v)}
    if isinstance(v, np.generic):
        return v.item()
    return v


def _decode(v):
    if isinstance(v, dict):
        if "__array__" in v:
            return np.asarray(v["__array__"], dtype=v["dtype"]).reshape(v["shape"])
        if "__tree__" in v:
            return Tree.from_dict(v["__tree__"])
        if "__float__" in v:
            return float(v["__float__"])
        return {k: _decode(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_decode(x) for x in v]
    return v


def dumps(model: TrainedModel) -> str:
    """Versioned JSON text; floats round-trip exactly."""
    state = {k: v for k, v in model.state.items() if k != "packed"}
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "family": model.family,
        "params": _encode(model.params),
        "feature_names": list(model.feature_names),
        "state": _encode(state),
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def loads(text: str) -> TrainedModel:
    doc = json.loads(text)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError("not a serialized model")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')}")
    state = _decode(doc["state"])
    if "trees" in state:
        state["packed"] = pack_trees(state["trees"])
    return TrainedModel(doc["family"], _decode(doc["params"]), state, tuple(doc["feature_names"]))


__all__ = [
    "FAMILIES", "HYPERPARAMETERS", "ModelSpec", "SpecError", "TrainedModel",
    "fit", "predict", "tree_contributions", "dumps", "loads", "validate_spec",
]
