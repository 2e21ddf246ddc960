"""Command line front end: build-networks, rank, panel, race, explain.

Every command reads one JSON run config (``--config``); ``--seed``,
``--jobs`` and ``--out`` override the matching keys.  Outputs are staged in
memory and written atomically at the end together with a ``manifest.json``,
so a failed run leaves nothing behind and reruns are byte-identical.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import io
import json
import logging
import os
import platform
import sys
import tempfile
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from . import __version__
from .ingest import (
    GRANULARITIES,
    REQUIRED_FIELDS,
    SECTION_NAMES,
    SchemaError,
    build_flow_table,
    load_schema,
    parse_records,
    period_sort_key,
    section_relevance,
    write_flow_table,
)
from .learners import ModelSpec, dumps, fit, loads
from .netmetrics import centrality_ranking, compute_metrics, series_from_tables
from .panel import DEFAULT_SECTIONS, PanelConfig, align_target, assemble_panel, read_dataset, write_dataset, write_panel
from .preprocess import FittedPipeline, PipelineConfig, apply_pipeline, fit_pipeline
from .selection import (
    FoldEvaluator,
    RaceConfig,
    RaceError,
    adaptive_race,
    default_grid,
    horse_race,
    kfold_split,
    validate_grid,
    write_leaderboard,
    year_blocked_split,
)
from .shapley import beeswarm_export, dependence_export, explain, importance_table, sample_background
from .tradegraph import build_network, network_from_flows, read_edge_list, write_edge_list

logger = logging.getLogger("tradegrowth")

ARTIFACT_FORMAT = "tradegrowth-winner"

DEFAULTS: dict[str, Any] = {
    "trade_records": None,
    "schema": None,
    "delimiter": ",",
    "indicators": None,
    "dataset": None,
    "sections": None,
    "period_range": None,
    "granularity": "quarterly",
    "grid": None,
    "folds": 10,
    "fold_strategy": "kfold",
    "seed": 0,
    "horizon": 1,
    "out": "out",
    "race": {"min_resamples": 4, "alpha": 0.05},
    "pipeline": {"corr_threshold": 0.9, "freq_cut": 100.0, "knn_k": 5},
    "panel": {"include_global": True, "include_node": True, "growth_column": "gdp_growth"},
    "rank": {"top_k": 10},
    "explain": {
        "top_k": 15,
        "beeswarm_top_k": 20,
        "dependence_features": 5,
        "method": "auto",
        "n_permutations": 200,
        "background_size": 100,
        "max_rows": 200,
    },
}
PATH_KEYS = ("trade_records", "schema", "indicators", "dataset", "grid")


class ConfigError(Exception):
    """Bad usage or configuration (exit code 2)."""


class RunFailure(Exception):
    """Runtime failure (exit code 1)."""


# ---------------------------------------------------------------------------
# config

def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where}{k!r} must be an object")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def load_config(path: str | None, overrides: dict) -> dict:
    raw: dict = {}
    base_dir = Path.cwd()
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        base_dir = p.resolve().parent
    cfg = _merge(DEFAULTS, raw)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    for key in PATH_KEYS:
        if isinstance(cfg[key], str):
            cfg[key] = str((base_dir / cfg[key]).resolve()) if not os.path.isabs(cfg[key]) else cfg[key]
    if path and not os.path.isabs(cfg["out"]) and overrides.get("out") is None:
        cfg["out"] = str((base_dir / cfg["out"]).resolve())
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    if cfg["granularity"] not in GRANULARITIES:
        raise ConfigError(f"granularity must be one of {GRANULARITIES}")
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    if cfg["sections"] is not None:
        if not all(isinstance(s, int) and 1 <= s <= 21 for s in cfg["sections"]):
            raise ConfigError("sections must be HS section numbers 1..21")
    pr = cfg["period_range"]
    if pr is not None and (len(pr) != 2 or int(pr[0]) > int(pr[1])):
        raise ConfigError("period_range must be [first_year, last_year]")
    if cfg["fold_strategy"] not in ("kfold", "year"):
        raise ConfigError("fold_strategy must be 'kfold' or 'year'")
    if not isinstance(cfg["folds"], int) or cfg["folds"] < 2:
        raise ConfigError("folds must be an integer >= 2")


def _need_file(cfg: dict, key: str) -> Path:
    value = cfg.get(key)
    if not value:
        raise ConfigError(f"config lacks {key!r}")
    p = Path(value)
    if not p.is_file():
        raise ConfigError(f"{key} not found: {value}")
    return p


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _canonical(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# output staging

class Outputs:
    """Files staged in memory, committed atomically with a manifest."""

    def __init__(self, root: Path, command: str, cfg: dict):
        self.root = root
        self.command = command
        self.cfg = cfg
        self.files: dict[str, bytes] = {}
        self.inputs: dict[str, str] = {}

    def text(self, rel: str, content: str) -> None:
        self.files[rel] = content.encode("utf-8")

    def frame(self, rel: str, df: pd.DataFrame) -> None:
        buf = io.StringIO()
        df.to_csv(buf, index=False, float_format="%.17g", lineterminator="\n", na_rep="")
        self.text(rel, buf.getvalue())

    def record_input(self, path: Path) -> None:
        self.inputs[str(path)] = _sha256(path.read_bytes())

    def manifest(self) -> str:
        doc = {
            "command": self.command,
            "config_sha256": _sha256(_canonical(self.cfg).encode()),
            "config": self.cfg,
            "seed": self.cfg["seed"],
            "versions": {
                "tradegrowth": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "pandas": pd.__version__,
            },
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {k: _sha256(v) for k, v in sorted(self.files.items())},
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def commit(self) -> None:
        self.text("manifest.json", self.manifest())
        for rel, data in sorted(self.files.items(), key=lambda kv: kv[0] == "manifest.json"):
            target = self.root / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, target)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise


# ---------------------------------------------------------------------------
# shared loading

def _load_records(cfg: dict, out: Outputs):
    path = _need_file(cfg, "trade_records")
    schema = cfg["schema"]
    if schema is None:
        schema = {f: f for f in REQUIRED_FIELDS}
    elif isinstance(schema, str):
        if not Path(schema).is_file():
            raise ConfigError(f"schema not found: {schema}")
        schema = load_schema(schema)
    out.record_input(path)
    with open(path, encoding="utf-8", newline="") as fh:
        try:
            parsed = parse_records(fh, schema, cfg["delimiter"])
        except SchemaError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if parsed.errors:
        shown = "; ".join(f"{path}:{e.line}: {e.message}" for e in parsed.errors[:10])
        more = f" (+{len(parsed.errors) - 10} more)" if len(parsed.errors) > 10 else ""
        raise RunFailure(f"{len(parsed.errors)} malformed record(s): {shown}{more}")
    records = parsed.records
    if cfg["period_range"] is not None:
        lo, hi = (int(v) for v in cfg["period_range"])
        records = [r for r in records if lo <= int(r.period[:4]) <= hi]
    if not records:
        raise RunFailure("no trade records within the configured period range")
    return records


def _edge_name(section: int, period: str) -> str:
    return f"edges/section{section:02d}_{period}.txt"


def _load_dataset(cfg: dict, out: Outputs, root: Path):
    path = Path(cfg["dataset"]) if cfg["dataset"] else root / "panel" / "dataset.csv"
    if not path.is_file():
        raise ConfigError(f"dataset not found: {path} (run 'panel' first or set 'dataset')")
    out.record_input(path)
    return read_dataset(str(path))


# ---------------------------------------------------------------------------
# commands

def cmd_build_networks(cfg: dict, args) -> Outputs:
    root = Path(cfg["out"])
    out = Outputs(root / "networks", "build-networks", cfg)
    records = _load_records(cfg, out)
    table = build_flow_table(records, cfg["granularity"])
    sections = cfg["sections"] or table.sections()
    missing = [s for s in sections if s not in table.sections()]
    if missing:
        logger.warning("no flows for section(s) %s", missing)

    tables = []
    for s in sections:
        for p in table.periods(s):
            net = build_network(table, s, p)
            buf = io.StringIO()
            write_edge_list(net, buf)
            out.text(_edge_name(s, p), buf.getvalue())
            tables.append(compute_metrics(net, seed=cfg["seed"]))
    for s, frame in series_from_tables(tables).items():
        out.frame(f"metrics/section{s:02d}.csv", frame)

    shares = section_relevance(table)
    per_section = {s: 0.0 for s in shares}
    for (_, _, s, _), v in table.entries.items():
        per_section[s] += v
    rel = pd.DataFrame({
        "section": list(shares),
        "name": [SECTION_NAMES.get(s, "") for s in shares],
        "value": [per_section[s] for s in shares],
        "share_percent": list(shares.values()),
    }).sort_values(["share_percent", "section"], ascending=[False, True], kind="stable")
    out.frame("relevance.csv", rel)
    buf = io.StringIO()
    write_flow_table(table, buf)
    out.text("flows.csv", buf.getvalue())
    return out


def cmd_rank(cfg: dict, args) -> Outputs:
    root = Path(cfg["out"])
    edge_dir = root / "networks" / "edges"
    if not edge_dir.is_dir():
        raise ConfigError(f"no networks under {edge_dir}; run build-networks first")
    prefix = f"section{args.section:02d}_{args.year}"
    files = sorted(edge_dir.glob(f"{prefix}*.txt"), key=lambda p: period_sort_key(p.stem.split("_", 1)[1]))
    if not files:
        raise ConfigError(f"no network for section {args.section}, year {args.year}")
    top_k = args.top_k or cfg["rank"]["top_k"]
    out = Outputs(root / "rankings", "rank", cfg)
    flows: dict[tuple[str, str], float] = {}
    for f in files:
        out.record_input(f)
        with open(f, encoding="utf-8") as fh:
            net = read_edge_list(fh, args.section, f.stem.split("_", 1)[1])
        for (i, j), v in net.edges.items():
            key = (net.nodes[i], net.nodes[j])
            flows[key] = flows.get(key, 0.0) + v
    annual = network_from_flows(flows, args.section, str(args.year))
    buf = io.StringIO()
    centrality_ranking(annual, top_k).write(buf)
    out.text(f"section{args.section:02d}_{args.year}.csv", buf.getvalue())
    return out


def cmd_panel(cfg: dict, args) -> Outputs:
    root = Path(cfg["out"])
    out = Outputs(root / "panel", "panel", cfg)
    ind_path = _need_file(cfg, "indicators")
    records = _load_records(cfg, out)
    out.record_input(ind_path)
    indicators = pd.read_csv(ind_path, dtype={"country": str})
    table = build_flow_table(records, "annual")
    sections = tuple(cfg["sections"] or DEFAULT_SECTIONS)
    tables = [compute_metrics(build_network(table, s, p), seed=cfg["seed"])
              for s in sections if s in table.sections() for p in table.periods(s)]
    pc = PanelConfig(sections=sections, **cfg["panel"])
    try:
        panel = assemble_panel(indicators, tables, pc)
        ds = align_target(panel, cfg["horizon"], pc.growth_column)
    except ValueError as exc:
        raise RunFailure(str(exc)) from exc
    buf = io.StringIO()
    write_panel(panel, buf)
    out.text("panel.csv", buf.getvalue())
    buf = io.StringIO()
    write_dataset(ds, buf)
    out.text("dataset.csv", buf.getvalue())
    return out


def _grid(cfg: dict, n_features: int) -> dict:
    if cfg["grid"] is None:
        grid = default_grid(n_features)
    else:
        path = _need_file(cfg, "grid")
        try:
            grid = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    try:
        validate_grid(grid)
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc
    return grid


def cmd_race(cfg: dict, args) -> Outputs:
    root = Path(cfg["out"])
    out = Outputs(root / "race", "race", cfg)
    if cfg["grid"] is not None:
        _grid(cfg, 1)  # fail on a bad grid before touching the data
    ds = _load_dataset(cfg, out, root)
    grid = _grid(cfg, ds.X.shape[1])
    if cfg["grid"] is not None:
        out.record_input(Path(cfg["grid"]))
    seed = cfg["seed"]
    try:
        if cfg["fold_strategy"] == "kfold":
            folds = kfold_split(len(ds.y), cfg["folds"], seed)
        else:
            folds = year_blocked_split([t for _, t in ds.labels], cfg["folds"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    pipeline = PipelineConfig(**cfg["pipeline"])
    ev = FoldEvaluator(ds, folds, pipeline, seed=seed, n_jobs=args.jobs)
    try:
        tuned = adaptive_race(ev, grid, RaceConfig(**cfg["race"]))
    except (ValueError, RaceError) as exc:
        raise RunFailure(str(exc)) from exc
    # a family with no working configuration enters the race as a recorded failure
    specs = [tuned[f].best or ModelSpec(f, grid[f][0]) for f in grid]
    if len(specs) < 2:
        raise RunFailure("the race needs at least 2 model families")
    try:
        result = horse_race(ev, specs)
    except RaceError as exc:
        raise RunFailure(str(exc)) from exc

    buf = io.StringIO()
    write_leaderboard(result, buf)
    out.text("leaderboard.csv", buf.getvalue())

    rows = []
    for family, tr in tuned.items():
        for c in grid[family]:
            key = ModelSpec(family, c).key()
            rows.append({
                "family": family,
                "params": json.dumps(c, sort_keys=True),
                "mean_rmse": tr.mean_rmse.get(key, np.nan),
                "folds_completed": tr.folds_completed.get(key, 0),
                "status": "failed" if key in tr.failed else
                          f"eliminated@{tr.eliminated[key]}" if key in tr.eliminated else
                          "best" if tr.best is not None and key == tr.best.key() else "survived",
            })
    out.frame("tuning.csv", pd.DataFrame(rows))

    fold_rows = []
    for m in result.models:
        if m.error is not None:
            fold_rows.append({"model": m.label, "fold": "", "error": m.error})
            continue
        for f in range(ev.k):
            fold_rows.append({"model": m.label, "fold": f, **{k: v[f] for k, v in m.fold_scores.items()}})
    out.frame("fold_scores.csv", pd.DataFrame(fold_rows))
    out.frame("folds.csv", pd.DataFrame({
        "country": [c for c, _ in ds.labels], "target_year": [t for _, t in ds.labels], "fold": folds}))

    # winner refit on every row, pipeline included
    fp = fit_pipeline(ds.X, ds.kinds, pipeline)
    model = fit(result.winner.spec, apply_pipeline(fp, ds.X), ds.y, seed=seed, feature_names=fp.output_features,
                n_jobs=args.jobs)
    artifact = {
        "format": ARTIFACT_FORMAT,
        "version": 1,
        "label": result.winner.label,
        "spec": result.winner.spec.to_dict(),
        "pipeline": json.loads(fp.to_json()),
        "model": json.loads(dumps(model)),
    }
    out.text("winner.json", json.dumps(artifact, indent=1, sort_keys=True) + "\n")
    logger.info("winner: %s (mean RMSE %.4f)", result.winner.label, result.winner.mean("rmse"))
    return out


def load_artifact(path: Path):
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model artifact {path}: {exc}") from exc
    if doc.get("format") != ARTIFACT_FORMAT:
        raise ConfigError(f"{path} is not a model artifact")
    fp = FittedPipeline.from_json(json.dumps(doc["pipeline"]))
    model = loads(json.dumps(doc["model"]))
    return doc["label"], fp, model


def cmd_explain(cfg: dict, args) -> Outputs:
    root = Path(cfg["out"])
    out = Outputs(root / "explain", "explain", cfg)
    model_path = Path(args.model) if args.model else root / "race" / "winner.json"
    if not model_path.is_file():
        raise ConfigError(f"model artifact not found: {model_path}")
    out.record_input(model_path)
    label, fp, model = load_artifact(model_path)
    ds = _load_dataset(cfg, out, root)
    absent = [f for f in fp.input_features if f not in ds.X.columns]
    if absent:
        raise RunFailure(f"dataset lacks model feature(s): {', '.join(absent)}")
    M = apply_pipeline(fp, ds.X)
    if M.shape[1] != model.n_features:
        raise RunFailure(f"pipeline yields {M.shape[1]} features, model expects {model.n_features}")

    ex = cfg["explain"]
    seed = cfg["seed"]
    rows = np.arange(len(M))
    if ex["max_rows"] and len(M) > ex["max_rows"]:
        rows = np.sort(np.random.default_rng([seed, 1]).choice(len(M), ex["max_rows"], replace=False))
    background = sample_background(M, ex["background_size"], seed)
    names = list(model.feature_names)
    sm = explain(model, M[rows], background, names, ex["method"], ex["n_permutations"], seed, args.jobs)

    out.frame("importance.csv", importance_table(sm, min(ex["top_k"], len(names)), label))
    bees = beeswarm_export(sm, M[rows], min(ex["beeswarm_top_k"], len(names)))
    bees["observation"] = rows[bees["observation"].to_numpy()]
    out.frame("beeswarm.csv", bees)
    ranked = importance_table(sm, min(ex["dependence_features"], len(names)), label)
    for feat in ranked["feature"]:
        dep = dependence_export(sm, M[rows], feat)
        dep["observation"] = rows[dep["observation"].to_numpy()]
        out.frame(f"dependence/{feat}.csv", dep[["observation", "standardized_feature_value", "shap_value"]])
    summary = pd.DataFrame({"base_value": [sm.base_value], "n_observations": [len(rows)],
                            "n_background": [len(background)], "method": [ex["method"]], "model": [label]})
    out.frame("summary.csv", summary)
    return out


COMMANDS = {
    "build-networks": cmd_build_networks,
    "rank": cmd_rank,
    "panel": cmd_panel,
    "race": cmd_race,
    "explain": cmd_explain,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON run config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the config seed")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker threads (results do not depend on it)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="tradegrowth", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("build-networks", parents=[common], help="reconcile records, build networks and metric series")
    p = sub.add_parser("rank", parents=[common], help="top-k import-oriented PageRank table for one section-year")
    p.add_argument("--section", type=int, required=True)
    p.add_argument("--year", type=int, required=True)
    p.add_argument("--top-k", type=int, default=None)
    sub.add_parser("panel", parents=[common], help="assemble the country-year panel and growth targets")
    sub.add_parser("race", parents=[common], help="tune, race and serialize the winning model")
    p = sub.add_parser("explain", parents=[common], help="Shapley importance, beeswarm and dependence exports")
    p.add_argument("--model", default=None, help="model artifact (default: <out>/race/winner.json)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    verbose = getattr(args, "verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args.jobs = max(1, getattr(args, "jobs", 1))
    try:
        overrides = {"seed": getattr(args, "seed", None), "out": getattr(args, "out", None)}
        cfg = load_config(getattr(args, "config", None), overrides)
        outputs = COMMANDS[args.command](cfg, args)
        outputs.commit()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RunFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.debug("unhandled failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
