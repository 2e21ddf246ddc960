"""Country-year feature panel and next-year growth targets."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np
import pandas as pd

from .netmetrics import GLOBAL_METRICS, NODE_METRICS, MetricTable

KEY_COLUMNS = ("country", "year")
DEFAULT_SECTIONS = (16, 5, 17, 6, 15)

SECTION_SLUGS = {
    16: "mech_elec",
    5: "mineral",
    17: "transport",
    6: "chemical",
    15: "base_metals",
    7: "plastics",
    11: "textile",
    14: "precious_metals",
    18: "instruments",
    4: "beverages",
}


def section_slug(section: int) -> str:
    return SECTION_SLUGS.get(section, f"s{section:02d}")


@dataclass
class PanelConfig:
    sections: tuple[int, ...] = DEFAULT_SECTIONS
    global_metrics: tuple[str, ...] = GLOBAL_METRICS
    node_metrics: tuple[str, ...] = NODE_METRICS
    include_global: bool = True
    include_node: bool = True
    growth_column: str = "gdp_growth"

    def __post_init__(self):
        self.sections = tuple(int(s) for s in self.sections)
        bad = set(self.global_metrics) - set(GLOBAL_METRICS) | set(self.node_metrics) - set(NODE_METRICS)
        if bad:
            raise ValueError(f"unknown metric(s): {sorted(bad)}")


@dataclass
class FeaturePanel:
    """Rows keyed by (country, year); missing values are NaN, never 0."""

    frame: pd.DataFrame
    feature_names: list[str]
    kinds: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.kinds:
            self.kinds = {f: _kind(self.frame[f]) for f in self.feature_names}


@dataclass
class SupervisedDataset:
    X: pd.DataFrame
    y: np.ndarray
    labels: list[tuple[str, int]]
    kinds: dict[str, str]

    def __post_init__(self):
        if len(self.X) != len(self.y):
            raise ValueError("X and y lengths differ")

    @property
    def feature_names(self) -> list[str]:
        return list(self.X.columns)


def _kind(col: pd.Series) -> str:
    return "numeric" if pd.api.types.is_numeric_dtype(col) and not pd.api.types.is_bool_dtype(col) else "nominal"


def assemble_panel(indicators: pd.DataFrame, metrics: Iterable[MetricTable], config: PanelConfig | None = None) -> FeaturePanel:
    """Join country indicators with annual network features.

    Global metrics of a section are replicated across every country of that
    year.  Node metrics are those of the country itself; a country absent
    from the section's network that year gets missing values.
    """
    config = config or PanelConfig()
    for key in KEY_COLUMNS:
        if key not in indicators.columns:
            raise ValueError(f"indicator table lacks {key!r} column")
    if config.growth_column not in indicators.columns:
        raise ValueError(f"indicator table lacks growth column {config.growth_column!r}")

    by_section: dict[int, dict[int, MetricTable]] = {}
    for t in metrics:
        by_section.setdefault(t.section, {})[int(str(t.period)[:4])] = t
    for s in config.sections:
        if not 1 <= s <= 21:
            raise ValueError(f"unknown HS section {s}")
        if s not in by_section:
            raise ValueError(f"no network metrics for section {s}")

    frame = indicators.copy()
    frame["country"] = frame["country"].astype(str)
    frame["year"] = frame["year"].astype(int)
    if frame.duplicated(list(KEY_COLUMNS)).any():
        raise ValueError("duplicate (country, year) rows in indicator table")
    frame = frame.sort_values(list(KEY_COLUMNS), kind="stable").reset_index(drop=True)

    new_cols: dict[str, list[float]] = {}
    for s in config.sections:
        slug = section_slug(s)
        tables = by_section[s]
        if config.include_global:
            for name in config.global_metrics:
                new_cols[f"{slug}_{name}"] = [
                    getattr(tables[y].global_metrics, name) if y in tables else np.nan
                    for y in frame["year"]
                ]
        if config.include_node:
            for name in config.node_metrics:
                vals = []
                for c, y in zip(frame["country"], frame["year"]):
                    node = tables[y].nodes.get(c) if y in tables else None
                    vals.append(getattr(node, name) if node is not None else np.nan)
                new_cols[f"{slug}_{name}"] = vals
    frame = pd.concat([frame, pd.DataFrame(new_cols, index=frame.index, dtype=float)], axis=1)

    features = [c for c in frame.columns if c not in ("country",)]
    return FeaturePanel(frame, features)


def align_target(panel: FeaturePanel, horizon: int = 1, growth_column: str = "gdp_growth") -> SupervisedDataset:
    """Pair predictors from year T - horizon with growth at T.

    The growth column in X is the latest observed growth (year T - horizon);
    an extra ``<growth>_lag<h+1>`` column carries growth one year earlier and
    stays missing when unobserved.  Rows without a target or without the
    latest growth are dropped.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    frame = panel.frame
    if growth_column not in frame.columns:
        raise ValueError(f"panel lacks growth column {growth_column!r}")
    lag_name = f"{growth_column}_lag{horizon + 1}"
    growth = {
        (c, int(y)): g for c, y, g in zip(frame["country"], frame["year"], frame[growth_column])
    }

    rows, targets, labels = [], [], []
    for idx, (c, y) in enumerate(zip(frame["country"], frame["year"])):
        target_year = int(y) + horizon
        target = growth.get((c, target_year), np.nan)
        current = growth[(c, int(y))]
        if np.isnan(target) or np.isnan(current):
            continue
        rows.append(idx)
        targets.append(target)
        labels.append((c, target_year))

    X = frame.loc[rows, panel.feature_names].reset_index(drop=True)
    X[lag_name] = [growth.get((c, t - horizon - 1), np.nan) for c, t in labels]
    kinds = {**panel.kinds, lag_name: "numeric"}
    return SupervisedDataset(X, np.asarray(targets, dtype=float), labels, kinds)


def write_panel(panel: FeaturePanel, fh: IO[str]) -> None:
    panel.frame[["country", *panel.feature_names]].to_csv(fh, index=False, na_rep="", float_format="%.17g", lineterminator="\n")


def read_panel(fh: IO[str] | str) -> FeaturePanel:
    frame = pd.read_csv(fh, keep_default_na=False, na_values=[""], dtype={"country": str})
    if "country" not in frame.columns or "year" not in frame.columns:
        raise ValueError("panel file must have 'country' and 'year' columns")
    return FeaturePanel(frame, [c for c in frame.columns if c != "country"])


def write_dataset(ds: SupervisedDataset, fh: IO[str], target_name: str = "target") -> None:
    out = ds.X.copy()
    out.insert(0, "target_year", [t for _, t in ds.labels])
    out.insert(0, "country", [c for c, _ in ds.labels])
    out[target_name] = ds.y
    out.to_csv(fh, index=False, na_rep="", float_format="%.17g", lineterminator="\n")


def read_dataset(fh: IO[str] | str, target_name: str = "target") -> SupervisedDataset:
    """Inverse of :func:`write_dataset`."""
    frame = pd.read_csv(fh, keep_default_na=False, na_values=[""], dtype={"country": str})
    for col in ("country", "target_year", target_name):
        if col not in frame.columns:
            raise ValueError(f"dataset file lacks {col!r} column")
    labels = [(str(c), int(t)) for c, t in zip(frame["country"], frame["target_year"])]
    y = frame[target_name].to_numpy(dtype=float)
    X = frame.drop(columns=["country", "target_year", target_name])
    return SupervisedDataset(X, y, labels, {c: _kind(X[c]) for c in X.columns})
