from __future__ import annotations

import io
import math

import numpy as np
import pandas as pd
import pytest

from tradegrowth.netmetrics import compute_metrics
from tradegrowth.panel import (
    PanelConfig,
    align_target,
    assemble_panel,
    read_dataset,
    read_panel,
    section_slug,
    write_dataset,
    write_panel,
)
from tradegrowth.tradegraph import network_from_flows


def tables(section, years, flows_by_year):
    return [compute_metrics(network_from_flows(flows_by_year[y], section, str(y))) for y in years]


def indicators(countries, years, growth=None):
    rows = []
    for c in countries:
        for y in years:
            g = growth[(c, y)] if growth else float(y - 2000)
            rows.append({"country": c, "year": y, "gdp_growth": g, "openness": 1.0 + y % 3})
    return pd.DataFrame(rows)


FLOWS = {2010: {("AAA", "BBB"): 5.0, ("BBB", "CCC"): 2.0}, 2011: {("AAA", "BBB"): 6.0, ("CCC", "AAA"): 1.0}}
CFG = PanelConfig(sections=(16,))


def test_shape_and_feature_names():
    panel = assemble_panel(indicators(["AAA", "BBB"], [2010, 2011]), tables(16, [2010, 2011], FLOWS), CFG)
    assert len(panel.frame) == 4
    assert "year" in panel.feature_names
    assert "mech_elec_density" in panel.feature_names and "mech_elec_pagerank" in panel.feature_names
    assert panel.kinds["year"] == "numeric"


def test_absent_node_is_missing_marker():
    panel = assemble_panel(indicators(["AAA", "DDD"], [2010]), tables(16, [2010], FLOWS), CFG)
    f = panel.frame.set_index("country")
    assert math.isnan(f.loc["DDD", "mech_elec_in_strength"])
    assert f.loc["AAA", "mech_elec_out_strength"] == 5.0


def test_global_metric_replicated_within_year():
    panel = assemble_panel(indicators(["AAA", "BBB", "CCC"], [2010, 2011]), tables(16, [2010, 2011], FLOWS), CFG)
    per_year = panel.frame.groupby("year")["mech_elec_density"].nunique()
    assert (per_year == 1).all()


def test_unknown_or_missing_section_errors():
    ind = indicators(["AAA"], [2010])
    with pytest.raises(ValueError):
        assemble_panel(ind, tables(16, [2010], FLOWS), PanelConfig(sections=(22,)))
    with pytest.raises(ValueError):
        assemble_panel(ind, tables(16, [2010], FLOWS), PanelConfig(sections=(5,)))


def test_slug_fallback():
    assert section_slug(16) == "mech_elec"
    assert section_slug(21) == "s21"


def test_alignment_by_hand():
    growth = {("AAA", 2010): 1.0, ("AAA", 2011): 2.0, ("AAA", 2012): 3.0}
    flows = {y: FLOWS[2010] for y in (2010, 2011, 2012)}
    panel = assemble_panel(indicators(["AAA"], [2010, 2011, 2012], growth), tables(16, [2010, 2011, 2012], flows), CFG)
    ds = align_target(panel)
    assert ds.labels == [("AAA", 2011), ("AAA", 2012)]
    row = ds.X.iloc[1]
    assert ds.y[1] == 3.0 and row["gdp_growth"] == 2.0 and row["gdp_growth_lag2"] == 1.0 and row["year"] == 2011
    assert math.isnan(ds.X.iloc[0]["gdp_growth_lag2"])


def test_single_year_country_and_bad_horizon():
    panel = assemble_panel(indicators(["AAA"], [2010]), tables(16, [2010], FLOWS), CFG)
    assert len(align_target(panel).y) == 0
    with pytest.raises(ValueError):
        align_target(panel, horizon=0)


def test_row_count_and_no_leakage(rng):
    years = list(range(2010, 2016))
    countries = ["AAA", "BBB", "CCC"]
    growth = {(c, y): float(rng.normal()) for c in countries for y in years}
    for y in (2012, 2014):
        growth[("BBB", y)] = float("nan")
    flows = {y: FLOWS[2010] for y in years}
    panel = assemble_panel(indicators(countries, years, growth), tables(16, years, flows), CFG)
    ds = align_target(panel)
    expected = sum(
        1 for c in countries for y in years
        if not math.isnan(growth[(c, y)]) and not math.isnan(growth.get((c, y + 1), float("nan")))
    )
    assert len(ds.y) == expected
    assert all(ds.X["year"].to_numpy() == np.array([t for _, t in ds.labels]) - 1)


def test_panel_and_dataset_roundtrip():
    panel = assemble_panel(indicators(["AAA", "DDD"], [2010, 2011]), tables(16, [2010, 2011], FLOWS), CFG)
    buf = io.StringIO()
    write_panel(panel, buf)
    assert ",," in buf.getvalue() or buf.getvalue().count(",\n")  # missing marker is the empty field
    back = read_panel(io.StringIO(buf.getvalue()))
    pd.testing.assert_frame_equal(back.frame[panel.feature_names], panel.frame[panel.feature_names], check_dtype=False)

    ds = align_target(panel)
    buf = io.StringIO()
    write_dataset(ds, buf)
    again = read_dataset(io.StringIO(buf.getvalue()))
    assert again.labels == ds.labels and np.array_equal(again.y, ds.y)
    pd.testing.assert_frame_equal(again.X, ds.X, check_dtype=False)
