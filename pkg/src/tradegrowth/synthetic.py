"""Seeded synthetic inputs: trade records, indicator tables and a nonlinear benchmark panel."""
from __future__ import annotations

import csv
import io

import numpy as np
import pandas as pd

from .panel import SupervisedDataset


def nonlinear_dataset(n: int = 2000, n_signal: int = 10, n_noise: int = 40, noise_sd: float = 0.5,
                      seed: int = 0) -> SupervisedDataset:
    """Regression benchmark with interaction and threshold structure.

    The first ``n_signal`` columns drive the target through a mix of
    step functions, products of steps, a gated slope and one linear
    term; the remaining ``n_noise`` columns are independent noise.
    """
    if n_signal < 10:
        raise ValueError("the benchmark needs at least 10 signal features")
    rng = np.random.default_rng(seed)
    p = n_signal + n_noise
    X = rng.uniform(-2.0, 2.0, size=(n, p))
    s = X[:, :n_signal]
    y = (
        3.0 * (s[:, 0] > 0.5)
        - 2.5 * (s[:, 1] < -0.8)
        + 2.0 * (s[:, 2] > 0) * (s[:, 3] > 0)
        + np.where(s[:, 4] > 1.0, 2.0, -0.5)
        + 1.5 * (s[:, 5] > 0) * s[:, 6]
        + 2.0 * (s[:, 7] > 0) * (s[:, 8] < 0.5)
        + s[:, 9]
        + noise_sd * rng.normal(size=n)
    )
    cols = [f"sig{j:02d}" for j in range(n_signal)] + [f"noise{j:02d}" for j in range(n_noise)]
    frame = pd.DataFrame(X, columns=cols)
    labels = [(f"obs{i:05d}", 2000 + i % 20) for i in range(n)]
    return SupervisedDataset(frame, y, labels, {c: "numeric" for c in cols})


def country_codes(n: int) -> list[str]:
    letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    return [letters[i // 26 % 26] + letters[i % 26] + "X" for i in range(n)]


def trade_records_csv(n_countries: int = 8, sections=(16, 5), years=(2010, 2011), density: float = 0.5,
                      seed: int = 0, dual_share: float = 0.5, reexport_share: float = 0.05) -> str:
    """Monthly bilateral records in the default column layout.

    Each active flow is reported by its exporter, its importer or both
    (with a perturbed value); a few re-export rows are sprinkled in.
    """
    rng = np.random.default_rng(seed)
    codes = country_codes(n_countries)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["reporter", "partner", "direction", "section", "period", "value"])
    for sec in sections:
        scale = rng.uniform(1.0, 10.0)
        for year in years:
            for month in range(1, 13):
                period = f"{year}-{month:02d}"
                for o in codes:
                    for d in codes:
                        if o == d or rng.random() >= density:
                            continue
                        v = round(float(scale * rng.lognormal(10.0, 1.0)), 2)
                        u = rng.random()
                        if u < dual_share:
                            w.writerow([o, d, "X", sec, period, v])
                            w.writerow([d, o, "M", sec, period, round(v * rng.uniform(0.9, 1.1), 2)])
                        elif u < (1 + dual_share) / 2:
                            w.writerow([o, d, "X", sec, period, v])
                        else:
                            w.writerow([d, o, "M", sec, period, v])
                        if rng.random() < reexport_share:
                            w.writerow([o, d, "RX", sec, period, round(v * 0.1, 2)])
    return buf.getvalue()


def indicator_table(countries: list[str], years, seed: int = 0) -> pd.DataFrame:
    """Country-year macro indicators with a persistent growth process."""
    rng = np.random.default_rng(seed)
    rows = []
    for c in countries:
        g = rng.normal(2.0, 1.5)
        level = rng.uniform(5.0, 50.0)
        region = ["north", "south", "east"][int(rng.integers(3))]
        for y in years:
            g = 0.5 * g + 1.0 + rng.normal(0.0, 1.0)
            level *= 1 + g / 100
            rows.append({
                "country": c,
                "year": int(y),
                "gdp_growth": round(float(g), 6),
                "gdp_per_capita": round(float(level), 6),
                "inflation": round(float(rng.gamma(2.0, 1.5)), 6),
                "region": region,
            })
    return pd.DataFrame(rows)
