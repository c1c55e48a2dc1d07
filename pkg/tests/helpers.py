"""Shared synthetic-data builders for the test suite."""
from __future__ import annotations

import csv
import datetime as dt

import numpy as np

from mesorisk.panels import Resolution, ReturnPanel


def business_days(n: int, start=dt.date(2014, 1, 6)) -> list[dt.date]:
    days = []
    d = start
    while len(days) < n:
        if d.weekday() < 5:
            days.append(d)
        d += dt.timedelta(days=1)
    return days


def panel_from_matrix(x: np.ndarray, standardized: bool = False, meta=None) -> ReturnPanel:
    t, n = x.shape
    return ReturnPanel(
        dates=business_days(t),
        issuers=[f"I{j:04d}" for j in range(n)],
        returns=np.asarray(x, dtype=float),
        resolution=Resolution.parse("1d"),
        standardized=standardized,
        meta=meta or {},
    )


def noise_panel(n: int, t: int, seed: int) -> ReturnPanel:
    rng = np.random.default_rng(seed)
    return panel_from_matrix(rng.standard_normal((t, n)))


def planted_panel(
    seed: int,
    n_groups: int = 3,
    per_group: int = 20,
    t: int = 3000,
    loading: float = 0.6,
    cross: float = -0.3,
    market: float = 0.0,
) -> tuple[ReturnPanel, np.ndarray]:
    """Group-factor panel with known membership.

    Each series is loading * f_g + sqrt(1 - loading^2) * noise; the group
    factors have pairwise correlation ``cross``. An optional market term
    is added on top of every series.
    """
    rng = np.random.default_rng(seed)
    g = np.full((n_groups, n_groups), cross)
    np.fill_diagonal(g, 1.0)
    factors = rng.standard_normal((t, n_groups)) @ np.linalg.cholesky(g).T
    labels = np.repeat(np.arange(n_groups), per_group)
    eps = rng.standard_normal((t, n_groups * per_group))
    x = loading * factors[:, labels] + np.sqrt(1.0 - loading**2) * eps
    if market:
        x = x + market * rng.standard_normal((t, 1))
    return panel_from_matrix(x), labels


def write_spread_csv(
    path,
    x: np.ndarray,
    issuers: list[str] | None = None,
    start=dt.date(2014, 1, 6),
) -> list[str]:
    """Turn a return matrix into a long-format spread file (exp of cumsum)."""
    t, n = x.shape
    issuers = issuers or [f"I{j:04d}" for j in range(n)]
    levels = 100.0 * np.exp(np.cumsum(0.01 * np.asarray(x), axis=0))
    levels = np.vstack([np.full(n, 100.0), levels])
    days = business_days(t + 1, start)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["date", "issuer_id", "spread_bps"])
        for ti, day in enumerate(days):
            for j, issuer in enumerate(issuers):
                writer.writerow([day.isoformat(), issuer, repr(float(levels[ti, j]))])
    return issuers


def write_meta_csv(path, issuers, regions=None, sectors=None, ratings=None) -> None:
    n = len(issuers)
    regions = regions or ["North America", "Europe", "Asia"]
    sectors = sectors or ["Financials", "Energy", "Industrials"]
    ratings = ratings or ["A", "BBB", "BB"]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["issuer_id", "region", "sector", "rating"])
        for j, issuer in enumerate(issuers):
            writer.writerow(
                [
                    issuer,
                    regions[j % len(regions)],
                    sectors[(j // 2) % len(sectors)],
                    ratings[j % len(ratings)],
                ]
            )
