"""Spread panels and return panels.

A spread panel is a dense date-by-issuer grid of CDS spread quotes in
basis points. Return panels hold log-returns of the spread level at a
chosen sampling resolution and may be standardized column by column to
zero mean and unit variance (population convention, 1/T).
"""
from __future__ import annotations

import csv
import datetime as dt
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyPanelError, PanelFormatError, ZeroVarianceError

# Canonical sampling resolutions, in trading days.
RESOLUTION_STEPS = {"1d": 1, "2d": 2, "1w": 5, "2w": 10, "1m": 21}

KNOWN_REGIONS = frozenset({
    "Africa", "Asia", "Eastern Europe", "Europe", "India", "Latin America",
    "Middle East", "North America", "Oceania",
})
KNOWN_SECTORS = frozenset({
    "Basic Materials", "Consumer Goods", "Consumer Services", "Energy",
    "Financials", "Government", "Health Care", "Industrials", "Technology",
    "Telecommunications Services", "Utilities",
})
KNOWN_RATINGS = ("AAA", "AA", "A", "BBB", "BB", "B", "CCC/C")

_VAR_FLOOR = 1e-300


@dataclass(frozen=True)
class Resolution:
    """Sampling step in trading days (1 = daily, 5 = weekly, 21 = monthly)."""

    step: int

    def __post_init__(self):
        if self.step not in RESOLUTION_STEPS.values():
            raise ValueError(
                f"resolution step must be one of "
                f"{sorted(RESOLUTION_STEPS.values())}, got {self.step}"
            )

    @classmethod
    def parse(cls, value: "Resolution | int | str") -> "Resolution":
        if isinstance(value, Resolution):
            return value
        if isinstance(value, str):
            key = value.strip().lower()
            if key in RESOLUTION_STEPS:
                return cls(RESOLUTION_STEPS[key])
            try:
                return cls(int(key))
            except ValueError:
                raise ValueError(
                    f"unknown resolution {value!r}; expected one of "
                    f"{sorted(RESOLUTION_STEPS)} or an integer step"
                ) from None
        return cls(int(value))

    @property
    def label(self) -> str:
        for name, step in RESOLUTION_STEPS.items():
            if step == self.step:
                return name
        return f"{self.step}d"


CANONICAL_RESOLUTIONS = tuple(Resolution(s) for s in RESOLUTION_STEPS.values())


@dataclass(frozen=True)
class IssuerMeta:
    """Static metadata attached to one issuer."""

    region: str | None = None
    sector: str | None = None
    rating: str | None = None


@dataclass
class LoadReport:
    """What happened during ingestion: drops and vocabulary flags."""

    dropped: list[tuple[str, str]] = field(default_factory=list)
    unknown_labels: list[tuple[str, str, str]] = field(default_factory=list)
    filled_gaps: int = 0

    def dropped_ids(self) -> list[str]:
        return [issuer for issuer, _ in self.dropped]


def _validate_axes(dates, ids, values, what):
    if values.ndim != 2:
        raise ValueError(f"{what} values must be 2-dimensional, got {values.ndim}")
    if len(dates) != values.shape[0]:
        raise ValueError(
            f"{what} has {len(dates)} dates but {values.shape[0]} rows"
        )
    if len(ids) != values.shape[1]:
        raise ValueError(
            f"{what} has {len(ids)} issuers but {values.shape[1]} columns"
        )
    if len(set(ids)) != len(ids):
        raise ValueError(f"{what} issuer ids are not unique")
    for i in range(1, len(dates)):
        if dates[i] <= dates[i - 1]:
            raise ValueError(
                f"{what} dates are not strictly increasing at position {i}: "
                f"{dates[i - 1]} followed by {dates[i]}"
            )


@dataclass
class SpreadPanel:
    """Dense panel of positive spread levels (basis points).

    The grid holds one column per issuer and one strictly increasing date
    per row. Missing observations are only permitted transiently during
    ingestion; a constructed panel is fully observed.
    """

    dates: list[dt.date]
    issuers: list[str]
    values: np.ndarray
    meta: dict[str, IssuerMeta] = field(default_factory=dict)
    load_report: LoadReport | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        _validate_axes(self.dates, self.issuers, self.values, "spread panel")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("spread panel contains non-finite values")
        if np.any(self.values <= 0):
            raise ValueError("spread panel contains non-positive values")

    @property
    def n_dates(self) -> int:
        return self.values.shape[0]

    @property
    def n_issuers(self) -> int:
        return self.values.shape[1]


@dataclass
class ReturnPanel:
    """Panel of log-returns, optionally standardized per column.

    ``dates[t]`` is the end date of the interval that produced row ``t``.
    When ``standardized`` is true every column has mean 0 and variance 1
    under the population (1/T) convention.
    """

    dates: list[dt.date]
    issuers: list[str]
    returns: np.ndarray
    resolution: Resolution = Resolution(1)
    standardized: bool = False
    meta: dict[str, IssuerMeta] = field(default_factory=dict)

    def __post_init__(self):
        self.returns = np.asarray(self.returns, dtype=float)
        _validate_axes(self.dates, self.issuers, self.returns, "return panel")
        if not np.all(np.isfinite(self.returns)):
            raise ValueError("return panel contains non-finite values")

    @property
    def n_obs(self) -> int:
        return self.returns.shape[0]

    @property
    def n_series(self) -> int:
        return self.returns.shape[1]

    def restrict(self, columns: np.ndarray) -> "ReturnPanel":
        """Panel restricted to the given column indices, order preserved."""
        cols = np.asarray(columns, dtype=int)
        ids = [self.issuers[j] for j in cols]
        return ReturnPanel(
            dates=list(self.dates),
            issuers=ids,
            returns=self.returns[:, cols].copy(),
            resolution=self.resolution,
            standardized=self.standardized,
            meta={i: self.meta[i] for i in ids if i in self.meta},
        )


def _parse_date(text: str, row: int) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise PanelFormatError(f"row {row}: invalid ISO date {text!r}") from None


def read_meta(path) -> dict[str, IssuerMeta]:
    """Parse an issuer metadata file on its own (vocabulary flags dropped)."""
    return _read_meta(path, LoadReport())


def _read_meta(path, report: LoadReport) -> dict[str, IssuerMeta]:
    meta: dict[str, IssuerMeta] = {}
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise PanelFormatError(f"metadata file {path} is empty")
        cols = [h.strip() for h in header]
        required = ["issuer_id", "region", "sector"]
        for name in required:
            if name not in cols:
                raise PanelFormatError(
                    f"metadata file {path} is missing column {name!r}"
                )
        idx = {name: cols.index(name) for name in cols}
        has_rating = "rating" in idx
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(cols):
                raise PanelFormatError(
                    f"metadata row {row_no}: expected {len(cols)} fields, got {len(row)}"
                )
            issuer = row[idx["issuer_id"]].strip()
            region = row[idx["region"]].strip()
            sector = row[idx["sector"]].strip()
            rating = row[idx["rating"]].strip() if has_rating else ""
            if region and region not in KNOWN_REGIONS:
                report.unknown_labels.append((issuer, "region", region))
            if sector and sector not in KNOWN_SECTORS:
                report.unknown_labels.append((issuer, "sector", sector))
            if rating and rating not in KNOWN_RATINGS:
                report.unknown_labels.append((issuer, "rating", rating))
            meta[issuer] = IssuerMeta(
                region=region or None,
                sector=sector or None,
                rating=rating or None,
            )
    return meta


def load_panel(
    path,
    meta_path=None,
    *,
    max_missing_frac: float = 0.10,
    max_fill_days: int = 5,
) -> SpreadPanel:
    """Ingest a long-format spread file into a dense panel.

    The file must carry a ``date,issuer_id,spread_bps`` header and be
    sorted by date. Issuers missing more than ``max_missing_frac`` of the
    date grid are dropped; remaining interior gaps of at most
    ``max_fill_days`` consecutive days are forward filled; issuers with
    longer gaps, or gaps before their first quote, are dropped. All drops
    are listed in the attached load report.
    """
    report = LoadReport()
    rows: list[tuple[dt.date, str, float]] = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise PanelFormatError(f"spread file {path} is empty")
        expected = ["date", "issuer_id", "spread_bps"]
        if [h.strip() for h in header] != expected:
            raise PanelFormatError(
                f"spread file {path} must start with header "
                f"{','.join(expected)!r}, got {','.join(header)!r}"
            )
        last_date: dt.date | None = None
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 3:
                raise PanelFormatError(
                    f"row {row_no}: expected 3 fields, got {len(row)}"
                )
            day = _parse_date(row[0], row_no)
            if last_date is not None and day < last_date:
                raise PanelFormatError(
                    f"row {row_no}: date {day.isoformat()} is out of order "
                    f"(previous row was {last_date.isoformat()})"
                )
            last_date = day
            issuer = row[1].strip()
            if not issuer:
                raise PanelFormatError(f"row {row_no}: empty issuer_id")
            try:
                spread = float(row[2])
            except ValueError:
                raise PanelFormatError(
                    f"row {row_no}: invalid spread value {row[2]!r}"
                ) from None
            if not np.isfinite(spread) or spread <= 0:
                raise PanelFormatError(
                    f"row {row_no}: spread must be a positive number, got {row[2]!r}"
                )
            rows.append((day, issuer, spread))

    if not rows:
        raise EmptyPanelError(f"spread file {path} contains no observations")

    dates = sorted({day for day, _, _ in rows})
    issuers = sorted({issuer for _, issuer, _ in rows})
    date_pos = {day: t for t, day in enumerate(dates)}
    issuer_pos = {issuer: j for j, issuer in enumerate(issuers)}

    grid = np.full((len(dates), len(issuers)), np.nan)
    seen: set[tuple[int, int]] = set()
    for day, issuer, spread in rows:
        key = (date_pos[day], issuer_pos[issuer])
        if key in seen:
            raise PanelFormatError(
                f"duplicate observation for issuer {issuer!r} on {day.isoformat()}"
            )
        seen.add(key)
        grid[key] = spread

    keep: list[int] = []
    for j, issuer in enumerate(issuers):
        column = grid[:, j]
        missing = np.isnan(column)
        frac = missing.mean()
        if frac > max_missing_frac:
            report.dropped.append(
                (issuer, f"missing fraction {frac:.4f} exceeds {max_missing_frac}")
            )
            continue
        if missing[0]:
            report.dropped.append((issuer, "gap before first observation"))
            continue
        run = 0
        longest = 0
        for flag in missing:
            run = run + 1 if flag else 0
            longest = max(longest, run)
        if longest > max_fill_days:
            report.dropped.append(
                (issuer, f"gap of {longest} days exceeds fill limit {max_fill_days}")
            )
            continue
        if longest > 0:
            idx = np.arange(len(column))
            filled_from = np.where(missing, 0, idx)
            np.maximum.accumulate(filled_from, out=filled_from)
            grid[:, j] = column[filled_from]
            report.filled_gaps += int(missing.sum())
        keep.append(j)

    if not keep:
        raise EmptyPanelError("all issuers were dropped during ingestion")

    kept_ids = [issuers[j] for j in keep]
    values = grid[:, keep]

    meta: dict[str, IssuerMeta] = {}
    if meta_path is not None:
        all_meta = _read_meta(meta_path, report)
        meta = {i: all_meta[i] for i in kept_ids if i in all_meta}

    return SpreadPanel(
        dates=dates,
        issuers=kept_ids,
        values=values,
        meta=meta,
        load_report=report,
    )


def log_returns(panel: SpreadPanel, resolution: Resolution | int | str = 1) -> ReturnPanel:
    """Log-returns of spread levels sampled every ``resolution.step`` dates.

    The panel is subsampled at the chosen step starting from its first
    date, then differenced, so a step of 1 reproduces daily returns and
    larger steps give non-overlapping multi-day returns.
    """
    res = Resolution.parse(resolution)
    sampled = panel.values[:: res.step]
    sampled_dates = panel.dates[:: res.step]
    if sampled.shape[0] < 2:
        raise EmptyPanelError(
            f"panel with {panel.n_dates} dates yields fewer than 2 samples "
            f"at a {res.step}-day step"
        )
    returns = np.log(sampled[1:]) - np.log(sampled[:-1])
    return ReturnPanel(
        dates=list(sampled_dates[1:]),
        issuers=list(panel.issuers),
        returns=returns,
        resolution=res,
        standardized=False,
        meta=dict(panel.meta),
    )


def standardize(panel: ReturnPanel) -> ReturnPanel:
    """Center and scale each column to mean 0 and population variance 1."""
    x = panel.returns
    mean = x.mean(axis=0)
    var = ((x - mean) ** 2).mean(axis=0)
    # variance of a constant column is rounding noise, so test relatively
    floor = 1e-24 * (x**2).mean(axis=0) + _VAR_FLOOR
    dead = np.flatnonzero(var <= floor)
    if dead.size:
        raise ZeroVarianceError(panel.issuers[int(dead[0])])
    standardized = (x - mean) / np.sqrt(var)
    return replace(panel, returns=standardized, standardized=True)


def windows(panel: ReturnPanel, window_days: int) -> list[ReturnPanel]:
    """Split a panel into consecutive non-overlapping windows.

    Full windows of ``window_days`` rows are cut from the start; a
    trailing partial window is kept only when it covers at least half a
    window, otherwise it is discarded. Slices are returned unstandardized
    so that each window can be standardized on its own observations.
    """
    if window_days < 2:
        raise ValueError(f"window length must be >= 2, got {window_days}")
    total = panel.n_obs
    out: list[ReturnPanel] = []
    start = 0
    while start < total:
        stop = min(start + window_days, total)
        length = stop - start
        if length < window_days and 2 * length < window_days:
            break
        out.append(
            ReturnPanel(
                dates=list(panel.dates[start:stop]),
                issuers=list(panel.issuers),
                returns=panel.returns[start:stop].copy(),
                resolution=panel.resolution,
                standardized=False,
                meta=dict(panel.meta),
            )
        )
        start = stop
    if not out:
        warnings.warn(
            f"panel with {total} observations yields no window of length "
            f"{window_days} (shorter than half a window)",
            stacklevel=2,
        )
    return out
