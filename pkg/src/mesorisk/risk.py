"""Portfolio default-loss simulation and loss-distribution quantiles.

Each issuer's creditworthiness is X_i = sqrt(beta_i) (alpha_i' F) +
sqrt(1 - beta_i) eps_i with F ~ N(0, Omega) and independent standard
normal idiosyncratics; default happens when X_i falls below
d_i = Phi^-1(p_i), and the path loss is L = sum_i q_i e_i Y_i. Paths are
simulated in fixed-size blocks, each drawing from an independently keyed
stream, so results are bit-identical for a given seed regardless of how
blocks are scheduled across workers.
"""
from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DataError, NumericalError
from .factors import CalibratedModel
from .rng import block_generator, block_paths, derive_seed, substream

RATING_ORDER = ("AAA", "AA", "A", "BBB", "BB", "B", "CCC/C")
ISSUER_CLASSES = ("corporate", "sovereign")

#: Annual historical default rates by rating (fractions, not percent).
_CORPORATE_RATES = {
    "AAA": 0.0000,
    "AA": 0.0002,
    "A": 0.0006,
    "BBB": 0.0017,
    "BB": 0.0065,
    "B": 0.0344,
    "CCC/C": 0.2663,
}
_SOVEREIGN_RATES = {
    "AAA": 0.0000,
    "AA": 0.0000,
    "A": 0.0000,
    "BBB": 0.0000,
    "BB": 0.0049,
    "B": 0.0282,
    "CCC/C": 0.4156,
}

_EXPOSURE_TOL = 1e-12

#: Largest indicator matrix simulate will materialize (paths times issuers).
_MAX_INDICATOR_CELLS = 200_000_000


@dataclass(frozen=True)
class RatingPDTable:
    """Default probabilities by (rating, issuer class), floored on lookup."""

    rates: dict[tuple[str, str], float]
    floor: float = 0.0003

    def __post_init__(self):
        for key, value in self.rates.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"default rate for {key} outside [0, 1]: {value}")
        if not 0.0 <= self.floor <= 1.0:
            raise ValueError(f"floor outside [0, 1]: {self.floor}")

    def lookup(self, rating: str, issuer_class: str) -> float:
        key = (rating, issuer_class)
        if key not in self.rates:
            raise DataError(
                f"no default rate for rating {rating!r}, class {issuer_class!r}"
            )
        return max(self.rates[key], self.floor)


DEFAULT_PD_TABLE = RatingPDTable(
    rates={
        **{(r, "corporate"): v for r, v in _CORPORATE_RATES.items()},
        **{(r, "sovereign"): v for r, v in _SOVEREIGN_RATES.items()},
    }
)


def pd_lookup(rating: str, issuer_class: str, table: RatingPDTable = DEFAULT_PD_TABLE) -> float:
    """Floored default probability for a rating and issuer class."""
    return table.lookup(rating, issuer_class)


def default_threshold(pd: float) -> float:
    """Creditworthiness default barrier d = Phi^-1(pd) for pd in (0, 1)."""
    if not 0.0 < pd < 1.0:
        raise ValueError(f"pd must lie strictly inside (0, 1), got {pd}")
    return float(ndtri(pd))


@dataclass(frozen=True)
class Position:
    """One portfolio line: exposure, loss given default, and default risk.

    Either ``pd`` is given directly or it resolves from ``rating`` and
    ``issuer_class`` through a rating table (with the regulatory floor).
    """

    issuer_id: str
    exposure: float
    lgd: float = 1.0
    pd: float | None = None
    rating: str | None = None
    issuer_class: str = "corporate"

    def __post_init__(self):
        if not np.isfinite(self.exposure):
            raise ValueError(f"position {self.issuer_id!r}: non-finite exposure")
        if not 0.0 <= self.lgd <= 1.0:
            raise ValueError(
                f"position {self.issuer_id!r}: lgd {self.lgd} outside [0, 1]"
            )
        if self.issuer_class not in ISSUER_CLASSES:
            raise ValueError(
                f"position {self.issuer_id!r}: issuer_class must be one of "
                f"{ISSUER_CLASSES}, got {self.issuer_class!r}"
            )
        if self.pd is None and self.rating is None:
            raise ValueError(
                f"position {self.issuer_id!r}: needs either pd or rating"
            )
        if self.pd is not None and not 0.0 < self.pd <= 1.0:
            raise ValueError(
                f"position {self.issuer_id!r}: pd {self.pd} outside (0, 1]"
            )


@dataclass
class Portfolio:
    """Validated list of positions with resolved default probabilities.

    ``kind`` is ``long_only`` (exposures positive, summing to 1) or
    ``long_short`` (exposures summing to 0); both sums are checked within
    1e-12.
    """

    positions: list[Position]
    kind: str = "long_only"
    pd_table: RatingPDTable = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.pd_table is None:
            self.pd_table = DEFAULT_PD_TABLE
        if not self.positions:
            raise ValueError("portfolio has no positions")
        if self.kind not in ("long_only", "long_short"):
            raise ValueError(
                f"kind must be 'long_only' or 'long_short', got {self.kind!r}"
            )
        exposures = np.array([p.exposure for p in self.positions])
        total = float(exposures.sum())
        if self.kind == "long_only":
            if np.any(exposures <= 0):
                raise ValueError("long-only portfolio has non-positive exposures")
            if abs(total - 1.0) > _EXPOSURE_TOL:
                raise ValueError(
                    f"long-only exposures sum to {total!r}, expected 1 within 1e-12"
                )
        else:
            if abs(total) > _EXPOSURE_TOL:
                raise ValueError(
                    f"long-short exposures sum to {total!r}, expected 0 within 1e-12"
                )
        resolved = []
        for p in self.positions:
            if p.pd is not None:
                resolved.append(p.pd)
            else:
                resolved.append(self.pd_table.lookup(p.rating, p.issuer_class))
        self.pds = np.array(resolved)

    @property
    def size(self) -> int:
        return len(self.positions)

    def weights(self) -> np.ndarray:
        """Loss weight q_i e_i per position."""
        return np.array([p.exposure * p.lgd for p in self.positions])


@dataclass
class LossDistribution:
    """Sorted sample of simulated portfolio losses."""

    losses: np.ndarray
    n_paths: int
    seed: int
    model_variant: str | None = None
    indicators: np.ndarray | None = None
    path_losses: np.ndarray | None = None

    def __post_init__(self):
        self.losses = np.asarray(self.losses, dtype=float)
        if self.losses.ndim != 1 or self.losses.shape[0] != self.n_paths:
            raise ValueError("losses must be a vector of length n_paths")
        if np.any(np.diff(self.losses) < 0):
            raise ValueError("losses must be sorted ascending")


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric square root with negative eigenvalues clipped at zero."""
    sym = (matrix + matrix.T) / 2.0
    try:
        lam, vec = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"factor covariance eigendecomposition failed: {exc}") from exc
    if lam.min() < -1e-8:
        warnings.warn(
            f"factor covariance has negative eigenvalue {lam.min():.3e}; "
            "clipped to 0",
            stacklevel=3,
        )
    lam = np.clip(lam, 0.0, None)
    return (vec * np.sqrt(lam)) @ vec.T


def simulate(
    portfolio: Portfolio,
    model: CalibratedModel,
    n_paths: int,
    seed: int = 0,
    *,
    workers: int = 1,
    return_indicators: bool = False,
) -> LossDistribution:
    """Monte Carlo default losses under a calibrated model.

    Every position's issuer must exist in the model. Paths are processed
    in fixed-size blocks whose random streams are keyed by (seed, block
    index); the block size depends only on the problem shape, so the loss
    sample is bit-identical for any ``workers`` value. Positions sharing
    identical (threshold, beta, loadings) are collapsed into issuer
    classes so the conditional default probability is computed once per
    class and path; when every member of a class carries the same loss
    weight, the class default count is drawn binomially instead of one
    uniform per position (identical loss law, far fewer draws). With
    ``return_indicators`` the per-path default indicator matrix and
    unsorted path losses are also kept (small runs only).
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    row_of = {issuer: idx for idx, issuer in enumerate(model.issuers)}
    rows = []
    for p in portfolio.positions:
        if p.issuer_id not in row_of:
            raise DataError(
                f"portfolio issuer {p.issuer_id!r} is not in the calibrated model"
            )
        rows.append(row_of[p.issuer_id])
    rows = np.asarray(rows, dtype=int)
    m = portfolio.size
    if return_indicators and n_paths * m > _MAX_INDICATOR_CELLS:
        raise ValueError(
            f"indicator matrix of {n_paths} x {m} cells is too large; "
            "reduce n_paths or drop return_indicators"
        )

    pds = portfolio.pds
    thresholds = np.where(pds >= 1.0, np.inf, ndtri(np.clip(pds, 1e-300, 1.0 - 1e-17)))
    beta = model.beta[rows]
    alpha = model.alpha[rows]
    weights = portfolio.weights()

    sqrt_omega = _psd_sqrt(model.omega)

    signature = np.column_stack([thresholds, beta, alpha])
    classes, class_of = np.unique(signature, axis=0, return_inverse=True)
    class_of = np.asarray(class_of).ravel()
    d_c = classes[:, 0]
    beta_c = classes[:, 1]
    alpha_c = classes[:, 2:]
    n_classes = classes.shape[0]

    # conditional on the factors, defaults inside a class are exchangeable,
    # so when every member shares one loss weight a binomial count draw has
    # exactly the same loss law as per-position uniforms
    members = np.bincount(class_of, minlength=n_classes)
    class_weight = np.zeros(n_classes)
    single_weight = True
    for c in range(n_classes):
        w_c = weights[class_of == c]
        class_weight[c] = w_c[0]
        if np.ptp(w_c) != 0.0:
            single_weight = False
    count_draws = single_weight and not return_indicators

    n_factors = model.omega.shape[0]
    per_block = block_paths(n_factors + (n_classes if count_draws else m))
    n_blocks = -(-n_paths // per_block)

    # s_c = z @ loads gives each class's systematic value per path
    loads = sqrt_omega @ alpha_c.T
    sqrt_b = np.sqrt(beta_c)
    idio_sd = np.sqrt(1.0 - beta_c)
    degenerate = idio_sd == 0.0
    uniform_weights = bool(np.ptp(weights) == 0.0)

    def run_block(block: int):
        rng = block_generator(seed, "simulate", block)
        count = min(per_block, n_paths - block * per_block)
        z = rng.standard_normal((count, n_factors))
        systematic = z @ loads
        with np.errstate(divide="ignore", invalid="ignore"):
            tau = ndtr((d_c - sqrt_b * systematic) / idio_sd)
        if degenerate.any():
            cols = np.flatnonzero(degenerate)
            tau[:, cols] = (
                sqrt_b[cols] * systematic[:, cols] <= d_c[cols]
            ).astype(float)
        if count_draws:
            defaults_per_class = rng.binomial(members, tau)
            return defaults_per_class @ class_weight, None
        u = rng.random((count, m))
        defaults = u <= tau[:, class_of]
        if uniform_weights:
            block_losses = defaults.sum(axis=1) * weights[0]
        else:
            block_losses = defaults.astype(float) @ weights
        return block_losses, (defaults if return_indicators else None)

    if workers == 1 or n_blocks == 1:
        results = [run_block(b) for b in range(n_blocks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_block, range(n_blocks)))

    path_losses = np.concatenate([r[0] for r in results])
    indicators = (
        np.concatenate([r[1] for r in results]).astype(np.uint8)
        if return_indicators
        else None
    )
    return LossDistribution(
        losses=np.sort(path_losses),
        n_paths=n_paths,
        seed=seed,
        model_variant=model.variant,
        indicators=indicators,
        path_losses=path_losses if return_indicators else None,
    )


def var(dist: LossDistribution, alpha: float) -> float:
    """Value at risk: the order statistic at index ceil(alpha * n), 1-based.

    This is the empirical inf-definition quantile, with no interpolation;
    the index is computed in exact rational arithmetic to avoid rounding
    the product alpha * n across an integer boundary.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    n = dist.n_paths
    if n < 1:
        raise ValueError("empty loss distribution")
    k = math.ceil(Fraction(alpha) * n)
    k = min(max(k, 1), n)
    return float(dist.losses[k - 1])


def vasicek_var(p: float, beta: float, alpha: float) -> float:
    """Large-portfolio loss-fraction quantile of the one-factor model.

    Phi((Phi^-1(p) + sqrt(beta) Phi^-1(alpha)) / sqrt(1 - beta)); the
    limit of a homogeneous portfolio's loss fraction as the number of
    issuers grows.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    return float(ndtr((ndtri(p) + math.sqrt(beta) * ndtri(alpha)) / math.sqrt(1.0 - beta)))


NORMAL_REFERENCE_RATIO = float(ndtri(0.999) / ndtri(0.99))


@dataclass
class QuantileReport:
    """VaR per (model, alpha) with tail-ratio diagnostics.

    ``tail_ratios`` holds VaR_0.999 / VaR_0.99 per model (None when the
    alphas do not include both levels, infinity when VaR_0.99 is zero but
    VaR_0.999 is not); ``normal_reference`` is the same ratio for a
    standard normal distribution, about 1.33.
    """

    variants: list[str]
    alphas: tuple[float, ...]
    var_table: np.ndarray
    tail_ratios: list[float | None]
    normal_reference: float
    n_paths: int
    seed: int


def quantile_report(
    portfolio: Portfolio,
    models,
    alphas=(0.99, 0.995, 0.999),
    n_paths: int = 1_000_000,
    seed: int = 0,
    *,
    workers: int = 1,
) -> QuantileReport:
    """Simulate the portfolio under each model and tabulate VaR levels."""
    models = list(models)
    if not models:
        raise ValueError("need at least one model")
    alphas = tuple(float(a) for a in alphas)
    table = np.zeros((len(models), len(alphas)))
    variants = []
    ratios: list[float | None] = []
    for k, model in enumerate(models):
        dist = simulate(
            portfolio,
            model,
            n_paths,
            derive_seed(seed, "quantile_report", k),
            workers=workers,
        )
        variants.append(model.variant)
        for j, a in enumerate(alphas):
            table[k, j] = var(dist, a)
        if 0.99 in alphas and 0.999 in alphas:
            low = table[k, alphas.index(0.99)]
            high = table[k, alphas.index(0.999)]
            if low != 0.0:
                ratios.append(float(high / low))
            else:
                ratios.append(math.inf if high != 0.0 else None)
        else:
            ratios.append(None)
    return QuantileReport(
        variants=variants,
        alphas=alphas,
        var_table=table,
        tail_ratios=ratios,
        normal_reference=NORMAL_REFERENCE_RATIO,
        n_paths=n_paths,
        seed=seed,
    )


#: Rating composition (rating -> count) of the four schematic portfolios.
SCHEMATIC_COMPOSITIONS = {
    "A": ("sovereign", {"AAA": 4, "AA": 7, "A": 6, "BBB": 14, "BB": 5}),
    "B": ("corporate", {"AA": 6, "A": 32, "BBB": 51}),
    "D": ("corporate", {"AA": 3, "A": 15, "BBB": 4}),
}


def schematic_portfolio(name: str, pd_table: RatingPDTable = DEFAULT_PD_TABLE) -> Portfolio:
    """Stylized benchmark portfolios with fixed rating histograms.

    A: 36 equally weighted sovereigns; B: 89 equally weighted corporates;
    C: the union of A and B re-weighted to 125 names; D: a long-short
    corporate book, 22 long and 22 short names with identical rating
    mixes. All positions have unit loss given default and rating-implied
    default probabilities.
    """
    key = name.upper()

    def leg(prefix, issuer_class, counts, exposure):
        positions = []
        for rating in RATING_ORDER:
            for k in range(counts.get(rating, 0)):
                positions.append(
                    Position(
                        issuer_id=f"{prefix}_{rating.replace('/', '')}_{k + 1:03d}",
                        exposure=exposure,
                        lgd=1.0,
                        rating=rating,
                        issuer_class=issuer_class,
                    )
                )
        return positions

    if key == "A":
        cls, counts = SCHEMATIC_COMPOSITIONS["A"]
        m = sum(counts.values())
        return Portfolio(leg("SOV", cls, counts, 1.0 / m), "long_only", pd_table)
    if key == "B":
        cls, counts = SCHEMATIC_COMPOSITIONS["B"]
        m = sum(counts.values())
        return Portfolio(leg("CORP", cls, counts, 1.0 / m), "long_only", pd_table)
    if key == "C":
        cls_a, counts_a = SCHEMATIC_COMPOSITIONS["A"]
        cls_b, counts_b = SCHEMATIC_COMPOSITIONS["B"]
        m = sum(counts_a.values()) + sum(counts_b.values())
        positions = leg("SOV", cls_a, counts_a, 1.0 / m) + leg(
            "CORP", cls_b, counts_b, 1.0 / m
        )
        return Portfolio(positions, "long_only", pd_table)
    if key == "D":
        cls, counts = SCHEMATIC_COMPOSITIONS["D"]
        m = sum(counts.values())
        positions = leg("LONG", cls, counts, 1.0 / m) + leg(
            "SHORT", cls, counts, -1.0 / m
        )
        return Portfolio(positions, "long_short", pd_table)
    raise ValueError(f"schematic portfolio must be one of A, B, C, D; got {name!r}")


def bind_portfolio(portfolio: Portfolio, model: CalibratedModel, seed: int = 0) -> Portfolio:
    """Assign portfolio positions to calibrated issuers by seeded sampling.

    Schematic portfolios carry synthetic issuer ids; simulation needs
    loadings from a calibrated universe. Each position is mapped to a
    model issuer drawn without replacement when the universe is large
    enough (with replacement otherwise); exposures, LGDs, and default
    probabilities stay with the position. Positions whose ids already
    exist in the model are left in place.
    """
    known = set(model.issuers)
    if all(p.issuer_id in known for p in portfolio.positions):
        return portfolio
    rng = substream(seed, "bind_portfolio")
    m = portfolio.size
    universe = len(model.issuers)
    replace_draws = m > universe
    if replace_draws:
        warnings.warn(
            f"portfolio has {m} positions but the model universe has only "
            f"{universe} issuers; sampling with replacement",
            stacklevel=2,
        )
    chosen = rng.choice(universe, size=m, replace=replace_draws)
    positions = [
        Position(
            issuer_id=model.issuers[int(idx)],
            exposure=p.exposure,
            lgd=p.lgd,
            pd=float(pd),
            issuer_class=p.issuer_class,
        )
        for p, idx, pd in zip(portfolio.positions, chosen, portfolio.pds)
    ]
    return Portfolio(positions, portfolio.kind, portfolio.pd_table)


def load_portfolio_csv(path, pd_table: RatingPDTable = DEFAULT_PD_TABLE) -> Portfolio:
    """Read a portfolio from CSV ``issuer_id,exposure,lgd,rating_or_pd,class``.

    The ``rating_or_pd`` column holds either a rating symbol or a literal
    default probability. The portfolio kind is inferred from the exposure
    sum: 1 means long-only, 0 means long-short.
    """
    positions = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        expected = ["issuer_id", "exposure", "lgd", "rating_or_pd", "class"]
        if header is None or [h.strip() for h in header] != expected:
            raise DataError(
                f"portfolio file {path} must start with header {','.join(expected)!r}"
            )
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 5:
                raise DataError(
                    f"portfolio row {row_no}: expected 5 fields, got {len(row)}"
                )
            issuer_id, exposure_s, lgd_s, rating_or_pd, cls = [c.strip() for c in row]
            try:
                exposure = float(exposure_s)
                lgd = float(lgd_s)
            except ValueError:
                raise DataError(
                    f"portfolio row {row_no}: non-numeric exposure or lgd"
                ) from None
            pd_value: float | None
            rating: str | None
            try:
                pd_value = float(rating_or_pd)
                rating = None
            except ValueError:
                pd_value = None
                rating = rating_or_pd
            try:
                positions.append(
                    Position(
                        issuer_id=issuer_id,
                        exposure=exposure,
                        lgd=lgd,
                        pd=pd_value,
                        rating=rating,
                        issuer_class=cls,
                    )
                )
            except ValueError as exc:
                raise DataError(f"portfolio row {row_no}: {exc}") from None
    if not positions:
        raise DataError(f"portfolio file {path} has no positions")
    total = math.fsum(p.exposure for p in positions)
    if abs(total - 1.0) <= _EXPOSURE_TOL:
        kind = "long_only"
    elif abs(total) <= _EXPOSURE_TOL:
        kind = "long_short"
    else:
        raise DataError(
            f"portfolio exposures sum to {total!r}; expected 1 (long-only) "
            "or 0 (long-short)"
        )
    try:
        return Portfolio(positions, kind, pd_table)
    except (ValueError, DataError) as exc:
        raise DataError(f"portfolio file {path}: {exc}") from None


def save_portfolio_csv(path, portfolio: Portfolio) -> None:
    """Write a portfolio in the CSV interchange format."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["issuer_id", "exposure", "lgd", "rating_or_pd", "class"])
        for p in portfolio.positions:
            rating_or_pd = p.rating if p.rating is not None else repr(p.pd)
            writer.writerow(
                [p.issuer_id, repr(p.exposure), repr(p.lgd), rating_or_pd, p.issuer_class]
            )
