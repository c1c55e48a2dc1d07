"""Correlation matrices and their random-matrix spectral decomposition.

The empirical correlation matrix of N standardized series observed over T
dates is compared against the Marchenko-Pastur spectrum of a pure-noise
panel with the same aspect ratio. Eigenvalues inside the noise band are
classified as random; eigenvalues above the band carry structure, and the
largest one is classified as the market mode when its eigenvector points
into a single orthant.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import EmptyPanelError, NumericalError
from .panels import ReturnPanel, standardize
from .rng import substream

RANDOM = "random"
GROUP = "group"
MARKET = "market"
BELOW_BULK = "below_bulk"

#: How to decide whether the leading eigenvalue is a market mode.
#: "sign_test" requires sign-homogeneous eigenvector entries; "always_leading"
#: tags the leading eigenvalue unconditionally (used for community modes in
#: hierarchical detection); "never" disables the market class.
MARKET_RULES = ("sign_test", "always_leading", "never")


@dataclass(frozen=True)
class MPBounds:
    """Marchenko-Pastur noise band [lambda_minus, lambda_plus]."""

    lambda_minus: float
    lambda_plus: float

    def contains(self, eigenvalues) -> np.ndarray:
        lam = np.asarray(eigenvalues, dtype=float)
        return (lam >= self.lambda_minus) & (lam <= self.lambda_plus)


def mp_bounds(n_series: int, n_obs: int) -> MPBounds:
    """Noise band edges (1 +- sqrt(N/T))^2 for an N-by-T panel."""
    if n_series < 1 or n_obs < 1:
        raise ValueError(
            f"need positive dimensions, got N={n_series}, T={n_obs}"
        )
    if n_obs <= n_series:
        warnings.warn(
            f"T={n_obs} <= N={n_series}: correlation matrix is singular and "
            "the noise band is unreliable",
            stacklevel=2,
        )
    q = n_series / n_obs
    root = np.sqrt(q)
    return MPBounds((1.0 - root) ** 2, (1.0 + root) ** 2)


@dataclass
class CorrelationMatrix:
    """Equal-time correlation matrix with its sample dimensions."""

    entries: np.ndarray
    n_obs: int
    issuers: list[str] | None = None

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        c = self.entries
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"correlation matrix must be square, got {c.shape}")
        if self.n_obs < 2:
            raise ValueError(f"need at least 2 observations, got {self.n_obs}")
        if not np.all(np.isfinite(c)):
            raise ValueError("correlation matrix contains non-finite entries")
        if not np.allclose(c, c.T, atol=1e-12, rtol=0.0):
            raise ValueError("correlation matrix is not symmetric within 1e-12")
        if not np.allclose(np.diag(c), 1.0, atol=1e-12, rtol=0.0):
            raise ValueError("correlation matrix diagonal deviates from 1")
        if c.min() < -1.0 - 1e-12 or c.max() > 1.0 + 1e-12:
            raise ValueError("correlation entries fall outside [-1, 1]")
        if self.issuers is not None and len(self.issuers) != c.shape[0]:
            raise ValueError("issuer list length does not match matrix size")

    @property
    def n_series(self) -> int:
        return self.entries.shape[0]

    def total_weight(self) -> float:
        """Sum of all entries, the modularity normalization constant."""
        return float(self.entries.sum())


def correlation(panel: ReturnPanel) -> CorrelationMatrix:
    """Empirical correlation matrix C = X^T X / T of a standardized panel.

    An unstandardized panel is standardized first, so the result is always
    a true correlation matrix with unit diagonal.
    """
    if panel.n_obs < 2:
        raise EmptyPanelError(f"need at least 2 observations, got {panel.n_obs}")
    work = panel if panel.standardized else standardize(panel)
    x = work.returns
    c = x.T @ x / x.shape[0]
    c = (c + c.T) / 2.0
    np.clip(c, -1.0, 1.0, out=c)
    np.fill_diagonal(c, 1.0)
    return CorrelationMatrix(entries=c, n_obs=x.shape[0], issuers=list(panel.issuers))


@dataclass
class SpectralDecomposition:
    """Eigenvalue decomposition classified against the noise band.

    Eigenvalues are stored in descending order with matching eigenvector
    columns. ``classification[i]`` is one of random, group, market, or
    below_bulk; ``market_index`` is the position of the market mode or
    None when no eigenvalue qualifies.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    bounds: MPBounds
    classification: list[str]
    market_index: int | None
    n_obs: int
    issuers: list[str] | None = None
    market_sign_fraction: float | None = None

    @property
    def n_series(self) -> int:
        return self.eigenvalues.shape[0]

    def indices(self, which: str) -> np.ndarray:
        return np.flatnonzero([tag == which for tag in self.classification])

    def component(self, which: str, *, below_bulk_in_group: bool = True) -> np.ndarray:
        """Spectral component matrix for one eigenvalue class.

        ``which`` is one of random, group, or market. Eigenvalues below the
        noise band are counted with the group component by default so the
        three components always sum back to the full matrix.
        """
        if which not in (RANDOM, GROUP, MARKET):
            raise ValueError(
                f"component must be one of {(RANDOM, GROUP, MARKET)}, got {which!r}"
            )
        tags = {which}
        if which == GROUP and below_bulk_in_group:
            tags.add(BELOW_BULK)
        elif which == RANDOM and not below_bulk_in_group:
            tags.add(BELOW_BULK)
        idx = np.flatnonzero([tag in tags for tag in self.classification])
        if idx.size == 0:
            return np.zeros((self.n_series, self.n_series))
        v = self.eigenvectors[:, idx]
        return (v * self.eigenvalues[idx]) @ v.T

    def structure_matrix(self, *, include_below_bulk: bool = True) -> np.ndarray:
        """Group component: the filtered matrix used for community detection."""
        return self.component(GROUP, below_bulk_in_group=include_below_bulk)

    def noise_fraction(self) -> float:
        """Fraction of eigenvalues inside the noise band."""
        return float(np.mean(self.bounds.contains(self.eigenvalues)))


def _sign_fraction(vector: np.ndarray) -> float:
    """Fraction of nonzero entries sharing the majority sign."""
    signs = np.sign(vector)
    nonzero = signs[signs != 0]
    if nonzero.size == 0:
        return 0.0
    positive = int((nonzero > 0).sum())
    return max(positive, nonzero.size - positive) / nonzero.size


def decompose(
    corr: CorrelationMatrix,
    *,
    market_rule: str = "sign_test",
    market_sign_threshold: float = 0.95,
) -> SpectralDecomposition:
    """Classify the spectrum of a correlation matrix against the noise band.

    The leading eigenvalue is tagged as the market mode only when it lies
    above the band and, under the default rule, at least
    ``market_sign_threshold`` of its eigenvector entries share one sign.
    With ``market_rule="always_leading"`` the leading eigenvalue above the
    band is tagged unconditionally, which is the convention for community
    modes when recursing inside a community.
    """
    if market_rule not in MARKET_RULES:
        raise ValueError(f"market_rule must be one of {MARKET_RULES}, got {market_rule!r}")
    try:
        lam, vec = np.linalg.eigh(corr.entries)
    except np.linalg.LinAlgError as exc:
        c = corr.entries
        raise NumericalError(
            "eigendecomposition failed: "
            f"{exc}; matrix size {c.shape[0]}, entry range "
            f"[{c.min():.3g}, {c.max():.3g}]"
        ) from exc
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    vec = vec[:, order]

    bounds = mp_bounds(corr.n_series, corr.n_obs)
    classification: list[str] = []
    for value in lam:
        if value > bounds.lambda_plus:
            classification.append(GROUP)
        elif value < bounds.lambda_minus:
            classification.append(BELOW_BULK)
        else:
            classification.append(RANDOM)

    market_index: int | None = None
    sign_fraction: float | None = None
    if classification and classification[0] == GROUP:
        if market_rule == "always_leading":
            market_index = 0
        elif market_rule == "sign_test":
            sign_fraction = _sign_fraction(vec[:, 0])
            if sign_fraction >= market_sign_threshold:
                market_index = 0
    if market_index is not None:
        classification[market_index] = MARKET

    return SpectralDecomposition(
        eigenvalues=lam,
        eigenvectors=vec,
        bounds=bounds,
        classification=classification,
        market_index=market_index,
        n_obs=corr.n_obs,
        issuers=list(corr.issuers) if corr.issuers is not None else None,
        market_sign_fraction=sign_fraction,
    )


@dataclass
class ShuffleResult:
    """Spectrum of a panel with each column independently time-shuffled."""

    eigenvalues: np.ndarray
    bounds: MPBounds
    fraction_in_bulk: float


def shuffle_test(panel: ReturnPanel, seed: int = 0) -> ShuffleResult:
    """Destroy cross-correlations by shuffling each column in time.

    Shuffling each standardized column with an independent permutation
    leaves the marginals intact but removes equal-time dependence, so the
    shuffled spectrum should fall inside the noise band up to finite-size
    fluctuations.
    """
    work = panel if panel.standardized else standardize(panel)
    rng = substream(seed, "shuffle_test")
    shuffled = np.empty_like(work.returns)
    t = work.n_obs
    for j in range(work.n_series):
        shuffled[:, j] = work.returns[rng.permutation(t), j]
    c = shuffled.T @ shuffled / t
    c = (c + c.T) / 2.0
    np.clip(c, -1.0, 1.0, out=c)
    np.fill_diagonal(c, 1.0)
    lam = np.linalg.eigvalsh(c)[::-1]
    bounds = mp_bounds(work.n_series, t)
    fraction = float(np.mean(bounds.contains(lam)))
    return ShuffleResult(eigenvalues=lam, bounds=bounds, fraction_in_bulk=fraction)
