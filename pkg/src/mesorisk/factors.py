"""Factor construction, orthogonalization, and issuer calibration.

Factors are equal-weight cross-sectional averages of standardized
log-returns: one global factor over all issuers, plus one factor per
group (industry sector, region, community, or subcommunity). Group
factors are orthogonalized on the global factor by regression, and each
issuer is regressed on the global factor together with its own groups'
residual factors. The regression yields the issuer's systematic share
beta (the R^2 of the regression) and loadings alpha rescaled so that the
systematic part has unit variance: alpha' Omega alpha = 1, where Omega is
the population covariance of the stacked factor columns.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .community import Hierarchy, Partition, community_name
from .errors import NumericalError
from .panels import IssuerMeta, ReturnPanel, standardize
from .rmt import CorrelationMatrix

#: Model variants: which group-factor types augment the global factor.
VARIANTS: dict[str, tuple[str, ...]] = {
    "M1_global": (),
    "M2_global_industry": ("industry",),
    "M3_global_region": ("region",),
    "M4_global_region_industry": ("region", "industry"),
    "M5_global_community": ("community",),
    "M6_global_subcommunity": ("subcommunity",),
}

_VARIANT_ALIASES = {name.split("_")[0]: name for name in VARIANTS}

_TYPE_ORDER = ("industry", "region", "community", "subcommunity")

_PSI_FLOOR = 1e-12


def variant_name(value: str) -> str:
    """Canonical variant name, accepting short aliases M1..M6."""
    if value in VARIANTS:
        return value
    if value in _VARIANT_ALIASES:
        return _VARIANT_ALIASES[value]
    raise ValueError(
        f"unknown model variant {value!r}; expected one of {sorted(VARIANTS)} "
        f"or aliases {sorted(_VARIANT_ALIASES)}"
    )


@dataclass(frozen=True)
class FactorDiagnostics:
    """Diagnostics of one group factor's regression on the global factor."""

    gamma: float
    r_squared: float
    residual_sd: float
    t_stat: float
    p_value: float


@dataclass
class FactorSet:
    """Factor return series with their orthogonalized residuals.

    Column 0 is always the global factor. ``residual_series`` equals
    ``series`` until :func:`orthogonalize` replaces the group columns with
    their residuals against the global factor; the global column is its
    own residual throughout, with a gamma of 1 by convention.
    """

    names: list[str]
    types: list[str]
    series: np.ndarray
    residual_series: np.ndarray
    gammas: np.ndarray
    membership: dict[str, dict[str, str]]
    issuers: list[str]
    orthogonalized: bool = False
    diagnostics: dict[str, FactorDiagnostics] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.names) != len(self.types):
            raise ValueError("names and types must have equal length")
        if self.series.shape != self.residual_series.shape:
            raise ValueError("series and residual_series must have equal shape")
        if self.series.shape[1] != len(self.names):
            raise ValueError("column count does not match factor names")
        if self.gammas.shape[0] != len(self.names):
            raise ValueError("gamma count does not match factor names")
        if not self.names or self.types[0] != "global":
            raise ValueError("column 0 must be the global factor")

    @property
    def n_obs(self) -> int:
        return self.series.shape[0]

    @property
    def n_factors(self) -> int:
        return len(self.names)

    def columns_for(self, types) -> list[int]:
        wanted = {"global"} | set(types)
        return [k for k, t in enumerate(self.types) if t in wanted]


def _group_maps(
    panel: ReturnPanel,
    meta: dict[str, IssuerMeta] | None,
    partition: Partition | None,
    hierarchy: Hierarchy | None,
) -> dict[str, dict[str, str]]:
    """Group label per issuer for each available factor type."""
    groups: dict[str, dict[str, str]] = {}
    meta = panel.meta if meta is None else meta
    if meta:
        industry = {
            issuer: record.sector
            for issuer, record in meta.items()
            if record.sector and issuer in set(panel.issuers)
        }
        region = {
            issuer: record.region
            for issuer, record in meta.items()
            if record.region and issuer in set(panel.issuers)
        }
        if industry:
            groups["industry"] = industry
        if region:
            groups["region"] = region
    if hierarchy is not None:
        if hierarchy.issuers != panel.issuers:
            raise ValueError("hierarchy and panel cover different issuer sets")
        groups["community"] = dict(zip(panel.issuers, hierarchy.community_of()))
        groups["subcommunity"] = dict(zip(panel.issuers, hierarchy.subcommunity_of()))
    if partition is not None:
        if partition.n_nodes != panel.n_series:
            raise ValueError(
                f"partition covers {partition.n_nodes} nodes but panel has "
                f"{panel.n_series} series"
            )
        groups["community"] = {
            issuer: community_name(int(label))
            for issuer, label in zip(panel.issuers, partition.labels)
        }
    return groups


def build_factors(
    panel: ReturnPanel,
    meta: dict[str, IssuerMeta] | None = None,
    partition: Partition | None = None,
    hierarchy: Hierarchy | None = None,
    groups: dict[str, dict[str, str]] | None = None,
) -> FactorSet:
    """Equal-weight factors from a standardized panel.

    Industry and region factors come from issuer metadata (``meta``
    defaults to the panel's own), community factors from ``partition``
    or the top level of ``hierarchy``, and subcommunity factors from the
    deepest level of ``hierarchy`` (an undivided community is its own
    subcommunity). ``groups`` supplies precomputed issuer-to-group maps
    keyed by factor type and overrides the per-type sources above, which
    lets a saved detection result feed calibration directly. Groups with
    fewer than two member columns are skipped with a warning, as are
    degenerate groups whose average series has zero variance (for example
    two exactly opposite members); issuers of a skipped group keep no
    membership for that factor type.
    """
    work = panel if panel.standardized else standardize(panel)
    x = work.returns
    position = {issuer: j for j, issuer in enumerate(work.issuers)}
    group_maps = _group_maps(work, meta, partition, hierarchy)
    if groups:
        known = set(work.issuers)
        for factor_type, mapping in groups.items():
            if factor_type not in _TYPE_ORDER:
                raise ValueError(
                    f"unknown factor type {factor_type!r}; expected one of "
                    f"{_TYPE_ORDER}"
                )
            group_maps[factor_type] = {
                issuer: group
                for issuer, group in mapping.items()
                if issuer in known
            }
    sources = (meta, partition, hierarchy, groups)
    if all(s is None for s in sources) and not group_maps:
        warnings.warn(
            "no metadata, partition, or hierarchy given; only the global "
            "factor is built",
            stacklevel=2,
        )

    names = ["global"]
    types = ["global"]
    columns = [x.mean(axis=1)]
    membership: dict[str, dict[str, str]] = {}

    for factor_type in _TYPE_ORDER:
        if factor_type not in group_maps:
            continue
        mapping = group_maps[factor_type]
        by_group: dict[str, list[int]] = {}
        for issuer, group in mapping.items():
            by_group.setdefault(group, []).append(position[issuer])
        membership[factor_type] = {}
        for group in sorted(by_group):
            members = by_group[group]
            name = f"{factor_type}:{group}"
            if len(members) < 2:
                warnings.warn(
                    f"factor {name!r} has {len(members)} member(s); "
                    "skipped (need at least 2)",
                    stacklevel=2,
                )
                continue
            series = x[:, members].mean(axis=1)
            if float(np.var(series)) <= 1e-300:
                warnings.warn(
                    f"factor {name!r} has zero variance; skipped as degenerate",
                    stacklevel=2,
                )
                continue
            names.append(name)
            types.append(factor_type)
            columns.append(series)
            for issuer, group_label in mapping.items():
                if group_label == group:
                    membership[factor_type][issuer] = name

    series = np.column_stack(columns)
    return FactorSet(
        names=names,
        types=types,
        series=series,
        residual_series=series.copy(),
        gammas=np.ones(len(names)),
        membership=membership,
        issuers=list(work.issuers),
    )


def orthogonalize(factors: FactorSet) -> FactorSet:
    """Regress each group factor on the global factor and keep residuals.

    Each group column f is replaced by f - gamma * g, where gamma is the
    no-intercept least-squares slope on the global factor g (all series
    are mean zero by construction, so no intercept is needed).
    Diagnostics per factor hold gamma, the regression R^2, the population
    residual standard deviation, and the t-statistic with T-1 degrees of
    freedom (two-sided p-value) for the hypothesis gamma = 1.
    """
    g = factors.series[:, 0]
    gg = float(g @ g)
    if gg <= 0.0:
        raise NumericalError("global factor has zero variance")
    t_obs = factors.n_obs
    residuals = factors.series.copy()
    gammas = np.ones(factors.n_factors)
    diagnostics: dict[str, FactorDiagnostics] = {}
    for k in range(1, factors.n_factors):
        f = factors.series[:, k]
        gamma = float(f @ g) / gg
        resid = f - gamma * g
        ss_res = float(resid @ resid)
        ss_tot = float(f @ f)
        r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
        residual_sd = float(np.sqrt(ss_res / t_obs))
        if t_obs > 1 and ss_res > 0:
            se = np.sqrt(ss_res / (t_obs - 1) / gg)
            t_stat = (gamma - 1.0) / se
            p_value = 2.0 * float(stats.t.sf(abs(t_stat), df=t_obs - 1))
        else:
            t_stat = 0.0 if gamma == 1.0 else float(np.sign(gamma - 1.0) * np.inf)
            p_value = 1.0 if gamma == 1.0 else 0.0
        residuals[:, k] = resid
        gammas[k] = gamma
        diagnostics[factors.names[k]] = FactorDiagnostics(
            gamma=gamma,
            r_squared=r_squared,
            residual_sd=residual_sd,
            t_stat=float(t_stat),
            p_value=p_value,
        )
    return replace(
        factors,
        residual_series=residuals,
        gammas=gammas,
        orthogonalized=True,
        diagnostics=diagnostics,
        membership={t: dict(m) for t, m in factors.membership.items()},
    )


@dataclass
class CalibratedModel:
    """Issuer loadings for one model variant.

    ``alpha`` rows are rescaled so alpha' Omega alpha = 1; ``alpha_hat``
    holds the raw regression coefficients; ``beta`` is the systematic
    variance share (the regression R^2 clipped into [0, 1]); ``psi`` is
    the population standard deviation of each issuer's fitted systematic
    part; ``omega`` is the population covariance of the factor columns in
    ``factor_names`` order; ``group_assignment`` lists the factor names
    each issuer loads on.
    """

    variant: str
    issuers: list[str]
    factor_names: list[str]
    alpha: np.ndarray
    alpha_hat: np.ndarray
    beta: np.ndarray
    psi: np.ndarray
    omega: np.ndarray
    r_squared: np.ndarray
    group_assignment: list[list[str]]
    n_obs: int

    @property
    def n_issuers(self) -> int:
        return len(self.issuers)

    @property
    def n_factors(self) -> int:
        return len(self.factor_names)


def calibrate(
    panel: ReturnPanel,
    factors: FactorSet,
    variant: str = "M5_global_community",
) -> CalibratedModel:
    """Regress every issuer on its variant factors and rescale loadings.

    The regressor matrix stacks the global factor with the orthogonalized
    residual factors of the variant's group types; each issuer uses the
    global column plus the columns of its own groups, solving the normal
    equations alpha_hat = (F'F)^-1 F'x. Rank-deficient issuer regressions
    fall back to a pseudoinverse with a warning. An issuer whose fitted
    systematic part is numerically zero gets a placeholder loading on the
    global factor alone (its beta of zero makes the loading irrelevant in
    simulation).
    """
    name = variant_name(variant)
    group_types = VARIANTS[name]
    if not factors.orthogonalized:
        raise ValueError("factors must be orthogonalized before calibration")
    work = panel if panel.standardized else standardize(panel)
    if work.n_obs != factors.n_obs:
        raise ValueError(
            f"panel has {work.n_obs} observations but factors have {factors.n_obs}"
        )
    if work.issuers != factors.issuers:
        raise ValueError("panel and factors cover different issuer sets")
    for factor_type in group_types:
        if factor_type not in factors.membership:
            raise ValueError(
                f"variant {name} needs {factor_type!r} factors, which were not built"
            )

    columns = factors.columns_for(group_types)
    f = np.column_stack(
        [factors.series[:, 0]]
        + [factors.residual_series[:, k] for k in columns if k != 0]
    )
    factor_names = [factors.names[0]] + [
        factors.names[k] for k in columns if k != 0
    ]
    col_of = {fname: k for k, fname in enumerate(factor_names)}
    t_obs = work.n_obs
    omega = f.T @ f / t_obs

    m = work.n_series
    n_factors = f.shape[1]
    alpha = np.zeros((m, n_factors))
    alpha_hat = np.zeros((m, n_factors))
    beta = np.zeros(m)
    psi = np.zeros(m)
    r_squared = np.zeros(m)
    group_assignment: list[list[str]] = []

    clipped: list[str] = []
    degenerate: list[str] = []
    for i, issuer in enumerate(work.issuers):
        issuer_factors = ["global"]
        for factor_type in group_types:
            fname = factors.membership[factor_type].get(issuer)
            if fname is not None and fname in col_of:
                issuer_factors.append(fname)
        cols = sorted({col_of[fname] for fname in issuer_factors})
        group_assignment.append([factor_names[k] for k in cols])
        fi = f[:, cols]
        x = work.returns[:, i]
        gram = fi.T @ fi
        rhs = fi.T @ x
        try:
            if np.linalg.cond(gram) > 1e12:
                raise np.linalg.LinAlgError("ill-conditioned normal equations")
            ahat = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            warnings.warn(
                f"rank-deficient regression for issuer {issuer!r}; "
                "using pseudoinverse",
                stacklevel=2,
            )
            ahat = np.linalg.pinv(gram) @ rhs
        fitted = fi @ ahat
        ss_res = float((x - fitted) @ (x - fitted))
        ss_tot = float(x @ x)
        raw = 1.0 - ss_res / ss_tot
        r_squared[i] = raw
        if raw < -1e-12 or raw > 1.0 + 1e-12:
            clipped.append(issuer)
        beta[i] = min(1.0, max(0.0, raw))
        alpha_hat[i, cols] = ahat
        psi_i = float(np.sqrt((fitted @ fitted) / t_obs))
        psi[i] = psi_i
        if psi_i <= _PSI_FLOOR:
            degenerate.append(issuer)
            alpha[i, 0] = 1.0 / np.sqrt(omega[0, 0])
        else:
            alpha[i, cols] = ahat / psi_i

    if clipped:
        warnings.warn(
            f"clipped beta into [0, 1] for {len(clipped)} issuer(s): "
            f"{clipped[:5]}",
            stacklevel=2,
        )
    if degenerate:
        warnings.warn(
            f"{len(degenerate)} issuer(s) have a numerically zero systematic "
            f"part; assigned placeholder global loadings: {degenerate[:5]}",
            stacklevel=2,
        )

    return CalibratedModel(
        variant=name,
        issuers=list(work.issuers),
        factor_names=factor_names,
        alpha=alpha,
        alpha_hat=alpha_hat,
        beta=beta,
        psi=psi,
        omega=omega,
        r_squared=r_squared,
        group_assignment=group_assignment,
        n_obs=t_obs,
    )


def model_implied_correlations(model: CalibratedModel) -> np.ndarray:
    """Correlation matrix implied by the calibrated loadings.

    rho_ij = delta_ij (1 - beta_i) + sqrt(beta_i beta_j) alpha_i' Omega alpha_j,
    which has a unit diagonal by the loading normalization.
    """
    gram = model.alpha @ model.omega @ model.alpha.T
    scale = np.sqrt(np.outer(model.beta, model.beta))
    implied = scale * gram
    implied[np.diag_indices_from(implied)] += 1.0 - model.beta
    return implied


@dataclass
class CorrelationErrorReport:
    """Distribution of implied-minus-empirical correlation differences."""

    differences: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray
    empirical_counts: np.ndarray
    mean: float
    sd: float
    mean_abs: float
    max_abs: float
    tail_mass: float
    tail_threshold: float


def correlation_error_report(
    model: CalibratedModel,
    empirical: CorrelationMatrix,
    *,
    bins: int = 50,
    tail_threshold: float = 0.2,
) -> CorrelationErrorReport:
    """Compare implied and empirical correlations over issuer pairs.

    Differences are taken over the strict upper triangle (model minus
    empirical); ``tail_mass`` is the fraction of pairs whose absolute
    difference exceeds ``tail_threshold``. The histogram of empirical
    off-diagonal correlations is included for reference.
    """
    if empirical.issuers is not None and list(empirical.issuers) != model.issuers:
        raise ValueError("empirical matrix and model cover different issuers")
    if empirical.n_series != model.n_issuers:
        raise ValueError(
            f"empirical matrix has {empirical.n_series} series but model has "
            f"{model.n_issuers} issuers"
        )
    implied = model_implied_correlations(model)
    upper = np.triu_indices(model.n_issuers, k=1)
    differences = implied[upper] - empirical.entries[upper]
    counts, bin_edges = np.histogram(differences, bins=bins, range=(-1.0, 1.0))
    empirical_counts, _ = np.histogram(
        empirical.entries[upper], bins=bins, range=(-1.0, 1.0)
    )
    if differences.size:
        mean = float(differences.mean())
        sd = float(differences.std())
        mean_abs = float(np.abs(differences).mean())
        max_abs = float(np.abs(differences).max())
        tail_mass = float((np.abs(differences) > tail_threshold).mean())
    else:
        mean = sd = mean_abs = max_abs = tail_mass = 0.0
    return CorrelationErrorReport(
        differences=differences,
        bin_edges=bin_edges,
        counts=counts,
        empirical_counts=empirical_counts,
        mean=mean,
        sd=sd,
        mean_abs=mean_abs,
        max_abs=max_abs,
        tail_mass=tail_mass,
        tail_threshold=tail_threshold,
    )
