"""Factor construction, orthogonalization, and calibration tests.

Oracles: np.linalg.lstsq re-solves every regression that the library
solves via normal equations, and scipy.stats.t prices the gamma
diagnostics independently.
"""
import numpy as np
import pytest
from scipy import stats

from mesorisk.errors import NumericalError
from mesorisk.factors import (
    VARIANTS,
    FactorSet,
    build_factors,
    calibrate,
    correlation_error_report,
    model_implied_correlations,
    orthogonalize,
    variant_name,
)
from mesorisk.panels import IssuerMeta, standardize
from mesorisk.rmt import correlation

from helpers import noise_panel, panel_from_matrix, planted_panel


def _meta_for(issuers, sectors=None, regions=None):
    meta = {}
    for j, issuer in enumerate(issuers):
        meta[issuer] = IssuerMeta(
            sector=None if sectors is None else sectors[j],
            region=None if regions is None else regions[j],
        )
    return meta


def _planted_with_meta(seed, per_group=8, t=600):
    panel, labels = planted_panel(seed, n_groups=3, per_group=per_group, t=t)
    work = standardize(panel)
    sectors = [f"S{g}" for g in labels]
    regions = ["R0" if j % 2 == 0 else "R1" for j in range(len(work.issuers))]
    meta = _meta_for(work.issuers, sectors=sectors, regions=regions)
    return work, meta, labels


def test_global_factor_is_equal_weight_mean():
    panel = standardize(noise_panel(6, 400, seed=1))
    with pytest.warns(UserWarning, match="only the global"):
        factors = build_factors(panel)
    assert factors.names == ["global"]
    np.testing.assert_allclose(
        factors.series[:, 0], panel.returns.mean(axis=1), atol=1e-14
    )


def test_group_factors_average_member_columns():
    work, meta, labels = _planted_with_meta(seed=2)
    factors = build_factors(work, meta=meta)
    assert factors.names[0] == "global"
    for g in range(3):
        k = factors.names.index(f"industry:S{g}")
        members = np.flatnonzero(labels == g)
        np.testing.assert_allclose(
            factors.series[:, k],
            work.returns[:, members].mean(axis=1),
            atol=1e-14,
        )
        assert factors.types[k] == "industry"
    # every issuer maps to the factor of its own sector
    for j, issuer in enumerate(work.issuers):
        assert factors.membership["industry"][issuer] == f"industry:S{labels[j]}"


def test_small_group_skipped_with_warning():
    panel = standardize(noise_panel(5, 300, seed=3))
    sectors = ["A", "A", "A", "A", "lonely"]
    meta = _meta_for(panel.issuers, sectors=sectors)
    with pytest.warns(UserWarning, match="need at least 2"):
        factors = build_factors(panel, meta=meta)
    assert "industry:lonely" not in factors.names
    assert panel.issuers[4] not in factors.membership["industry"]


def test_degenerate_zero_variance_group_skipped():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((200, 4))
    x[:, 1] = -x[:, 0]  # the pair averages to exactly zero
    panel = panel_from_matrix(x, standardized=True)
    meta = _meta_for(panel.issuers, sectors=["A", "A", "B", "B"])
    with pytest.warns(UserWarning, match="zero variance"):
        factors = build_factors(panel, meta=meta)
    assert "industry:A" not in factors.names
    assert "industry:B" in factors.names


def test_factor_set_validates_shapes():
    series = np.zeros((10, 2))
    with pytest.raises(ValueError, match="column 0 must be the global factor"):
        FactorSet(
            names=["industry:A", "global"],
            types=["industry", "global"],
            series=series,
            residual_series=series.copy(),
            gammas=np.ones(2),
            membership={},
            issuers=["a", "b"],
        )
    with pytest.raises(ValueError, match="equal length"):
        FactorSet(
            names=["global"],
            types=["global", "industry"],
            series=series,
            residual_series=series.copy(),
            gammas=np.ones(2),
            membership={},
            issuers=["a", "b"],
        )


def test_orthogonalize_residuals_are_orthogonal_to_global():
    work, meta, _ = _planted_with_meta(seed=5)
    factors = orthogonalize(build_factors(work, meta=meta))
    g = factors.series[:, 0]
    for k in range(1, factors.n_factors):
        assert abs(float(factors.residual_series[:, k] @ g)) <= 1e-10
    # global column is untouched and keeps gamma 1
    np.testing.assert_array_equal(factors.residual_series[:, 0], g)
    assert factors.gammas[0] == 1.0
    assert factors.orthogonalized


def test_orthogonalize_diagnostics_match_least_squares():
    work, meta, _ = _planted_with_meta(seed=6, t=500)
    factors = orthogonalize(build_factors(work, meta=meta))
    g = factors.series[:, 0]
    t_obs = factors.n_obs
    for k in range(1, factors.n_factors):
        f = factors.series[:, k]
        slope = np.linalg.lstsq(g[:, None], f, rcond=None)[0][0]
        diag = factors.diagnostics[factors.names[k]]
        assert diag.gamma == pytest.approx(slope, abs=1e-12)
        resid = f - slope * g
        assert diag.r_squared == pytest.approx(
            1.0 - float(resid @ resid) / float(f @ f), abs=1e-12
        )
        assert diag.residual_sd == pytest.approx(
            float(np.sqrt((resid @ resid) / t_obs)), abs=1e-12
        )
        se = np.sqrt(float(resid @ resid) / (t_obs - 1) / float(g @ g))
        t_stat = (slope - 1.0) / se
        assert diag.t_stat == pytest.approx(t_stat, abs=1e-10)
        assert diag.p_value == pytest.approx(
            2.0 * stats.t.sf(abs(t_stat), df=t_obs - 1), abs=1e-12
        )


def test_orthogonalize_rejects_zero_variance_global():
    factors = FactorSet(
        names=["global"],
        types=["global"],
        series=np.zeros((50, 1)),
        residual_series=np.zeros((50, 1)),
        gammas=np.ones(1),
        membership={},
        issuers=["a"],
    )
    with pytest.raises(NumericalError, match="zero variance"):
        orthogonalize(factors)


def test_variant_names_and_aliases():
    assert variant_name("M1") == "M1_global"
    assert variant_name("M4") == "M4_global_region_industry"
    assert variant_name("M6_global_subcommunity") == "M6_global_subcommunity"
    assert set(VARIANTS) == {
        "M1_global",
        "M2_global_industry",
        "M3_global_region",
        "M4_global_region_industry",
        "M5_global_community",
        "M6_global_subcommunity",
    }
    with pytest.raises(ValueError, match="unknown model variant"):
        variant_name("M7")


def test_calibrate_loading_normalization():
    work, meta, _ = _planted_with_meta(seed=7)
    factors = orthogonalize(build_factors(work, meta=meta))
    model = calibrate(work, factors, "M2")
    quad = np.einsum("if,fg,ig->i", model.alpha, model.omega, model.alpha)
    np.testing.assert_allclose(quad, 1.0, atol=1e-10)
    assert np.all(model.beta >= 0.0)
    assert np.all(model.beta <= 1.0)
    assert model.variant == "M2_global_industry"
    assert model.n_obs == work.n_obs


def test_calibrate_matches_lstsq_per_issuer():
    work, meta, _ = _planted_with_meta(seed=8, per_group=5, t=400)
    factors = orthogonalize(build_factors(work, meta=meta))
    model = calibrate(work, factors, "M2")
    col_of = {name: k for k, name in enumerate(model.factor_names)}
    for i, issuer in enumerate(work.issuers):
        cols = [col_of[name] for name in model.group_assignment[i]]
        fi = np.column_stack(
            [
                factors.series[:, 0] if k == 0 else factors.residual_series[
                    :, factors.names.index(model.factor_names[k])
                ]
                for k in cols
            ]
        )
        x = work.returns[:, i]
        ahat, *_ = np.linalg.lstsq(fi, x, rcond=None)
        np.testing.assert_allclose(model.alpha_hat[i, cols], ahat, atol=1e-9)
        fitted = fi @ ahat
        resid = x - fitted
        r2 = 1.0 - float(resid @ resid) / float(x @ x)
        assert model.beta[i] == pytest.approx(min(1.0, max(0.0, r2)), abs=1e-9)
        assert model.psi[i] == pytest.approx(
            np.sqrt(float(fitted @ fitted) / work.n_obs), abs=1e-9
        )
        # rescaled loadings are the raw ones over the fitted sd
        np.testing.assert_allclose(
            model.alpha[i, cols], ahat / model.psi[i], atol=1e-9
        )


def test_calibrate_m1_uses_only_global():
    work, meta, _ = _planted_with_meta(seed=9)
    factors = orthogonalize(build_factors(work, meta=meta))
    model = calibrate(work, factors, "M1")
    assert model.factor_names == ["global"]
    assert all(assignment == ["global"] for assignment in model.group_assignment)


def test_calibrate_m4_joins_region_and_industry():
    work, meta, _ = _planted_with_meta(seed=10)
    factors = orthogonalize(build_factors(work, meta=meta))
    model = calibrate(work, factors, "M4")
    types = {name.split(":")[0] for name in model.factor_names if ":" in name}
    assert types == {"region", "industry"}
    for assignment in model.group_assignment:
        assert assignment[0] == "global"
        assert len(assignment) == 3  # global + own region + own industry


def test_omega_is_population_factor_covariance():
    work, meta, _ = _planted_with_meta(seed=11)
    factors = orthogonalize(build_factors(work, meta=meta))
    model = calibrate(work, factors, "M2")
    cols = [factors.names.index(name) for name in model.factor_names]
    f = np.column_stack(
        [factors.series[:, 0]]
        + [factors.residual_series[:, k] for k in cols[1:]]
    )
    np.testing.assert_allclose(model.omega, f.T @ f / work.n_obs, atol=1e-12)


def test_model_implied_correlations_formula():
    work, meta, _ = _planted_with_meta(seed=12, per_group=4, t=300)
    factors = orthogonalize(build_factors(work, meta=meta))
    model = calibrate(work, factors, "M2")
    implied = model_implied_correlations(model)
    m = model.n_issuers
    expected = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            cross = float(model.alpha[i] @ model.omega @ model.alpha[j])
            expected[i, j] = np.sqrt(model.beta[i] * model.beta[j]) * cross
            if i == j:
                expected[i, j] += 1.0 - model.beta[i]
    np.testing.assert_allclose(implied, expected, atol=1e-12)
    np.testing.assert_allclose(np.diag(implied), 1.0, atol=1e-10)


def test_implied_correlations_track_planted_structure():
    work, meta, labels = _planted_with_meta(seed=13, per_group=10, t=3000)
    factors = orthogonalize(build_factors(work, meta=meta))
    model = calibrate(work, factors, "M2")
    empirical = correlation(work)
    report = correlation_error_report(model, empirical)
    assert report.differences.shape[0] == 30 * 29 // 2
    assert report.mean_abs <= 0.05
    assert report.tail_mass == pytest.approx(
        float((np.abs(report.differences) > report.tail_threshold).mean())
    )


def test_groups_override_supplies_community_factors():
    work, _, labels = _planted_with_meta(seed=14)
    community = {issuer: f"C{g}" for issuer, g in zip(work.issuers, labels)}
    factors = orthogonalize(build_factors(work, groups={"community": community}))
    model = calibrate(work, factors, "M5")
    assert {"community:C0", "community:C1", "community:C2"} <= set(
        model.factor_names
    )
    with pytest.raises(ValueError, match="unknown factor type"):
        build_factors(work, groups={"cluster": community})


def test_calibrate_requires_orthogonalized_factors():
    work, meta, _ = _planted_with_meta(seed=15)
    factors = build_factors(work, meta=meta)
    with pytest.raises(ValueError, match="orthogonalized"):
        calibrate(work, factors, "M2")


def test_calibrate_missing_membership_raises():
    work, meta, _ = _planted_with_meta(seed=16)
    factors = orthogonalize(build_factors(work, meta=meta))
    with pytest.raises(ValueError, match="subcommunity"):
        calibrate(work, factors, "M6")


def test_correlation_error_report_rejects_mismatched_issuers():
    work, meta, _ = _planted_with_meta(seed=17, per_group=4, t=300)
    factors = orthogonalize(build_factors(work, meta=meta))
    model = calibrate(work, factors, "M1")
    other = correlation(standardize(noise_panel(10, 300, seed=18)))
    with pytest.raises(ValueError, match="different issuers"):
        correlation_error_report(model, other)
