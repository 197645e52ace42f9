"""Tests for estimate augmentation, synthesis, and sandwich covariance."""

import numpy as np
import pytest
from scipy import special

from ordcop import (
    Coding,
    CopulaFamily,
    CopulaSpec,
    DomainError,
    MarginalParams,
    MarginalSpec,
    PairFit,
    PairModel,
    ParamLayout,
    StateSpace,
    augment,
    combine_fits,
    fit_system,
    sandwich_cov,
    simple_mean,
    simulate_system,
    trivariate_gumbel_scenario,
    wald_test,
    weighted_mean,
    weighting_matrix,
)
from tests.conftest import two_series_scenario


def synthetic_fit(layout, scen, r, s, theta, hessian, n_obs=100):
    """PairFit with prescribed estimate and curvature, zero scores."""
    theta = np.asarray(theta, dtype=float)
    hessian = np.asarray(hessian, dtype=float)
    model = PairModel(
        pair=(r, s),
        spec_r=scen.specs[r],
        spec_s=scen.specs[s],
        params_r=scen.params[r],
        params_s=scen.params[s],
        copula=CopulaSpec(layout.families[layout.pair_position(r, s)], 2.0),
    )
    return PairFit(
        pair=(r, s),
        model=model,
        theta_natural=theta,
        theta_unconstrained=theta.copy(),
        hessian=hessian,
        scores=np.zeros((n_obs - 1, theta.size)),
        loglik=0.0,
        n_obs=n_obs,
        converged=True,
        n_iter=1,
        grad_norm=0.0,
    )


@pytest.fixture(scope="module")
def scen3():
    return trivariate_gumbel_scenario(n_obs=100)


@pytest.fixture(scope="module")
def layout3(scen3):
    return scen3.layout


def synthetic_triple(layout, scen, rng, block_diag=False):
    """Three random-PD synthetic fits covering a K=3 layout."""
    fits = []
    for r, s in layout.pairs:
        dim = layout.pair_dim(r, s)
        a = rng.normal(size=(dim, dim))
        hess = a @ a.T / dim + np.eye(dim)
        if block_diag:
            # no coupling between marginal and copula coordinates
            hess[-1, :-1] = 0.0
            hess[:-1, -1] = 0.0
        theta = rng.normal(size=dim)
        theta[-1] = abs(theta[-1]) + 1.5
        fits.append(synthetic_fit(layout, scen, r, s, theta, hess))
    return fits


@pytest.fixture(scope="module")
def frank_ind_system():
    """Frank-family fit of two series generated under independence."""
    scen = two_series_scenario(600, CopulaSpec.gumbel(1.0))
    states = simulate_system(scen, np.random.default_rng(13))
    layout = ParamLayout(scen.specs, CopulaFamily.FRANK)
    return layout, fit_system(states, layout)


class TestAugment:
    def test_single_pair_identity_embedding(self, scen3):
        scen = two_series_scenario(100, CopulaSpec.gumbel(2.0))
        layout = scen.layout
        dim = layout.pair_dim(0, 1)
        theta = np.arange(1.0, dim + 1)
        hess = np.diag(np.arange(2.0, dim + 2))
        fit = synthetic_fit(layout, scen, 0, 1, theta, hess)
        vec, full = augment(fit, layout)
        assert np.array_equal(vec, theta)
        assert np.array_equal(full, hess)

    def test_three_pair_patterns_cover_every_index(self, scen3, layout3):
        hits = np.zeros(layout3.n_params, dtype=int)
        for r, s in layout3.pairs:
            dim = layout3.pair_dim(r, s)
            fit = synthetic_fit(layout3, scen3, r, s, np.ones(dim), np.eye(dim))
            vec, _ = augment(fit, layout3)
            hits += (vec != 0).astype(int)
        # marginal coordinates appear in K-1 = 2 pairs, copulas in exactly 1
        assert np.array_equal(hits, layout3.replicate_counts)
        assert set(np.flatnonzero(hits)) == set(range(layout3.n_params))

    def test_hessian_principal_submatrix_round_trip(self, scen3, layout3):
        rng = np.random.default_rng(5)
        for r, s in layout3.pairs:
            dim = layout3.pair_dim(r, s)
            hess = rng.normal(size=(dim, dim))
            fit = synthetic_fit(layout3, scen3, r, s, np.zeros(dim), hess)
            _, full = augment(fit, layout3)
            idx = layout3.pair_indices(r, s)
            assert np.array_equal(full[np.ix_(idx, idx)], hess)
            mask = np.zeros(layout3.n_params, dtype=bool)
            mask[idx] = True
            assert np.all(full[~mask][:, :] == 0.0)
            assert np.all(full[:, ~mask] == 0.0)

    def test_dimension_mismatch_rejected(self, scen3, layout3):
        fit = synthetic_fit(layout3, scen3, 0, 1, np.zeros(5), np.eye(5))
        with pytest.raises(DomainError):
            augment(fit, layout3)


class TestSimpleMean:
    def test_single_pair_is_identity(self):
        scen = two_series_scenario(100, CopulaSpec.gumbel(2.0))
        layout = scen.layout
        dim = layout.pair_dim(0, 1)
        theta = np.linspace(-1.0, 1.0, dim)
        fit = synthetic_fit(layout, scen, 0, 1, theta, np.eye(dim))
        assert np.allclose(simple_mean([fit], layout), theta, atol=1e-14)

    def test_two_replicates_average(self, scen3, layout3):
        # global coordinate 0 lives in pairs (0,1) and (0,2) at local slot 0
        fits = []
        for r, s in layout3.pairs:
            dim = layout3.pair_dim(r, s)
            theta = np.zeros(dim)
            if (r, s) == (0, 1):
                theta[0] = 1.0
            elif (r, s) == (0, 2):
                theta[0] = 3.0
            fits.append(synthetic_fit(layout3, scen3, r, s, theta, np.eye(dim)))
        combined = simple_mean(fits, layout3)
        assert combined[0] == pytest.approx(2.0, abs=1e-14)

    def test_equals_weighted_when_hessians_identity(self, scen3, layout3):
        rng = np.random.default_rng(11)
        fits = []
        for r, s in layout3.pairs:
            dim = layout3.pair_dim(r, s)
            fits.append(synthetic_fit(layout3, scen3, r, s,
                                      rng.normal(size=dim), np.eye(dim)))
        simple = simple_mean(fits, layout3)
        weighted = weighted_mean(fits, layout3)
        assert np.allclose(simple, weighted, atol=1e-10)

    def test_missing_pair_rejected(self, scen3, layout3):
        dim = layout3.pair_dim(0, 1)
        fit = synthetic_fit(layout3, scen3, 0, 1, np.zeros(dim), np.eye(dim))
        with pytest.raises(DomainError):
            simple_mean([fit], layout3)


class TestWeightedMean:
    def test_equal_weights_per_shared_coordinate_reduce_to_mean(
        self, scen3, layout3
    ):
        rng = np.random.default_rng(7)
        # one curvature value per global coordinate, shared across pairs
        weights = rng.uniform(0.5, 4.0, size=layout3.n_params)
        fits = [
            synthetic_fit(layout3, scen3, r, s,
                          rng.normal(size=layout3.pair_dim(r, s)),
                          np.diag(weights[layout3.pair_indices(r, s)]))
            for r, s in layout3.pairs
        ]
        expected = simple_mean(fits, layout3)
        assert np.allclose(weighted_mean(fits, layout3), expected, atol=1e-10)

    def test_one_dimensional_weighting(self, scen3, layout3):
        # shared coordinate 0: curvature 1 at estimate 0, curvature 3 at 4
        fits = []
        for r, s in layout3.pairs:
            dim = layout3.pair_dim(r, s)
            theta = np.zeros(dim)
            hess = np.eye(dim)
            if (r, s) == (0, 1):
                theta[0], hess[0, 0] = 0.0, 1.0
            elif (r, s) == (0, 2):
                theta[0], hess[0, 0] = 4.0, 3.0
            fits.append(synthetic_fit(layout3, scen3, r, s, theta, hess))
        combined = weighted_mean(fits, layout3)
        assert combined[0] == pytest.approx(3.0, abs=1e-10)

    def test_copula_coordinates_pass_through(self, scen3, layout3):
        rng = np.random.default_rng(23)
        fits = synthetic_triple(layout3, scen3, rng)
        combined = weighted_mean(fits, layout3)
        for fit, (r, s) in zip(fits, layout3.pairs):
            assert combined[layout3.copula_index(r, s)] == fit.theta_natural[-1]

    def test_exact_for_quadratic_objectives(self, scen3, layout3):
        rng = np.random.default_rng(31)
        fits = synthetic_triple(layout3, scen3, rng, block_diag=True)
        combined = weighted_mean(fits, layout3)
        # stationarity of the pooled quadratic criterion at the combined point
        grad = np.zeros(layout3.n_params)
        for fit, (r, s) in zip(fits, layout3.pairs):
            idx = layout3.pair_indices(r, s)
            grad[idx] += fit.hessian @ (combined[idx] - fit.theta_natural)
        assert np.max(np.abs(grad)) < 1e-10

    def test_pair_order_permutation_invariance(self, scen3, layout3):
        rng = np.random.default_rng(41)
        fits = synthetic_triple(layout3, scen3, rng)
        forward = weighted_mean(fits, layout3)
        backward = weighted_mean(fits[::-1], layout3)
        assert np.array_equal(forward, backward)
        assert np.array_equal(simple_mean(fits, layout3),
                              simple_mean(fits[::-1], layout3))

    def test_singular_pooled_hessian_warns(self, scen3, layout3):
        fits = []
        for r, s in layout3.pairs:
            dim = layout3.pair_dim(r, s)
            hess = np.zeros((dim, dim))
            hess[-1, -1] = 1.0
            fits.append(synthetic_fit(layout3, scen3, r, s, np.ones(dim), hess))
        with pytest.warns(RuntimeWarning):
            weighted_mean(fits, layout3)


class TestWeightingMatrix:
    def test_rows_sum_to_one(self, scen3, layout3):
        rng = np.random.default_rng(53)
        fits = synthetic_triple(layout3, scen3, rng)
        for method in ("mean", "weighted"):
            a = weighting_matrix(fits, layout3, method)
            assert np.allclose(a.sum(axis=1), 1.0, atol=1e-12)

    def test_mean_method_gives_equal_replicate_weights(self, scen3, layout3):
        rng = np.random.default_rng(59)
        fits = synthetic_triple(layout3, scen3, rng)
        a = weighting_matrix(fits, layout3, "mean")
        nonzero = a[a != 0.0]
        # marginal coordinates split 1/2 each; copulas carry weight 1
        assert set(np.round(nonzero, 12)) == {0.5, 1.0}

    def test_weighted_method_matches_diagonal_curvature(self, scen3, layout3):
        fits = []
        for r, s in layout3.pairs:
            dim = layout3.pair_dim(r, s)
            hess = np.eye(dim)
            if (r, s) == (0, 1):
                hess[0, 0] = 1.0
            elif (r, s) == (0, 2):
                hess[0, 0] = 3.0
            fits.append(synthetic_fit(layout3, scen3, r, s, np.zeros(dim), hess))
        a = weighting_matrix(fits, layout3, "weighted")
        row = a[0][a[0] != 0.0]
        assert np.allclose(sorted(row), [0.25, 0.75], atol=1e-12)

    def test_unknown_method_rejected(self, scen3, layout3):
        rng = np.random.default_rng(61)
        fits = synthetic_triple(layout3, scen3, rng)
        with pytest.raises(DomainError):
            weighting_matrix(fits, layout3, "median")


class TestSandwichCov:
    def test_single_pair_sandwich_close_to_inverse_hessian(
        self, frank_ind_system
    ):
        layout, system = frank_ind_system
        fit = system.pair_fits[0]
        assert fit.converged
        se_hess = np.sqrt(np.diag(np.linalg.inv(fit.hessian)))
        cov = sandwich_cov(system.pair_fits, layout)
        se_sandwich = np.sqrt(np.diag(cov.stacked))
        ratio = se_sandwich / se_hess
        assert np.all(ratio > 1 / 1.5)
        assert np.all(ratio < 1.5)

    def test_stacked_symmetric_psd(self, gumbel3_system):
        _, _, system = gumbel3_system
        for mat in (system.cov_stacked, system.cov_mean, system.cov_weighted):
            assert np.array_equal(mat, mat.T)
            eigvals = np.linalg.eigvalsh(mat)
            assert eigvals.min() > -1e-8

    def test_combined_covariance_contracts_stacked(self, gumbel3_system):
        _, _, system = gumbel3_system
        rebuilt = system.a_weighted @ system.cov_stacked @ system.a_weighted.T
        assert np.allclose(system.cov_weighted, rebuilt, atol=1e-12)
        rebuilt_mean = system.a_mean @ system.cov_stacked @ system.a_mean.T
        assert np.allclose(system.cov_mean, rebuilt_mean, atol=1e-12)

    def test_stacked_dimension_totals_pair_dims(self, gumbel3_system):
        _, _, system = gumbel3_system
        total = sum(f.theta_natural.size for f in system.pair_fits)
        assert system.cov_stacked.shape == (total, total)


class TestWaldTest:
    def test_zero_estimate(self):
        z, p = wald_test(0.0, 1.0)
        assert z == 0.0
        assert p == 1.0

    def test_critical_value(self):
        z, p = wald_test(1.96, 1.0)
        assert z == pytest.approx(1.96)
        assert p == pytest.approx(0.05, abs=5e-4)

    def test_strongly_significant_coefficient(self):
        z, p = wald_test(-5.248, 0.726)
        assert abs(z) == pytest.approx(7.229, abs=5e-3)
        assert p < 1e-12

    def test_vector_input(self):
        z, p = wald_test([0.0, 1.96], [1.0, 1.0])
        assert np.allclose(z, [0.0, 1.96])
        assert np.allclose(p, 2.0 * special.ndtr(-np.abs(z)))

    @pytest.mark.parametrize("se", [0.0, -1.0, np.nan, np.inf])
    def test_invalid_standard_errors_rejected(self, se):
        with pytest.raises(DomainError):
            wald_test(1.0, se)


class TestSystemFit:
    def test_two_series_weighted_equals_simple_equals_pair(
        self, frank_ind_system
    ):
        layout, system = frank_ind_system
        fit = system.pair_fits[0]
        assert np.allclose(system.theta_weighted, fit.theta_natural, atol=1e-10)
        assert np.allclose(system.theta_mean, fit.theta_natural, atol=1e-10)
        assert np.allclose(system.theta("weighted"), system.theta_weighted)

    def test_combined_matches_direct_synthesis(self, gumbel3_system):
        _, _, system = gumbel3_system
        layout = system.layout
        assert np.allclose(system.theta_mean,
                           simple_mean(system.pair_fits, layout), atol=1e-12)
        assert np.allclose(system.theta_weighted,
                           weighted_mean(system.pair_fits, layout), atol=1e-12)

    def test_records_cover_every_parameter_twice(self, gumbel3_system):
        _, _, system = gumbel3_system
        records = system.records()
        layout = system.layout
        assert len(records) == 2 * layout.n_params
        methods = {rec["method"] for rec in records}
        assert methods == {"mean", "weighted"}
        names = [rec["name"] for rec in records if rec["method"] == "weighted"]
        assert names == list(layout.param_names())
        for rec in records:
            assert rec["se"] >= 0.0
            if rec["se"] > 0.0:
                assert 0.0 <= rec["p"] <= 1.0

    def test_se_and_cov_accessors_agree(self, gumbel3_system):
        _, _, system = gumbel3_system
        for method in ("mean", "weighted"):
            se = system.se(method)
            assert np.allclose(
                se, np.sqrt(np.maximum(np.diag(system.cov(method)), 0.0))
            )
        with pytest.raises(DomainError):
            system.theta("mode")

    def test_combine_fits_round_trip(self, gumbel3_system):
        _, _, system = gumbel3_system
        rebuilt = combine_fits(system.pair_fits, system.layout)
        assert np.array_equal(rebuilt.theta_weighted, system.theta_weighted)
        assert np.array_equal(rebuilt.cov_stacked, system.cov_stacked)

    def test_pair_model_at_combined_estimate(self, gumbel3_system):
        scen, _, system = gumbel3_system
        model = system.pair_model(0, 1, "weighted")
        layout = system.layout
        theta = system.theta_weighted
        block = theta[layout.marginal_slice(0)]
        assert np.allclose(model.params_r.intercepts, block[:2])
        assert np.allclose(model.params_r.slopes, block[2:])
        assert float(model.copula.params) == theta[layout.copula_index(0, 1)]
