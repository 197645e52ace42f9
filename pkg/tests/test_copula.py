"""Copula CDFs, samplers, and parameter transforms.

Dependence oracles here never reuse the package's evaluation route: CDFs
are recomputed from local closed-form expressions and Kendall's tau comes
from numerical double integration of those local formulas.
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from ordcop import (
    CopulaFamily,
    CopulaSpec,
    DomainError,
    OrdcopError,
    bivariate_cdf,
    bvn_cdf,
    copula_cdf,
    copula_sample,
)
from ordcop.copula import from_unconstrained, to_unconstrained, unconstrained_jacobian

UNIT = st.floats(0.0, 1.0, allow_nan=False)


def gumbel_cdf_local(u, v, phi):
    return np.exp(-(((-np.log(u)) ** phi + (-np.log(v)) ** phi) ** (1.0 / phi)))


def frank_cdf_local(u, v, phi):
    num = np.expm1(-phi * u) * np.expm1(-phi * v)
    return -np.log1p(num / np.expm1(-phi)) / phi


def tau_double_integral(cdf, n: int = 64, h: float = 1e-6) -> float:
    """Kendall's tau of a bivariate copula by Gauss-Legendre quadrature.

    Uses tau = 1 - 4 int int dC/du * dC/dv du dv with central-difference
    partials of the supplied CDF; nodes are interior so u +- h stays in
    (0, 1).
    """
    x, w = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w
    uu, vv = np.meshgrid(u, u, indexing="ij")
    weight = np.outer(wu, wu)
    d1 = (cdf(uu + h, vv) - cdf(uu - h, vv)) / (2.0 * h)
    d2 = (cdf(uu, vv + h) - cdf(uu, vv - h)) / (2.0 * h)
    return 1.0 - 4.0 * float(np.sum(weight * d1 * d2))


def sample_taus(spec: CopulaSpec, k: int, n: int, seed: int) -> list[float]:
    u = copula_sample(spec, k, n, np.random.default_rng(seed))
    return [
        stats.kendalltau(u[:, a], u[:, b]).statistic
        for a in range(k)
        for b in range(a + 1, k)
    ]


ALL_SPECS = [
    CopulaSpec.gumbel(1.0),
    CopulaSpec.gumbel(2.0),
    CopulaSpec.gumbel(7.5),
    CopulaSpec.frank(-4.0),
    CopulaSpec.frank(0.4),
    CopulaSpec.frank(9.0),
    CopulaSpec.gaussian(0.0),
    CopulaSpec.gaussian(0.55),
    CopulaSpec.gaussian(-0.8),
]


class TestCdfValues:
    def test_independence_gumbel_is_product(self):
        assert copula_cdf(CopulaSpec.gumbel(1.0), (0.3, 0.7)) == pytest.approx(
            0.21, abs=1e-12
        )

    def test_frank_near_zero_matches_product(self):
        val = copula_cdf(CopulaSpec.frank(1e-9), (0.3, 0.7))
        assert val == pytest.approx(0.21, abs=1e-6)

    def test_gaussian_zero_correlation_is_product(self):
        assert copula_cdf(CopulaSpec.gaussian(0.0), (0.4, 0.9)) == pytest.approx(
            0.36, abs=1e-12
        )

    def test_gumbel_trivariate_closed_form(self):
        # generator sum for three equal coordinates: (3 (ln 2)^2)^(1/2)
        expected = math.exp(-math.sqrt(3.0 * math.log(2.0) ** 2))
        val = copula_cdf(CopulaSpec.gumbel(2.0), (0.5, 0.5, 0.5))
        assert val == pytest.approx(expected, rel=1e-12)

    def test_bivariate_cdf_matches_local_formulas(self):
        u = np.linspace(0.02, 0.98, 25)
        v = u[::-1]
        np.testing.assert_allclose(
            bivariate_cdf(CopulaFamily.GUMBEL, 2.4, u, v),
            gumbel_cdf_local(u, v, 2.4),
            atol=1e-12,
        )
        np.testing.assert_allclose(
            bivariate_cdf(CopulaFamily.FRANK, 4.41, u, v),
            frank_cdf_local(u, v, 4.41),
            atol=1e-12,
        )
        np.testing.assert_allclose(
            bivariate_cdf(CopulaFamily.GAUSSIAN, 0.6, u, v),
            bvn_cdf(special.ndtri(u), special.ndtri(v), 0.6),
            atol=1e-12,
        )


class TestAxioms:
    @pytest.mark.parametrize("spec", ALL_SPECS, ids=str)
    def test_uniform_margins_on_grid(self, spec):
        grid = np.linspace(0.0, 1.0, 101)
        left = np.array([copula_cdf(spec, (u, 1.0)) for u in grid])
        right = np.array([copula_cdf(spec, (1.0, u)) for u in grid])
        np.testing.assert_allclose(left, grid, atol=1e-10)
        np.testing.assert_allclose(right, grid, atol=1e-10)

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=str)
    def test_groundedness(self, spec):
        for u in np.linspace(0.0, 1.0, 11):
            assert copula_cdf(spec, (u, 0.0)) == 0.0
            assert copula_cdf(spec, (0.0, u)) == 0.0

    @settings(max_examples=150, deadline=None)
    @given(
        u1=UNIT, u2=UNIT, v1=UNIT, v2=UNIT,
        pick=st.integers(0, len(ALL_SPECS) - 1),
    )
    def test_rectangle_volumes_nonnegative(self, u1, u2, v1, v2, pick):
        spec = ALL_SPECS[pick]
        a, b = sorted((u1, u2))
        c, d = sorted((v1, v2))
        vol = (
            copula_cdf(spec, (b, d))
            - copula_cdf(spec, (a, d))
            - copula_cdf(spec, (b, c))
            + copula_cdf(spec, (a, c))
        )
        assert vol >= -1e-12

    def test_gumbel_cdf_nondecreasing_in_parameter(self):
        vals = [
            copula_cdf(CopulaSpec.gumbel(phi), (0.5, 0.5))
            for phi in np.linspace(1.0, 10.0, 40)
        ]
        assert np.all(np.diff(vals) >= -1e-14)

    def test_unsupported_arity_rejected(self):
        with pytest.raises(OrdcopError):
            copula_cdf(CopulaSpec.gumbel(2.0), (0.5,))
        # scalar-parameter Gaussian evaluates pairs only
        with pytest.raises(OrdcopError):
            copula_cdf(CopulaSpec.gaussian(0.5), (0.5, 0.5, 0.5))
        # exchangeable Frank beyond pairs exists only for positive dependence
        with pytest.raises(OrdcopError):
            copula_cdf(CopulaSpec.frank(-2.0), (0.5, 0.5, 0.5))

    def test_coordinates_outside_unit_interval_rejected(self):
        with pytest.raises(DomainError):
            copula_cdf(CopulaSpec.gumbel(2.0), (0.5, 1.2))
        with pytest.raises(DomainError):
            copula_cdf(CopulaSpec.frank(1.0), (-0.1, 0.5))


class TestSampling:
    def test_gumbel_sample_tau_matches_integral_oracle(self):
        oracle = tau_double_integral(lambda a, b: gumbel_cdf_local(a, b, 2.0))
        assert oracle == pytest.approx(0.5, abs=1e-4)
        for tau in sample_taus(CopulaSpec.gumbel(2.0), 3, 50_000, 5):
            assert tau == pytest.approx(oracle, abs=0.02)

    def test_frank_sample_tau_matches_integral_oracle(self):
        oracle = tau_double_integral(lambda a, b: frank_cdf_local(a, b, 4.41))
        for tau in sample_taus(CopulaSpec.frank(4.41), 2, 50_000, 6):
            assert tau == pytest.approx(oracle, abs=0.02)

    def test_gaussian_identity_matrix_sample_tau_near_zero(self):
        spec = CopulaSpec.gaussian_matrix(np.eye(3))
        for tau in sample_taus(spec, 3, 50_000, 7):
            assert abs(tau) <= 0.02

    def test_gaussian_scalar_sample_tau_matches_arcsine(self):
        oracle = 2.0 * math.asin(0.55) / math.pi
        for tau in sample_taus(CopulaSpec.gaussian(0.55), 2, 50_000, 8):
            assert tau == pytest.approx(oracle, abs=0.02)

    def test_zero_draws_gives_empty_array(self):
        out = copula_sample(CopulaSpec.frank(2.0), 2, 0, np.random.default_rng(0))
        assert out.shape == (0, 2)

    @pytest.mark.parametrize(
        "spec",
        [CopulaSpec.gumbel(2.5), CopulaSpec.frank(3.0), CopulaSpec.gaussian(0.5)],
        ids=str,
    )
    def test_empirical_cdf_matches_copula_cdf_at_probe_points(self, spec):
        n = 40_000
        u = copula_sample(spec, 2, n, np.random.default_rng(42))
        bound = 3.0 / math.sqrt(n)
        for point in ((0.3, 0.6), (0.7, 0.4), (0.5, 0.5), (0.9, 0.2)):
            emp = np.mean(np.all(u <= np.asarray(point), axis=1))
            assert abs(emp - copula_cdf(spec, point)) <= bound

    def test_trivariate_gumbel_empirical_cdf_at_probe_point(self):
        n = 40_000
        spec = CopulaSpec.gumbel(2.0)
        u = copula_sample(spec, 3, n, np.random.default_rng(43))
        emp = np.mean(np.all(u <= 0.5, axis=1))
        assert abs(emp - copula_cdf(spec, (0.5, 0.5, 0.5))) <= 3.0 / math.sqrt(n)

    def test_sample_values_lie_in_unit_cube(self):
        for spec in ALL_SPECS:
            u = copula_sample(spec, 2, 500, np.random.default_rng(1))
            assert np.all(u > 0.0) and np.all(u < 1.0)
        for spec in (CopulaSpec.gumbel(4.0), CopulaSpec.frank(2.0)):
            u = copula_sample(spec, 4, 500, np.random.default_rng(2))
            assert np.all(u > 0.0) and np.all(u < 1.0)

    def test_same_seed_reproduces_sample(self):
        a = copula_sample(CopulaSpec.gumbel(3.0), 3, 100, np.random.default_rng(9))
        b = copula_sample(CopulaSpec.gumbel(3.0), 3, 100, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_frank_above_two_series_requires_positive_parameter(self):
        with pytest.raises(OrdcopError):
            copula_sample(CopulaSpec.frank(-2.0), 3, 10, np.random.default_rng(0))


class TestTransforms:
    def test_unconstrained_zero_maps_to_independence_neighborhood(self):
        assert from_unconstrained(CopulaFamily.GUMBEL, 0.0).scalar == pytest.approx(2.0)
        assert from_unconstrained(CopulaFamily.GAUSSIAN, 0.0).scalar == 0.0
        assert from_unconstrained(CopulaFamily.FRANK, 0.0).scalar == 0.0

    @pytest.mark.parametrize(
        "spec",
        [
            CopulaSpec.frank(4.41),
            CopulaSpec.frank(-2.2),
            CopulaSpec.gumbel(1.8),
            CopulaSpec.gaussian(0.62),
        ],
        ids=str,
    )
    def test_round_trip(self, spec):
        theta = to_unconstrained(spec)
        back = from_unconstrained(spec.family, theta)
        assert back.scalar == pytest.approx(spec.scalar, rel=1e-12, abs=1e-12)

    def test_jacobian_matches_finite_difference(self):
        h = 1e-6
        for family, theta in (
            (CopulaFamily.GUMBEL, 0.3),
            (CopulaFamily.FRANK, -1.2),
            (CopulaFamily.GAUSSIAN, 0.4),
        ):
            fd = (
                from_unconstrained(family, theta + h).scalar
                - from_unconstrained(family, theta - h).scalar
            ) / (2.0 * h)
            assert unconstrained_jacobian(family, theta) == pytest.approx(fd, rel=1e-6)


class TestSpecValidation:
    def test_gumbel_parameter_below_one_rejected(self):
        with pytest.raises(DomainError):
            CopulaSpec.gumbel(0.8)

    def test_gaussian_correlation_outside_open_interval_rejected(self):
        with pytest.raises(DomainError):
            CopulaSpec.gaussian(1.0)

    def test_non_positive_definite_matrix_rejected(self):
        bad = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
        with pytest.raises(DomainError):
            CopulaSpec.gaussian_matrix(bad)

    def test_matrix_parameter_only_for_gaussian(self):
        with pytest.raises(OrdcopError):
            CopulaSpec(CopulaFamily.GUMBEL, np.eye(2))
