"""Shared fixtures: small fitted systems reused across test modules."""
import numpy as np
import pytest

from ordcop import (
    Coding,
    CopulaFamily,
    CopulaSpec,
    MarginalParams,
    MarginalSpec,
    PairFit,
    PairModel,
    ParamLayout,
    ScenarioConfig,
    StateSpace,
    combine_fits,
    fit_pair,
    fit_system,
    initial_pair_model,
    run_replication_study,
    simulate_system,
    trivariate_gumbel_scenario,
)

TERNARY = StateSpace((1, 2, 3))


def two_series_scenario(n_obs: int, copula: CopulaSpec, seed: int = 13) -> ScenarioConfig:
    """Two ternary indicator-coded series with mild autoregression."""
    spaces = (TERNARY, TERNARY)
    specs = tuple(MarginalSpec(k, 1, Coding.INDICATOR, spaces) for k in range(2))
    params = (
        MarginalParams((-0.5, 0.5), (0.5, 0.4, 0.15, 0.25)),
        MarginalParams((-0.3, 0.7), (0.15, 0.25, 0.30, 0.60)),
    )
    return ScenarioConfig(specs, params, copula, n_obs=n_obs, seed=seed)


def truth_system(scen: ScenarioConfig):
    """SystemFit pinned exactly at a scenario's true parameters.

    Identity curvature and zero scores: useful when a test needs exact,
    noise-free parameter values behind the SystemFit interface.
    """
    layout = scen.layout
    truth = np.concatenate([
        scen.marginal_truth(),
        [scen.pair_truth(r, s) for r, s in layout.pairs],
    ])
    fits = []
    for r, s in layout.pairs:
        idx = layout.pair_indices(r, s)
        model = PairModel(
            pair=(r, s),
            spec_r=scen.specs[r],
            spec_s=scen.specs[s],
            params_r=scen.params[r],
            params_s=scen.params[s],
            copula=CopulaSpec(scen.copula.family, scen.pair_truth(r, s)),
        )
        fits.append(PairFit(
            pair=(r, s),
            model=model,
            theta_natural=truth[idx],
            theta_unconstrained=truth[idx].copy(),
            hessian=np.eye(idx.size),
            scores=np.zeros((scen.n_obs - scen.lag_order, idx.size)),
            loglik=0.0,
            n_obs=scen.n_obs,
            converged=True,
            n_iter=1,
            grad_norm=0.0,
        ))
    return combine_fits(fits, layout)


@pytest.fixture(scope="session")
def gumbel3_scenario():
    return trivariate_gumbel_scenario(n_obs=1000)


@pytest.fixture(scope="session")
def gumbel3_states(gumbel3_scenario):
    return simulate_system(gumbel3_scenario, np.random.default_rng([812, 0]))


@pytest.fixture(scope="session")
def gumbel3_pair01_fit(gumbel3_scenario, gumbel3_states):
    layout = gumbel3_scenario.layout
    model = initial_pair_model(layout, 0, 1, gumbel3_states)
    return fit_pair(model, gumbel3_states)


@pytest.fixture(scope="session")
def gumbel3_system(gumbel3_scenario):
    """Full two-stage fit of the three-series system at a smaller T."""
    scen = trivariate_gumbel_scenario(n_obs=600)
    states = simulate_system(scen, np.random.default_rng([441, 0]))
    return scen, states, fit_system(states, scen.layout)


@pytest.fixture(scope="session")
def binary3_system():
    """Fitted three-series binary system for forecast enumeration checks."""
    spaces = tuple(StateSpace((1, 2)) for _ in range(3))
    specs = tuple(MarginalSpec(k, 1, Coding.INDICATOR, spaces) for k in range(3))
    params = (
        MarginalParams((0.2,), (0.6, -0.4, 0.3)),
        MarginalParams((-0.3,), (0.2, 0.5, -0.2)),
        MarginalParams((0.1,), (-0.5, 0.3, 0.4)),
    )
    scen = ScenarioConfig(specs, params, CopulaSpec.gumbel(2.0),
                          n_obs=400, seed=31)
    states = simulate_system(scen, np.random.default_rng(31))
    return scen, states, fit_system(states, scen.layout)


@pytest.fixture(scope="session")
def gumbel3_study():
    """Replication studies of the three-series scenario at three sizes.

    This is the expensive shared computation (about ten minutes); both the
    simulation-facing tests and the acceptance suite read from it.
    """
    return {
        n_obs: run_replication_study(
            trivariate_gumbel_scenario(n_obs=n_obs, n_replications=50)
        )
        for n_obs in (100, 500, 1000)
    }
