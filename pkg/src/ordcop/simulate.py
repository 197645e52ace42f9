"""Simulation of K-variate ordinal systems and replication studies.

Generation follows the model's own construction: a stream of copula
uniform vectors is pushed through each series' conditional inverse CDF,
with the evolving history feeding the regressors.  A burn-in prefix washes
out the arbitrary initialization before the sample is retained.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .combine import OptimizerConfig, ParamLayout, SystemFit, fit_system
from .copula import CopulaFamily, CopulaSpec, copula_sample
from .exceptions import DataError, DomainError, OrdcopError
from .marginal import (
    Coding,
    MarginalParams,
    MarginalSpec,
    StateSpace,
    cond_cdf,
    inv_cdf,
)

DEFAULT_BURN_IN = 100


@dataclass(frozen=True)
class ScenarioConfig:
    """A fully specified data-generating process plus study sizes."""

    specs: tuple[MarginalSpec, ...]
    params: tuple[MarginalParams, ...]
    copula: CopulaSpec
    n_obs: int
    burn_in: int = DEFAULT_BURN_IN
    n_replications: int = 100
    seed: int = 0
    series_names: tuple[str, ...] | None = None

    def __post_init__(self):
        specs = tuple(self.specs)
        params = tuple(self.params)
        if len(specs) != len(params):
            raise DomainError("one parameter set per marginal spec is required")
        # layout construction validates spec consistency
        layout = ParamLayout(specs, self.copula.family, self.series_names)
        for spec, par in zip(specs, params):
            if par.intercepts.size != spec.n_intercepts:
                raise DomainError(
                    f"series {spec.series_index}: expected "
                    f"{spec.n_intercepts} intercepts, got {par.intercepts.size}"
                )
            if par.slopes.size != spec.n_regressors:
                raise DomainError(
                    f"series {spec.series_index}: expected "
                    f"{spec.n_regressors} slopes, got {par.slopes.size}"
                )
        p = specs[0].lag_order
        if self.n_obs <= p:
            raise DomainError(
                f"n_obs must exceed the lag order {p}, got {self.n_obs}"
            )
        if self.burn_in < p:
            raise DomainError(
                f"burn_in must be >= lag order {p}, got {self.burn_in}"
            )
        if self.n_replications < 1:
            raise DomainError("n_replications must be positive")
        if self.copula.is_matrix and self.copula.params.shape[0] != len(specs):
            raise DomainError(
                "generation copula matrix order must equal the number of series"
            )
        object.__setattr__(self, "specs", specs)
        object.__setattr__(self, "params", params)
        object.__setattr__(
            self, "series_names", layout.series_names
        )

    @property
    def n_series(self) -> int:
        return len(self.specs)

    @property
    def lag_order(self) -> int:
        return self.specs[0].lag_order

    @property
    def state_spaces(self) -> tuple[StateSpace, ...]:
        return self.specs[0].state_spaces

    @property
    def layout(self) -> ParamLayout:
        return ParamLayout(self.specs, self.copula.family, self.series_names)

    @property
    def exchangeable(self) -> bool:
        """True when a single scalar copula parameter drives every pair."""
        return not self.copula.is_matrix

    def pair_truth(self, r: int, s: int) -> float:
        """True copula parameter for one pair of series."""
        if self.copula.is_matrix:
            return float(self.copula.params[r, s])
        return float(self.copula.params)

    def marginal_truth(self) -> np.ndarray:
        return np.concatenate([par.vector() for par in self.params])

    def study_names(self) -> tuple[str, ...]:
        """Parameter names of the study vector (see study_truth)."""
        layout = self.layout
        names = layout.param_names()
        if self.exchangeable:
            return names[: layout.n_marginal] + ("copula",)
        return names

    def study_truth(self) -> np.ndarray:
        """True values of the study vector.

        An exchangeable generator shares one copula parameter across all
        pairs, so the study tracks a single pooled copula coordinate; a
        matrix generator contributes one coordinate per pair.
        """
        marg = self.marginal_truth()
        if self.exchangeable:
            return np.concatenate([marg, [float(self.copula.params)]])
        pair_vals = [self.pair_truth(r, s) for r, s in self.layout.pairs]
        return np.concatenate([marg, pair_vals])


def simulate_system(config: ScenarioConfig, rng=None) -> np.ndarray:
    """Generate one (n_obs, K) panel of 1-based states.

    Copula uniform vectors are drawn for burn_in + n_obs time points; the
    first lag_order state vectors are uniform over each series' states, and
    every later state is the conditional inverse CDF of its uniform given
    the evolving history.  The burn-in prefix is discarded.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    k = config.n_series
    p = config.lag_order
    total = config.n_obs + config.burn_in
    u = copula_sample(config.copula, k, total, rng)
    states = np.empty((total, k), dtype=np.int64)
    for j, space in enumerate(config.state_spaces):
        states[:p, j] = rng.integers(1, space.n_states + 1, size=p)
    d = [space.n_states for space in config.state_spaces]
    specs = config.specs
    params = config.params
    for t in range(p, total):
        hist = states[t - p:t]
        for j in range(k):
            gam = cond_cdf(params[j], _regressors(specs[j], hist), d[j])
            states[t, j] = inv_cdf(gam, u[t, j])
    return states[config.burn_in:]


def _regressors(spec: MarginalSpec, hist: np.ndarray) -> np.ndarray:
    # inline, non-validating version of build_regressors for the hot loop
    if spec.coding is Coding.LINEAR:
        cols = [
            space.numeric_labels[hist[-lag, m] - 1]
            for lag in range(1, spec.lag_order + 1)
            for m, space in enumerate(spec.state_spaces)
        ]
        return np.asarray(cols, dtype=float)
    out = np.zeros(spec.n_regressors)
    pos = 0
    for lag in range(1, spec.lag_order + 1):
        for m, space in enumerate(spec.state_spaces):
            width = space.n_states - 1
            level = hist[-lag, m]
            if level > 1:
                out[pos + level - 2] = 1.0
            pos += width
    return out


@dataclass(frozen=True)
class ReplicationStudy:
    """Estimates and errors across replications of one scenario."""

    config: ScenarioConfig
    methods: tuple[str, ...]
    names: tuple[str, ...]
    truth: np.ndarray
    estimates: Mapping[str, np.ndarray]
    mse: Mapping[str, np.ndarray]
    converged: np.ndarray
    flags: tuple[tuple[str, ...], ...] = field(repr=False, default=())

    @property
    def n_excluded(self) -> int:
        return int((~self.converged).sum())

    def kept(self, method: str) -> np.ndarray:
        """Estimates of converged replications only, (B_ok, n) array."""
        return np.asarray(self.estimates[method])[self.converged]

    def mse_summary(self, method: str) -> dict:
        vals = np.asarray(self.mse[method])[self.converged]
        qs = np.quantile(vals, [0.25, 0.5, 0.75]) if vals.size else [np.nan] * 3
        return {
            "n": int(vals.size),
            "n_excluded": self.n_excluded,
            "q25": float(qs[0]),
            "median": float(qs[1]),
            "q75": float(qs[2]),
            "mean": float(vals.mean()) if vals.size else float("nan"),
        }

    def param_summary(self, method: str) -> dict:
        est = self.kept(method)
        qs = np.quantile(est, [0.25, 0.5, 0.75], axis=0)
        return {
            "names": self.names,
            "truth": self.truth,
            "q25": qs[0],
            "median": qs[1],
            "q75": qs[2],
            "variance": est.var(axis=0, ddof=1),
        }

    def records(self) -> list[dict]:
        """One row per replication, method, and parameter."""
        rows: list[dict] = []
        for method in self.methods:
            est = np.asarray(self.estimates[method])
            mse = np.asarray(self.mse[method])
            for b in range(est.shape[0]):
                for name, tru, val in zip(self.names, self.truth, est[b]):
                    rows.append({
                        "replication": b,
                        "method": method,
                        "name": name,
                        "truth": float(tru),
                        "estimate": float(val),
                        "mse": float(mse[b]),
                        "converged": bool(self.converged[b]),
                    })
        return rows


def _study_vector(
    config: ScenarioConfig, sysfit: SystemFit, method: str
) -> np.ndarray:
    """Map a system fit onto the scenario's study vector.

    With an exchangeable generator the per-pair copula estimates are pooled
    into one coordinate: equal weights for the simple mean and diagonal
    curvature weights for the weighted variant.
    """
    layout = config.layout
    theta = sysfit.theta(method)
    marg = theta[: layout.n_marginal]
    cop_vals = theta[layout.n_marginal:]
    if not config.exchangeable:
        return np.concatenate([marg, cop_vals])
    if method == "weighted":
        w = np.array([
            max(fit.hessian[-1, -1], 0.0) for fit in sysfit.pair_fits
        ])
        if not w.sum() > 0:
            w = np.ones_like(w)
    else:
        w = np.ones(len(cop_vals))
    pooled = float(w @ cop_vals / w.sum())
    return np.concatenate([marg, [pooled]])


def run_replication_study(
    config: ScenarioConfig,
    estimators: str | Sequence[str] = ("mean", "weighted"),
    optimizer: OptimizerConfig | None = None,
) -> ReplicationStudy:
    """Repeated simulate-then-fit over derived rng streams.

    Each replication b draws from ``default_rng([seed, b])``, so results do
    not depend on execution order.  Replications whose pair fits did not
    all converge are kept in the record set but excluded from summaries.
    """
    if isinstance(estimators, str):
        methods = (estimators,)
    else:
        methods = tuple(estimators)
    for method in methods:
        if method not in ("mean", "weighted"):
            raise DomainError(f"unknown estimator: {method!r}")
    truth = config.study_truth()
    names = config.study_names()
    layout = config.layout
    b_total = config.n_replications
    estimates = {m: np.full((b_total, truth.size), np.nan) for m in methods}
    mse = {m: np.full(b_total, np.nan) for m in methods}
    converged = np.zeros(b_total, dtype=bool)
    flags: list[tuple[str, ...]] = []
    for b in range(b_total):
        rng = np.random.default_rng([config.seed, b])
        states = simulate_system(config, rng)
        sysfit = fit_system(states, layout, optimizer)
        converged[b] = sysfit.converged
        flags.append(sysfit.flags)
        for method in methods:
            vec = _study_vector(config, sysfit, method)
            estimates[method][b] = vec
            mse[method][b] = float(np.mean((vec - truth) ** 2))
    return ReplicationStudy(
        config=config,
        methods=methods,
        names=names,
        truth=truth,
        estimates=estimates,
        mse=mse,
        converged=converged,
        flags=tuple(flags),
    )


def trivariate_gumbel_scenario(
    n_obs: int,
    n_replications: int = 100,
    seed: int = 812,
    burn_in: int = DEFAULT_BURN_IN,
) -> ScenarioConfig:
    """Three ternary series with indicator coding under a Gumbel copula.

    First-order autoregression on all three lagged series; one shared
    copula parameter phi = 2 couples every pair.
    """
    spaces = tuple(StateSpace((1, 2, 3)) for _ in range(3))
    specs = tuple(
        MarginalSpec(k, 1, Coding.INDICATOR, spaces) for k in range(3)
    )
    params = (
        MarginalParams([-0.5, 0.5], [0.5, 0.4, 0.15, 0.25, 0.10, 0.20]),
        MarginalParams([-0.3, 0.7], [0.15, 0.25, 0.30, 0.60, 0.25, 0.40]),
        MarginalParams([-0.4, 0.8], [0.20, 0.30, 0.15, 0.25, 0.40, 0.70]),
    )
    return ScenarioConfig(
        specs=specs,
        params=params,
        copula=CopulaSpec.gumbel(2.0),
        n_obs=n_obs,
        burn_in=burn_in,
        n_replications=n_replications,
        seed=seed,
    )


def trivariate_gaussian_scenario(
    n_obs: int,
    n_replications: int = 100,
    seed: int = 271,
    burn_in: int = DEFAULT_BURN_IN,
) -> ScenarioConfig:
    """Three ternary series with linear coding under a Gaussian copula.

    First-order autoregression with one numeric regressor per lagged
    series; the generating correlation matrix is non-exchangeable.
    """
    spaces = tuple(StateSpace((1, 2, 3)) for _ in range(3))
    specs = tuple(
        MarginalSpec(k, 1, Coding.LINEAR, spaces) for k in range(3)
    )
    params = (
        MarginalParams([-0.5, 0.5], [0.4, 0.2, 0.15]),
        MarginalParams([-0.3, 0.7], [0.15, 0.35, 0.2]),
        MarginalParams([-0.4, 0.8], [0.3, 0.2, 0.45]),
    )
    corr = np.array([
        [1.0, 0.5, -0.3],
        [0.5, 1.0, 0.2],
        [-0.3, 0.2, 1.0],
    ])
    return ScenarioConfig(
        specs=specs,
        params=params,
        copula=CopulaSpec.gaussian_matrix(corr),
        n_obs=n_obs,
        burn_in=burn_in,
        n_replications=n_replications,
        seed=seed,
    )


# -- configuration file schema ------------------------------------------


def scenario_to_dict(config: ScenarioConfig) -> dict:
    """Plain-data form of a scenario, suitable for JSON serialization."""
    cop: dict = {"family": config.copula.family.value}
    if config.copula.is_matrix:
        cop["matrix"] = config.copula.params.tolist()
    else:
        cop["param"] = float(config.copula.params)
    return {
        "labels": [list(s.labels) for s in config.state_spaces],
        "lag_order": config.lag_order,
        "coding": config.specs[0].coding.value,
        "intercepts": [p.intercepts.tolist() for p in config.params],
        "slopes": [p.slopes.tolist() for p in config.params],
        "copula": cop,
        "n_obs": config.n_obs,
        "burn_in": config.burn_in,
        "n_replications": config.n_replications,
        "seed": config.seed,
        "series_names": list(config.series_names),
    }


def scenario_from_dict(data: Mapping) -> ScenarioConfig:
    """Parse a scenario from plain data, validating all fields."""
    try:
        labels = data["labels"]
        spaces = tuple(StateSpace(tuple(lab)) for lab in labels)
        lag = int(data.get("lag_order", 1))
        coding = Coding(str(data.get("coding", "indicator")))
        specs = tuple(
            MarginalSpec(k, lag, coding, spaces) for k in range(len(spaces))
        )
        params = tuple(
            MarginalParams(inter, slo)
            for inter, slo in zip(data["intercepts"], data["slopes"], strict=True)
        )
        cop = data["copula"]
        family = CopulaFamily(str(cop["family"]))
        if "matrix" in cop:
            if family is not CopulaFamily.GAUSSIAN:
                raise DataError(
                    "matrix copula parameters require the gaussian family"
                )
            spec = CopulaSpec.gaussian_matrix(np.asarray(cop["matrix"], dtype=float))
        else:
            spec = CopulaSpec(family, np.asarray(float(cop["param"])))
        return ScenarioConfig(
            specs=specs,
            params=params,
            copula=spec,
            n_obs=int(data["n_obs"]),
            burn_in=int(data.get("burn_in", DEFAULT_BURN_IN)),
            n_replications=int(data.get("n_replications", 100)),
            seed=int(data.get("seed", 0)),
            series_names=(
                tuple(data["series_names"]) if "series_names" in data else None
            ),
        )
    except OrdcopError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid scenario configuration: {exc}") from exc
