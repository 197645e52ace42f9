"""Bivariate models and their likelihood: one copula over two ordinal margins.

The joint PMF of a pair (r, s) at time t is the copula rectangle

    f(z_r, z_s | history) = C(F_r(z_r), F_s(z_s)) - C(F_r(z_r - 1), F_s(z_s))
                          - C(F_r(z_r), F_s(z_s - 1)) + C(F_r(z_r - 1), F_s(z_s - 1))

with F(0) = 0 and F(d) = 1, floored at PROB_FLOOR before logs.  Fitting
maximizes the summed log PMF over t = p+1..T by quasi-Newton iterations on an
unconstrained parameterization (log intercept increments, transformed copula
parameter) with finite-difference gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, special

from .copula import (
    CopulaFamily,
    CopulaSpec,
    bivariate_cdf,
    natural_from_unconstrained,
    to_unconstrained,
    unconstrained_jacobian,
)
from .exceptions import DomainError
from .marginal import (
    PROB_FLOOR,
    MarginalParams,
    MarginalSpec,
    cond_cdf,
    cumulative_rows,
    design_matrix,
    intercept_jacobian,
    intercepts_to_raw,
    raw_to_intercepts,
)

# Starting copula parameters: the family's (near-)independence member.
COPULA_START = {
    CopulaFamily.GUMBEL: 1.0 + 1e-6,
    CopulaFamily.FRANK: 1e-3,
    CopulaFamily.GAUSSIAN: 0.0,
}

# Unconstrained coordinates beyond this magnitude are flagged as separation.
PARAM_GUARD = 30.0

# Cap on the unconstrained Gumbel coordinate before exponentiation; line
# searches may probe far beyond any meaningful value.
_EXP_CAP = 700.0


@dataclass(frozen=True)
class PairModel:
    """Two marginal models plus the bivariate copula linking them."""

    pair: tuple[int, int]
    spec_r: MarginalSpec
    spec_s: MarginalSpec
    params_r: MarginalParams
    params_s: MarginalParams
    copula: CopulaSpec

    def __post_init__(self):
        r, s = self.pair
        if not 0 <= r < s:
            raise DomainError(f"pair must satisfy 0 <= r < s, got {self.pair}")
        if self.spec_r.series_index != r or self.spec_s.series_index != s:
            raise DomainError(
                f"marginal specs index series ({self.spec_r.series_index}, "
                f"{self.spec_s.series_index}) but the pair is {self.pair}"
            )
        if self.spec_r.lag_order != self.spec_s.lag_order:
            raise DomainError("both marginals must share the same lag order")
        if self.spec_r.state_spaces != self.spec_s.state_spaces:
            raise DomainError("both marginals must share the system's state spaces")
        if self.copula.is_matrix:
            raise DomainError("a pair model takes a scalar-parameter copula")
        for spec, params, tag in (
            (self.spec_r, self.params_r, "r"),
            (self.spec_s, self.params_s, "s"),
        ):
            if params.intercepts.size != spec.n_intercepts:
                raise DomainError(f"params_{tag}: wrong number of intercepts")
            if params.slopes.size != spec.n_regressors:
                raise DomainError(
                    f"params_{tag}: slope vector has length {params.slopes.size}, "
                    f"spec wants {spec.n_regressors}"
                )
        object.__setattr__(self, "pair", (int(r), int(s)))

    @property
    def lag_order(self) -> int:
        return self.spec_r.lag_order

    @property
    def n_params(self) -> int:
        return self.spec_r.n_params + self.spec_s.n_params + 1

    def theta_natural(self) -> np.ndarray:
        return np.concatenate(
            [self.params_r.vector(), self.params_s.vector(), [self.copula.scalar]]
        )


@dataclass(frozen=True)
class OptimizerConfig:
    max_iter: int = 500
    gtol: float = 1e-6
    start: object = "empirical"  # "empirical" | "model" | unconstrained vector
    guard: float = PARAM_GUARD


@dataclass(frozen=True)
class PairFit:
    """Result of one pair estimation."""

    pair: tuple[int, int]
    model: PairModel
    theta_natural: np.ndarray
    theta_unconstrained: np.ndarray
    hessian: np.ndarray            # negative Hessian of summed log-lik, natural scale
    scores: np.ndarray             # (T - p, n_params) per-time score vectors
    loglik: float
    n_obs: int
    converged: bool
    n_iter: int
    grad_norm: float
    flags: tuple[str, ...] = field(default_factory=tuple)


# ---------------------------------------------------------------------------
# PMF evaluation
# ---------------------------------------------------------------------------

def _corner_cdfs(gamma: np.ndarray, z: np.ndarray):
    """Upper and lower CDF corners F(z), F(z-1) from CDF rows; F(0) = 0."""
    rows = np.arange(z.shape[0])
    upper = gamma[rows, z - 1]
    lower = np.where(z >= 2, gamma[rows, np.maximum(z - 2, 0)], 0.0)
    return upper, lower


def pair_pmf(model: PairModel, z_r: int, z_s: int, history) -> float:
    """Joint probability of observing (z_r, z_s) given the shared history."""
    d_r, d_s = model.spec_r.n_states, model.spec_s.n_states
    if not 1 <= z_r <= d_r:
        raise DomainError(f"z_r={z_r} outside 1..{d_r}")
    if not 1 <= z_s <= d_s:
        raise DomainError(f"z_s={z_s} outside 1..{d_s}")
    return float(pair_pmf_matrix(model, history)[z_r - 1, z_s - 1])


def pair_pmf_matrix(model: PairModel, history) -> np.ndarray:
    """All d_r x d_s joint probabilities for one history."""
    from .marginal import build_regressors  # local to keep import graph flat

    x_r = build_regressors(model.spec_r, history)
    x_s = build_regressors(model.spec_s, history)
    gamma_r = cond_cdf(model.params_r, x_r, model.spec_r.n_states)
    gamma_s = cond_cdf(model.params_s, x_s, model.spec_s.n_states)
    corners_r = np.concatenate([[0.0], gamma_r])
    corners_s = np.concatenate([[0.0], gamma_s])
    grid = bivariate_cdf(
        model.copula.family,
        model.copula.scalar,
        corners_r[:, None],
        corners_s[None, :],
    )
    pmf = grid[1:, 1:] - grid[:-1, 1:] - grid[1:, :-1] + grid[:-1, :-1]
    return np.maximum(pmf, PROB_FLOOR)


# ---------------------------------------------------------------------------
# Parameter packing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairDims:
    d_r: int
    n_slopes_r: int
    d_s: int
    n_slopes_s: int
    family: CopulaFamily

    @property
    def n_r(self) -> int:
        return self.d_r - 1 + self.n_slopes_r

    @property
    def n_s(self) -> int:
        return self.d_s - 1 + self.n_slopes_s

    @property
    def n_total(self) -> int:
        return self.n_r + self.n_s + 1

    @staticmethod
    def of(model: PairModel) -> "PairDims":
        return PairDims(
            model.spec_r.n_states,
            model.spec_r.n_regressors,
            model.spec_s.n_states,
            model.spec_s.n_regressors,
            model.copula.family,
        )


def pair_natural_to_unconstrained(dims: PairDims, theta: np.ndarray) -> np.ndarray:
    int_r, sl_r, int_s, sl_s, phi = _split_natural(dims, theta)
    spec = CopulaSpec(dims.family, np.asarray(phi))
    return np.concatenate([
        intercepts_to_raw(int_r), sl_r,
        intercepts_to_raw(int_s), sl_s,
        [to_unconstrained(spec)],
    ])


def pair_unconstrained_to_natural(dims: PairDims, vec: np.ndarray) -> np.ndarray:
    int_r, sl_r, int_s, sl_s, theta_c = _split_natural(dims, vec)
    return np.concatenate([
        raw_to_intercepts(int_r), sl_r,
        raw_to_intercepts(int_s), sl_s,
        [natural_from_unconstrained(dims.family, _cap(dims.family, theta_c))],
    ])


def _cap(family: CopulaFamily, theta: float) -> float:
    return min(theta, _EXP_CAP) if family is CopulaFamily.GUMBEL else theta


def _split_natural(dims: PairDims, vec: np.ndarray):
    vec = np.asarray(vec, dtype=float)
    if vec.size != dims.n_total:
        raise DomainError(f"expected {dims.n_total} coordinates, got {vec.size}")
    m_r, m_s = dims.d_r - 1, dims.d_s - 1
    a = 0
    int_r = vec[a:a + m_r]; a += m_r
    sl_r = vec[a:a + dims.n_slopes_r]; a += dims.n_slopes_r
    int_s = vec[a:a + m_s]; a += m_s
    sl_s = vec[a:a + dims.n_slopes_s]; a += dims.n_slopes_s
    return int_r, sl_r, int_s, sl_s, float(vec[a])


def pair_transform_jacobian(dims: PairDims, vec_unconstrained: np.ndarray) -> np.ndarray:
    """d(natural)/d(unconstrained), block diagonal over the pair layout."""
    int_r, _, int_s, _, theta_c = _split_natural(dims, vec_unconstrained)
    jac = np.eye(dims.n_total)
    m_r, m_s = dims.d_r - 1, dims.d_s - 1
    jac[:m_r, :m_r] = intercept_jacobian(int_r)
    off = dims.n_r
    jac[off:off + m_s, off:off + m_s] = intercept_jacobian(int_s)
    jac[-1, -1] = unconstrained_jacobian(dims.family, _cap(dims.family, theta_c))
    return jac


# ---------------------------------------------------------------------------
# Vectorized likelihood core
# ---------------------------------------------------------------------------

class _PairCore:
    """Design matrices and observed states frozen once per fit."""

    def __init__(self, model: PairModel, states: np.ndarray):
        states = np.asarray(states, dtype=int)
        r, s = model.pair
        if states.ndim != 2 or states.shape[1] != model.spec_r.n_series:
            raise DomainError(
                f"states must be (T, {model.spec_r.n_series}), got {states.shape}"
            )
        p = model.lag_order
        if states.shape[0] <= p:
            raise DomainError(
                f"need at least lag_order + 1 = {p + 1} time points, got {states.shape[0]}"
            )
        self.dims = PairDims.of(model)
        self.family = model.copula.family
        self.x_r = design_matrix(model.spec_r, states)
        self.x_s = (
            self.x_r
            if model.spec_s.coding == model.spec_r.coding
            else design_matrix(model.spec_s, states)
        )
        self.z_r = states[p:, r]
        self.z_s = states[p:, s]
        for z, d, tag in ((self.z_r, self.dims.d_r, r), (self.z_s, self.dims.d_s, s)):
            if np.any(z < 1) or np.any(z > d):
                raise DomainError(f"states of series {tag} must lie in 1..{d}")
        self.n = self.z_r.shape[0]

    def per_time_loglik_natural(self, theta_nat: np.ndarray) -> np.ndarray:
        int_r, sl_r, int_s, sl_s, phi = _split_natural(self.dims, theta_nat)
        gamma_r = cumulative_rows(int_r, sl_r, self.x_r)
        gamma_s = cumulative_rows(int_s, sl_s, self.x_s)
        ur, lr = _corner_cdfs(gamma_r, self.z_r)
        us, ls = _corner_cdfs(gamma_s, self.z_s)
        rect = (
            bivariate_cdf(self.family, phi, ur, us)
            - bivariate_cdf(self.family, phi, lr, us)
            - bivariate_cdf(self.family, phi, ur, ls)
            + bivariate_cdf(self.family, phi, lr, ls)
        )
        return np.log(np.maximum(rect, PROB_FLOOR))

    def per_time_loglik(self, vec_unc: np.ndarray) -> np.ndarray:
        return self.per_time_loglik_natural(
            pair_unconstrained_to_natural(self.dims, vec_unc)
        )

    def negloglik_mean(self, vec_unc: np.ndarray) -> float:
        return -float(np.mean(self.per_time_loglik(vec_unc)))

    def negloglik_sum(self, vec_unc: np.ndarray) -> float:
        return -float(np.sum(self.per_time_loglik(vec_unc)))


def pair_negloglik(model: PairModel, states) -> float:
    """Negative summed log-likelihood of the pair over t = p+1..T."""
    core = _PairCore(model, np.asarray(states, dtype=int))
    return -float(np.sum(core.per_time_loglik_natural(model.theta_natural())))


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

def _fd_steps(theta: np.ndarray, scale: float) -> np.ndarray:
    return np.maximum(scale, scale * np.abs(theta))


def numeric_gradient(fun, theta: np.ndarray, scale: float = 1e-5) -> np.ndarray:
    """Central-difference gradient with per-coordinate steps max(scale, scale|t_i|)."""
    theta = np.asarray(theta, dtype=float)
    steps = _fd_steps(theta, scale)
    grad = np.empty(theta.size)
    for i in range(theta.size):
        hi = np.array(theta); hi[i] += steps[i]
        lo = np.array(theta); lo[i] -= steps[i]
        f_hi, f_lo = fun(hi), fun(lo)
        if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
            raise DomainError(f"objective non-finite at finite-difference probe {i}")
        grad[i] = (f_hi - f_lo) / (2.0 * steps[i])
    return grad


def numeric_hessian(fun, theta: np.ndarray, scale: float = 1e-5) -> np.ndarray:
    """Symmetrized central-difference Hessian, steps max(scale, scale|t_i|)."""
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    steps = _fd_steps(theta, scale)
    f0 = fun(theta)
    if not np.isfinite(f0):
        raise DomainError("objective non-finite at the expansion point")
    hess = np.empty((n, n))
    for i in range(n):
        hi = np.array(theta); hi[i] += steps[i]
        lo = np.array(theta); lo[i] -= steps[i]
        f_hi, f_lo = fun(hi), fun(lo)
        if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
            raise DomainError(f"objective non-finite at finite-difference probe {i}")
        hess[i, i] = (f_hi - 2.0 * f0 + f_lo) / steps[i] ** 2
        for j in range(i + 1, n):
            pp = np.array(theta); pp[i] += steps[i]; pp[j] += steps[j]
            pm = np.array(theta); pm[i] += steps[i]; pm[j] -= steps[j]
            mp = np.array(theta); mp[i] -= steps[i]; mp[j] += steps[j]
            mm = np.array(theta); mm[i] -= steps[i]; mm[j] -= steps[j]
            vals = np.array([fun(pp), fun(pm), fun(mp), fun(mm)])
            if not np.all(np.isfinite(vals)):
                raise DomainError(
                    f"objective non-finite at finite-difference probe ({i}, {j})"
                )
            hess[i, j] = (vals[0] - vals[1] - vals[2] + vals[3]) / (
                4.0 * steps[i] * steps[j]
            )
            hess[j, i] = hess[i, j]
    return 0.5 * (hess + hess.T)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def empirical_intercept_start(states_col: np.ndarray, d: int) -> np.ndarray:
    """Cumulative empirical logits with light smoothing; strictly increasing."""
    counts = np.bincount(np.asarray(states_col, dtype=int), minlength=d + 1)[1:d + 1]
    probs = (counts + 0.5) / (counts.sum() + 0.5 * d)
    gamma = np.cumsum(probs)[:-1]
    return special.logit(gamma)


def _start_vector(model: PairModel, core: _PairCore, states: np.ndarray,
                  config: OptimizerConfig) -> np.ndarray:
    start = config.start
    if isinstance(start, (np.ndarray, list, tuple)):
        vec = np.asarray(start, dtype=float)
        if vec.size != core.dims.n_total:
            raise DomainError(
                f"start vector has {vec.size} coordinates, expected {core.dims.n_total}"
            )
        return vec
    if start == "model":
        return pair_natural_to_unconstrained(core.dims, model.theta_natural())
    if start != "empirical":
        raise DomainError(f"unknown start option {start!r}")
    r, s = model.pair
    int_r = empirical_intercept_start(states[:, r], core.dims.d_r)
    int_s = empirical_intercept_start(states[:, s], core.dims.d_s)
    copula_start = CopulaSpec(model.copula.family,
                              np.asarray(COPULA_START[model.copula.family]))
    return np.concatenate([
        intercepts_to_raw(int_r), np.zeros(core.dims.n_slopes_r),
        intercepts_to_raw(int_s), np.zeros(core.dims.n_slopes_s),
        [to_unconstrained(copula_start)],
    ])


@dataclass(frozen=True)
class MinimizeResult:
    """Outcome of one smooth unconstrained minimization."""

    x: np.ndarray
    grad_norm: float
    hessian: np.ndarray
    n_iter: int
    converged: bool
    flags: tuple[str, ...]


def minimize_smooth(fun, x0, config: OptimizerConfig) -> MinimizeResult:
    """Quasi-Newton minimization with a Newton polish.

    BFGS with central finite-difference gradients runs first; its line
    searches stall once the predicted objective decrease drops below
    floating-point resolution, which can leave the gradient just above
    ``gtol`` on long samples.  Newton steps on the FD gradient are not
    limited by objective resolution, so they finish the job.  Convergence
    means the gradient infinity norm fell below ``gtol``; failure is
    flagged, not fatal.
    """
    res = optimize.minimize(
        fun,
        np.asarray(x0, dtype=float),
        method="BFGS",
        jac="3-point",
        options={"maxiter": config.max_iter, "gtol": config.gtol},
    )
    vec = np.asarray(res.x, dtype=float)
    grad = numeric_gradient(fun, vec)
    grad_norm = float(np.max(np.abs(grad)))
    hess = numeric_hessian(fun, vec)

    stale = False
    for _ in range(8):
        if grad_norm < config.gtol:
            break
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        accepted = False
        for _ in range(4):
            cand = vec - step
            cand_grad = numeric_gradient(fun, cand)
            cand_norm = float(np.max(np.abs(cand_grad)))
            if np.isfinite(cand_norm) and cand_norm < grad_norm:
                stale = stale or float(np.max(np.abs(step))) > 1e-6
                vec, grad, grad_norm = cand, cand_grad, cand_norm
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            break
    if stale:
        hess = numeric_hessian(fun, vec)

    converged = grad_norm < config.gtol
    flags = []
    if res.nit >= config.max_iter and not converged:
        flags.append("max_iter")
    elif not converged:
        flags.append("precision_loss")
    if np.any(np.abs(vec) > config.guard):
        flags.append("separation")
    return MinimizeResult(
        x=vec,
        grad_norm=grad_norm,
        hessian=hess,
        n_iter=int(res.nit),
        converged=converged,
        flags=tuple(flags),
    )


def fit_pair(model: PairModel, states, config: OptimizerConfig = OptimizerConfig()) -> PairFit:
    """Maximize the pair's composite log-likelihood.

    Quasi-Newton (BFGS) on the unconstrained scale with central
    finite-difference gradients of the summed objective; convergence means
    the gradient infinity norm fell below ``gtol``.  Non-convergence and
    parameter-magnitude separation are flagged on the result, not fatal.
    """
    states = np.asarray(states, dtype=int)
    core = _PairCore(model, states)
    x0 = _start_vector(model, core, states, config)
    opt = minimize_smooth(core.negloglik_sum, x0, config)
    vec = opt.x
    grad_norm = opt.grad_norm
    hess_unc = opt.hessian
    converged = opt.converged
    flags = list(opt.flags)

    theta_nat = pair_unconstrained_to_natural(core.dims, vec)
    jac = pair_transform_jacobian(core.dims, vec)
    # Natural-scale Hessian by chain rule; the gradient correction term is
    # O(grad) and vanishes at the optimum.
    hess_nat = np.linalg.solve(jac.T, np.linalg.solve(jac.T, hess_unc.T).T)
    hess_nat = 0.5 * (hess_nat + hess_nat.T)

    scores = _per_time_scores_core(core, vec, jac)

    int_r, sl_r, int_s, sl_s, phi = _split_natural(core.dims, theta_nat)
    fitted = replace(
        model,
        params_r=MarginalParams(int_r, sl_r),
        params_s=MarginalParams(int_s, sl_s),
        copula=CopulaSpec(model.copula.family, np.asarray(phi)),
    )
    return PairFit(
        pair=model.pair,
        model=fitted,
        theta_natural=theta_nat,
        theta_unconstrained=vec,
        hessian=hess_nat,
        scores=scores,
        loglik=-float(core.negloglik_sum(vec)),
        n_obs=core.n,
        converged=converged,
        n_iter=opt.n_iter,
        grad_norm=grad_norm,
        flags=tuple(flags),
    )


def _per_time_scores_core(core: _PairCore, vec_unc: np.ndarray,
                          jac: np.ndarray) -> np.ndarray:
    steps = _fd_steps(vec_unc, 1e-5)
    grads = np.empty((core.n, vec_unc.size))
    for i in range(vec_unc.size):
        hi = np.array(vec_unc); hi[i] += steps[i]
        lo = np.array(vec_unc); lo[i] -= steps[i]
        grads[:, i] = (core.per_time_loglik(hi) - core.per_time_loglik(lo)) / (
            2.0 * steps[i]
        )
    # chain rule to the natural scale: g_nat = J^{-T} g_unc
    return np.linalg.solve(jac.T, grads.T).T


def per_time_scores(model: PairModel, states, theta_natural=None) -> np.ndarray:
    """Per-time score vectors of the pair log-likelihood on the natural scale.

    Central finite differences of each time point's log PMF, evaluated at
    ``theta_natural`` (defaults to the model's own parameters).
    """
    states = np.asarray(states, dtype=int)
    core = _PairCore(model, states)
    theta = (
        model.theta_natural()
        if theta_natural is None
        else np.asarray(theta_natural, dtype=float)
    )
    vec = pair_natural_to_unconstrained(core.dims, theta)
    jac = pair_transform_jacobian(core.dims, vec)
    return _per_time_scores_core(core, vec, jac)
