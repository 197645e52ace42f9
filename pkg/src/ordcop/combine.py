"""Synthesis of per-pair fits into system-wide estimates.

Each pair of series is fitted on its own, so every marginal parameter is
estimated once per pair containing its series while each copula parameter
is estimated exactly once.  This module lays the per-pair estimates out on
a single global axis, averages the replicated coordinates (simple or
Hessian-weighted), and attaches composite-likelihood sandwich standard
errors to the combined vector.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .copula import CopulaFamily, CopulaSpec
from .exceptions import DataError, DomainError
from .marginal import MarginalParams, MarginalSpec
from .pairlik import OptimizerConfig, PairFit, PairModel, fit_pair

# Relative eigenvalue cutoff below which a pooled matrix is treated as
# singular and inverted by filtered pseudo-inverse instead.
EIG_CUTOFF = 1e-10


def _pair_order(n_series: int) -> tuple[tuple[int, int], ...]:
    return tuple(
        (r, s) for r in range(n_series - 1) for s in range(r + 1, n_series)
    )


@dataclass(frozen=True)
class ParamLayout:
    """Global coordinate system for a K-series pairwise model.

    Coordinates are ordered as the marginal parameter blocks of series
    0..K-1 (intercepts then slopes within each block) followed by one
    copula parameter per pair in the order (0,1), (0,2), ..., (K-2,K-1).
    """

    specs: tuple[MarginalSpec, ...]
    families: tuple[CopulaFamily, ...]
    series_names: tuple[str, ...]

    def __init__(
        self,
        specs: Sequence[MarginalSpec],
        families: CopulaFamily | Sequence[CopulaFamily],
        series_names: Sequence[str] | None = None,
    ):
        specs = tuple(specs)
        if not specs:
            raise DomainError("at least one marginal spec is required")
        n_series = specs[0].n_series
        if len(specs) != n_series:
            raise DomainError(
                f"expected one spec per series ({n_series}), got {len(specs)}"
            )
        for k, spec in enumerate(specs):
            if spec.series_index != k:
                raise DomainError(
                    f"spec at position {k} has series_index {spec.series_index}"
                )
            if spec.state_spaces != specs[0].state_spaces:
                raise DomainError("specs disagree on the system state spaces")
            if spec.lag_order != specs[0].lag_order:
                raise DomainError("specs disagree on the lag order")
        n_pairs = n_series * (n_series - 1) // 2
        if isinstance(families, CopulaFamily):
            families = (families,) * n_pairs
        else:
            families = tuple(CopulaFamily(f) for f in families)
        if len(families) != n_pairs:
            raise DomainError(
                f"expected {n_pairs} copula families, got {len(families)}"
            )
        if series_names is None:
            series_names = tuple(f"Z{k + 1}" for k in range(n_series))
        else:
            series_names = tuple(str(s) for s in series_names)
            if len(series_names) != n_series:
                raise DomainError("series_names length mismatch")
            if len(set(series_names)) != n_series:
                raise DomainError("series_names must be distinct")
        object.__setattr__(self, "specs", specs)
        object.__setattr__(self, "families", families)
        object.__setattr__(self, "series_names", series_names)

    @property
    def n_series(self) -> int:
        return len(self.specs)

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return _pair_order(self.n_series)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def n_marginal(self) -> int:
        return sum(spec.n_params for spec in self.specs)

    @property
    def n_params(self) -> int:
        return self.n_marginal + self.n_pairs

    def marginal_slice(self, series: int) -> slice:
        """Global slice holding the marginal block of one series."""
        if not 0 <= series < self.n_series:
            raise DomainError(f"series index {series} out of range")
        start = sum(self.specs[k].n_params for k in range(series))
        return slice(start, start + self.specs[series].n_params)

    def copula_index(self, r: int, s: int) -> int:
        """Global index of the copula parameter of pair (r, s)."""
        return self.n_marginal + self.pairs.index((r, s))

    def pair_position(self, r: int, s: int) -> int:
        if (r, s) not in self.pairs:
            raise DomainError(f"({r}, {s}) is not a valid ordered pair")
        return self.pairs.index((r, s))

    def pair_indices(self, r: int, s: int) -> np.ndarray:
        """Global indices of pair (r, s)'s parameters, in the local order
        (marginals of r, marginals of s, copula parameter)."""
        q = self.pair_position(r, s)
        sl_r = self.marginal_slice(r)
        sl_s = self.marginal_slice(s)
        idx = np.concatenate([
            np.arange(sl_r.start, sl_r.stop),
            np.arange(sl_s.start, sl_s.stop),
            [self.n_marginal + q],
        ])
        return idx.astype(np.intp)

    def pair_dim(self, r: int, s: int) -> int:
        return self.specs[r].n_params + self.specs[s].n_params + 1

    @property
    def replicate_counts(self) -> np.ndarray:
        """Number of pair fits in which each global coordinate appears."""
        counts = np.full(self.n_params, self.n_series - 1, dtype=np.intp)
        counts[self.n_marginal:] = 1
        return counts

    def param_names(self) -> tuple[str, ...]:
        names: list[str] = []
        for k, spec in enumerate(self.specs):
            prefix = self.series_names[k]
            d = spec.state_spaces[k].n_states
            names.extend(f"{prefix}:cut{j + 1}" for j in range(d - 1))
            names.extend(
                f"{prefix}:{reg}"
                for reg in spec.regressor_names(list(self.series_names))
            )
        for (r, s), family in zip(self.pairs, self.families):
            names.append(
                f"{self.series_names[r]}~{self.series_names[s]}:{family.value}"
            )
        return tuple(names)


def augment(fit: PairFit, layout: ParamLayout) -> tuple[np.ndarray, np.ndarray]:
    """Embed a pair fit into the global coordinate system.

    Returns the full-length estimate vector (zeros outside the pair's
    coordinates) and the full-size negative Hessian with the pair's block
    embedded as the corresponding principal submatrix.
    """
    r, s = fit.pair
    idx = layout.pair_indices(r, s)
    if idx.size != fit.theta_natural.size:
        raise DomainError(
            f"pair ({r}, {s}) fit has {fit.theta_natural.size} parameters, "
            f"layout expects {idx.size}"
        )
    vec = np.zeros(layout.n_params)
    vec[idx] = fit.theta_natural
    hess = np.zeros((layout.n_params, layout.n_params))
    hess[np.ix_(idx, idx)] = fit.hessian
    return vec, hess


def _check_fits(fits: Sequence[PairFit], layout: ParamLayout) -> tuple[PairFit, ...]:
    fits = tuple(fits)
    if len(fits) != layout.n_pairs:
        raise DomainError(
            f"expected {layout.n_pairs} pair fits, got {len(fits)}"
        )
    by_pair = {fit.pair: fit for fit in fits}
    if set(by_pair) != set(layout.pairs):
        raise DomainError("pair fits do not cover every pair exactly once")
    ordered = tuple(by_pair[pair] for pair in layout.pairs)
    n_obs = {fit.n_obs for fit in ordered}
    if len(n_obs) != 1:
        raise DataError(f"pair fits disagree on sample size: {sorted(n_obs)}")
    for fit in ordered:
        r, s = fit.pair
        if fit.theta_natural.size != layout.pair_dim(r, s):
            raise DomainError(f"pair ({r}, {s}) fit dimension mismatch")
    return ordered


def _filtered_inverse(mat: np.ndarray) -> tuple[np.ndarray, bool]:
    """Symmetric inverse with spectral filtering.

    Eigenvalues whose magnitude falls below EIG_CUTOFF relative to the
    largest are dropped (pseudo-inverse); the flag reports whether any
    were dropped.
    """
    sym = 0.5 * (mat + mat.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    scale = float(np.max(np.abs(eigvals))) if eigvals.size else 0.0
    if scale == 0.0:
        return np.zeros_like(sym), True
    keep = np.abs(eigvals) > EIG_CUTOFF * scale
    inv_vals = np.zeros_like(eigvals)
    inv_vals[keep] = 1.0 / eigvals[keep]
    inv = (eigvecs * inv_vals) @ eigvecs.T
    return 0.5 * (inv + inv.T), bool(not keep.all())


def simple_mean(fits: Sequence[PairFit], layout: ParamLayout) -> np.ndarray:
    """Per-coordinate average of the pair estimates."""
    fits = _check_fits(fits, layout)
    total = np.zeros(layout.n_params)
    for fit in fits:
        vec, _ = augment(fit, layout)
        total += vec
    return total / layout.replicate_counts


def _weighted_combine(
    fits: tuple[PairFit, ...], layout: ParamLayout
) -> tuple[np.ndarray, list[str]]:
    """Hessian-weighted synthesis.

    Marginal coordinates solve the pooled quadratic system built from the
    marginal blocks of every pair Hessian; each copula coordinate carries a
    single-pair weight and therefore passes through unchanged.
    """
    n_m = layout.n_marginal
    pooled = np.zeros((n_m, n_m))
    rhs = np.zeros(n_m)
    theta = np.zeros(layout.n_params)
    flags: list[str] = []
    for fit, (r, s) in zip(fits, layout.pairs):
        idx = layout.pair_indices(r, s)
        m_local = idx[:-1]
        hess_m = fit.hessian[:-1, :-1]
        pooled[np.ix_(m_local, m_local)] += hess_m
        rhs[m_local] += hess_m @ fit.theta_natural[:-1]
        theta[idx[-1]] = fit.theta_natural[-1]
        if fit.hessian[-1, -1] <= 0:
            flags.append(
                f"pair ({r}, {s}): nonpositive copula curvature"
            )
    inv, used_pinv = _filtered_inverse(pooled)
    if used_pinv:
        flags.append("singular pooled Hessian; pseudo-inverse used")
    theta[:n_m] = inv @ rhs
    return theta, flags


def weighted_mean(fits: Sequence[PairFit], layout: ParamLayout) -> np.ndarray:
    """Hessian-weighted mean of the augmented pair estimates.

    Replicated marginal coordinates are pooled with full matrix weights
    from the pairs' negative Hessians; copula coordinates appear in one
    pair each and pass through exactly.  A singular pooled Hessian falls
    back to a filtered pseudo-inverse with a warning.
    """
    fits = _check_fits(fits, layout)
    theta, flags = _weighted_combine(fits, layout)
    for flag in flags:
        warnings.warn(flag, RuntimeWarning, stacklevel=2)
    return theta


def weighting_matrix(
    fits: Sequence[PairFit], layout: ParamLayout, method: str
) -> np.ndarray:
    """Row-stochastic map from stacked pair estimates to the global vector.

    ``method="mean"`` gives each replicate of a coordinate equal weight;
    ``method="weighted"`` weights replicates by the matching diagonal
    element of their pair's negative Hessian.  Rows sum to 1 over the
    replicates of each coordinate.
    """
    if method not in ("mean", "weighted"):
        raise DomainError(f"unknown weighting method: {method!r}")
    fits = _check_fits(fits, layout)
    sizes = [fit.theta_natural.size for fit in fits]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    a = np.zeros((layout.n_params, int(offsets[-1])))
    for q, (fit, (r, s)) in enumerate(zip(fits, layout.pairs)):
        idx = layout.pair_indices(r, s)
        cols = offsets[q] + np.arange(sizes[q])
        if method == "mean":
            a[idx, cols] = 1.0
        else:
            diag = np.diag(fit.hessian).copy()
            a[idx, cols] = np.maximum(diag, 0.0)
    row_tot = a.sum(axis=1)
    bad = ~(row_tot > 0)
    if bad.any():
        # fall back to equal weights on rows with no positive curvature
        for g in np.flatnonzero(bad):
            cols = np.flatnonzero(
                _replicate_mask(fits, layout)[g]
            )
            a[g, cols] = 1.0
        row_tot = a.sum(axis=1)
    return a / row_tot[:, None]


def _replicate_mask(
    fits: tuple[PairFit, ...], layout: ParamLayout
) -> np.ndarray:
    sizes = [fit.theta_natural.size for fit in fits]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    mask = np.zeros((layout.n_params, int(offsets[-1])), dtype=bool)
    for q, (fit, (r, s)) in enumerate(zip(fits, layout.pairs)):
        idx = layout.pair_indices(r, s)
        mask[idx, offsets[q] + np.arange(sizes[q])] = True
    return mask


@dataclass(frozen=True)
class SandwichCov:
    """Composite-likelihood covariance of the stacked and combined estimates."""

    stacked: np.ndarray
    mean: np.ndarray
    weighted: np.ndarray
    a_mean: np.ndarray
    a_weighted: np.ndarray
    flags: tuple[str, ...]


def sandwich_cov(fits: Sequence[PairFit], layout: ParamLayout) -> SandwichCov:
    """Sandwich covariance over the stacked pair-parameter space.

    The bread is block-diagonal in the pairs with blocks equal to each
    pair's average observed curvature; the meat collects per-time score
    cross-products across pairs, so between-pair dependence enters through
    the off-diagonal blocks.  The combined covariances contract the stacked
    matrix with the equal-weight and curvature-weight maps.
    """
    fits = _check_fits(fits, layout)
    n = fits[0].n_obs
    sizes = [fit.theta_natural.size for fit in fits]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    dim = int(offsets[-1])
    flags: list[str] = []

    j_inv = np.zeros((dim, dim))
    for q, fit in enumerate(fits):
        block = fit.hessian / n
        inv, used_pinv = _filtered_inverse(block)
        if used_pinv:
            r, s = fit.pair
            flags.append(
                f"pair ({r}, {s}): singular curvature; pseudo-inverse used"
            )
        sl = slice(offsets[q], offsets[q + 1])
        j_inv[sl, sl] = inv

    meat = np.zeros((dim, dim))
    for p in range(len(fits)):
        sp = fits[p].scores
        sl_p = slice(offsets[p], offsets[p + 1])
        for q in range(p, len(fits)):
            block = sp.T @ fits[q].scores / n
            sl_q = slice(offsets[q], offsets[q + 1])
            meat[sl_p, sl_q] = block
            if q != p:
                meat[sl_q, sl_p] = block.T

    stacked = j_inv @ meat @ j_inv / n
    stacked = 0.5 * (stacked + stacked.T)

    a_mean = weighting_matrix(fits, layout, "mean")
    a_weighted = weighting_matrix(fits, layout, "weighted")
    cov_mean = a_mean @ stacked @ a_mean.T
    cov_weighted = a_weighted @ stacked @ a_weighted.T
    return SandwichCov(
        stacked=stacked,
        mean=0.5 * (cov_mean + cov_mean.T),
        weighted=0.5 * (cov_weighted + cov_weighted.T),
        a_mean=a_mean,
        a_weighted=a_weighted,
        flags=tuple(flags),
    )


def wald_test(estimate, se):
    """Wald z statistic and two-sided normal p-value, elementwise."""
    est = np.asarray(estimate, dtype=float)
    err = np.asarray(se, dtype=float)
    if not np.all(np.isfinite(err)) or np.any(err <= 0):
        raise DomainError("standard errors must be finite and positive")
    z = est / err
    p = 2.0 * special.ndtr(-np.abs(z))
    if z.ndim == 0:
        return float(z), float(p)
    return z, p


@dataclass(frozen=True)
class SystemFit:
    """Two-stage fit of the full K-series system."""

    layout: ParamLayout
    pair_fits: tuple[PairFit, ...]
    theta_mean: np.ndarray
    theta_weighted: np.ndarray
    cov_mean: np.ndarray
    cov_weighted: np.ndarray
    cov_stacked: np.ndarray
    a_mean: np.ndarray
    a_weighted: np.ndarray
    n_obs: int
    converged: bool
    flags: tuple[str, ...]

    def theta(self, method: str = "weighted") -> np.ndarray:
        if method == "weighted":
            return self.theta_weighted
        if method == "mean":
            return self.theta_mean
        raise DomainError(f"unknown combination method: {method!r}")

    def cov(self, method: str = "weighted") -> np.ndarray:
        if method == "weighted":
            return self.cov_weighted
        if method == "mean":
            return self.cov_mean
        raise DomainError(f"unknown combination method: {method!r}")

    def se(self, method: str = "weighted") -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.cov(method)), 0.0))

    def pair_fit(self, r: int, s: int) -> PairFit:
        return self.pair_fits[self.layout.pair_position(r, s)]

    def pair_model(self, r: int, s: int, method: str = "weighted") -> PairModel:
        """Pair model evaluated at the combined estimate."""
        layout = self.layout
        theta = self.theta(method)
        q = layout.pair_position(r, s)
        template = self.pair_fits[q].model

        def marginal_params(k: int) -> MarginalParams:
            spec = layout.specs[k]
            block = theta[layout.marginal_slice(k)]
            return MarginalParams(
                intercepts=block[: spec.n_intercepts],
                slopes=block[spec.n_intercepts:],
            )

        copula = dataclasses.replace(
            template.copula,
            params=np.asarray(theta[layout.copula_index(r, s)]),
        )
        return dataclasses.replace(
            template,
            params_r=marginal_params(r),
            params_s=marginal_params(s),
            copula=copula,
        )

    def records(self) -> list[dict]:
        """Parameter table: one row per coordinate and method."""
        names = self.layout.param_names()
        rows: list[dict] = []
        for method in ("mean", "weighted"):
            theta = self.theta(method)
            ses = self.se(method)
            for name, est, err in zip(names, theta, ses):
                if err > 0:
                    z, p = wald_test(est, err)
                else:
                    z, p = float("nan"), float("nan")
                rows.append({
                    "name": name,
                    "estimate": float(est),
                    "se": float(err),
                    "z": z,
                    "p": p,
                    "method": method,
                })
        return rows


def combine_fits(fits: Sequence[PairFit], layout: ParamLayout) -> SystemFit:
    """Synthesize pair fits into both combined estimators with sandwich SEs."""
    fits = _check_fits(fits, layout)
    theta_w, flags = _weighted_combine(fits, layout)
    theta_m = simple_mean(fits, layout)
    cov = sandwich_cov(fits, layout)
    flags = list(flags) + list(cov.flags)
    for fit in fits:
        if not fit.converged:
            r, s = fit.pair
            flags.append(f"pair ({r}, {s}): optimizer did not converge")
    return SystemFit(
        layout=layout,
        pair_fits=fits,
        theta_mean=theta_m,
        theta_weighted=theta_w,
        cov_mean=cov.mean,
        cov_weighted=cov.weighted,
        cov_stacked=cov.stacked,
        a_mean=cov.a_mean,
        a_weighted=cov.a_weighted,
        n_obs=fits[0].n_obs,
        converged=all(fit.converged for fit in fits),
        flags=tuple(flags),
    )


def initial_pair_model(
    layout: ParamLayout, r: int, s: int, states: np.ndarray
) -> PairModel:
    """Valid starting model for one pair, built from the observed states."""
    from .pairlik import COPULA_START, empirical_intercept_start

    states = np.asarray(states)
    family = layout.families[layout.pair_position(r, s)]

    def start_params(k: int) -> MarginalParams:
        spec = layout.specs[k]
        d = spec.state_spaces[k].n_states
        intercepts = empirical_intercept_start(states[:, k], d)
        return MarginalParams(
            intercepts=intercepts, slopes=np.zeros(spec.n_regressors)
        )

    return PairModel(
        pair=(r, s),
        spec_r=layout.specs[r],
        spec_s=layout.specs[s],
        params_r=start_params(r),
        params_s=start_params(s),
        copula=CopulaSpec(family, np.asarray(COPULA_START[family])),
    )


def fit_system(
    states: np.ndarray,
    layout: ParamLayout,
    config: OptimizerConfig | None = None,
) -> SystemFit:
    """Two-stage estimation: fit every pair, then combine.

    ``states`` is the (T, K) panel of 1-based state labels.  Stage one
    maximizes each pair's likelihood independently; stage two averages the
    replicated coordinates and attaches sandwich standard errors.
    """
    states = np.asarray(states)
    if states.ndim != 2 or states.shape[1] != layout.n_series:
        raise DataError(
            f"states must be (T, {layout.n_series}), got {states.shape}"
        )
    config = config or OptimizerConfig()
    fits = []
    for r, s in layout.pairs:
        model = initial_pair_model(layout, r, s, states)
        fits.append(fit_pair(model, states, config))
    return combine_fits(fits, layout)
