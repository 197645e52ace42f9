"""Ordinal autoregressive marginals: cumulative-logit models on lagged states.

Each series k takes states 1..d_k (indices into an ordered label set).  The
conditional cumulative probabilities given the last ``lag_order`` state
vectors of all series follow

    logit(gamma_j) = intercept_j + slopes . x(history),   j = 1..d_k-1,

with gamma_d = 1.  Regressors are built from the lagged states of every
series under one of two codings:

* ``indicator`` - one-hot on levels 2..d_m of each lagged series (state 1 is
  the reference), d_m - 1 regressors per lagged series per lag;
* ``linear`` - the numeric state label itself, one regressor per lagged
  series per lag.

Slope vectors are ordered by (lag, series, level).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special

from .exceptions import DomainError

# Conditional probabilities are floored at this value before any logarithm.
PROB_FLOOR = 1e-12


class Coding(str, Enum):
    INDICATOR = "indicator"
    LINEAR = "linear"


def _as_coding(coding) -> Coding:
    if isinstance(coding, Coding):
        return coding
    try:
        return Coding(str(coding).lower())
    except ValueError:
        raise DomainError(f"unknown coding: {coding!r}") from None


@dataclass(frozen=True)
class StateSpace:
    """Ordered set of observable states of one series.

    ``labels`` are the external values (often integers); internally states
    are always the 1-based index into this tuple.
    """

    labels: tuple

    def __post_init__(self):
        labels = tuple(self.labels)
        if len(labels) < 2:
            raise DomainError(f"a state space needs at least 2 states, got {labels}")
        if len(set(labels)) != len(labels):
            raise DomainError(f"state labels must be distinct, got {labels}")
        try:
            ordered = all(labels[i] < labels[i + 1] for i in range(len(labels) - 1))
        except TypeError:
            raise DomainError(f"state labels must be mutually orderable, got {labels}") from None
        if not ordered:
            raise DomainError(f"state labels must be strictly increasing, got {labels}")
        object.__setattr__(self, "labels", labels)

    @property
    def n_states(self) -> int:
        return len(self.labels)

    @property
    def numeric_labels(self) -> np.ndarray:
        try:
            return np.asarray(self.labels, dtype=float)
        except (TypeError, ValueError):
            raise DomainError(
                f"linear coding needs numeric state labels, got {self.labels}"
            ) from None

    def index_of(self, label) -> int:
        try:
            return self.labels.index(label) + 1
        except ValueError:
            raise DomainError(f"label {label!r} is not in state space {self.labels}") from None

    def label_of(self, index: int):
        if not 1 <= index <= self.n_states:
            raise DomainError(f"state index {index} outside 1..{self.n_states}")
        return self.labels[index - 1]


@dataclass(frozen=True)
class MarginalSpec:
    """Structure of one series' conditional model within a K-series system."""

    series_index: int
    lag_order: int
    coding: Coding
    state_spaces: tuple[StateSpace, ...]

    def __post_init__(self):
        coding = _as_coding(self.coding)
        spaces = tuple(self.state_spaces)
        if not spaces:
            raise DomainError("state_spaces must not be empty")
        if not 0 <= self.series_index < len(spaces):
            raise DomainError(
                f"series_index {self.series_index} outside 0..{len(spaces) - 1}"
            )
        if self.lag_order < 1:
            raise DomainError(f"lag_order must be >= 1, got {self.lag_order}")
        if coding is Coding.LINEAR:
            for space in spaces:
                space.numeric_labels  # raises if not numeric
        object.__setattr__(self, "coding", coding)
        object.__setattr__(self, "state_spaces", spaces)

    @property
    def n_series(self) -> int:
        return len(self.state_spaces)

    @property
    def n_states(self) -> int:
        return self.state_spaces[self.series_index].n_states

    @property
    def n_intercepts(self) -> int:
        return self.n_states - 1

    @property
    def n_regressors(self) -> int:
        per_lag = sum(
            (s.n_states - 1) if self.coding is Coding.INDICATOR else 1
            for s in self.state_spaces
        )
        return self.lag_order * per_lag

    @property
    def n_params(self) -> int:
        return self.n_intercepts + self.n_regressors

    def regressor_names(self, series_names=None) -> list[str]:
        names = series_names or [f"Z{m + 1}" for m in range(self.n_series)]
        out = []
        for lag in range(1, self.lag_order + 1):
            for m, space in enumerate(self.state_spaces):
                if self.coding is Coding.INDICATOR:
                    out.extend(
                        f"{names[m]}[t-{lag}]={space.labels[level]}"
                        for level in range(1, space.n_states)
                    )
                else:
                    out.append(f"{names[m]}[t-{lag}]")
        return out


def build_regressors(spec: MarginalSpec, history) -> np.ndarray:
    """Regressor vector for one time point.

    ``history`` holds the last ``lag_order`` state vectors in chronological
    order: ``history[-1]`` is time t-1, ``history[-g]`` is t-g.  States are
    1-based indices.
    """
    hist = np.asarray(history, dtype=int)
    if hist.ndim != 2 or hist.shape != (spec.lag_order, spec.n_series):
        raise DomainError(
            f"history must supply lag_order={spec.lag_order} complete time points "
            f"for {spec.n_series} series, got shape {hist.shape}"
        )
    for m, space in enumerate(spec.state_spaces):
        col = hist[:, m]
        if np.any(col < 1) or np.any(col > space.n_states):
            raise DomainError(
                f"history states for series {m} must lie in 1..{space.n_states}, got {col}"
            )
    x = np.empty(spec.n_regressors, dtype=float)
    pos = 0
    for lag in range(1, spec.lag_order + 1):
        row = hist[spec.lag_order - lag]
        for m, space in enumerate(spec.state_spaces):
            if spec.coding is Coding.INDICATOR:
                width = space.n_states - 1
                block = np.zeros(width)
                if row[m] >= 2:
                    block[row[m] - 2] = 1.0
                x[pos:pos + width] = block
                pos += width
            else:
                x[pos] = space.numeric_labels[row[m] - 1]
                pos += 1
    return x


def design_matrix(spec: MarginalSpec, states) -> np.ndarray:
    """Stacked regressors for times t = lag_order..T-1 (0-based rows of ``states``).

    ``states`` is a (T, K) integer matrix of state indices; the row for time
    t is built from states[t - lag_order : t].
    """
    z = np.asarray(states, dtype=int)
    if z.ndim != 2 or z.shape[1] != spec.n_series:
        raise DomainError(f"states must be (T, {spec.n_series}), got shape {z.shape}")
    t_total = z.shape[0]
    p = spec.lag_order
    if t_total <= p:
        raise DomainError(f"need more than lag_order={p} time points, got {t_total}")
    n = t_total - p
    x = np.empty((n, spec.n_regressors), dtype=float)
    pos = 0
    for lag in range(1, p + 1):
        lagged = z[p - lag:t_total - lag]
        for m, space in enumerate(spec.state_spaces):
            col = lagged[:, m]
            if np.any(col < 1) or np.any(col > space.n_states):
                raise DomainError(
                    f"states for series {m} must lie in 1..{space.n_states}"
                )
            if spec.coding is Coding.INDICATOR:
                width = space.n_states - 1
                for level in range(2, space.n_states + 1):
                    x[:, pos + level - 2] = col == level
                pos += width
            else:
                x[:, pos] = space.numeric_labels[col - 1]
                pos += 1
    return x


@dataclass(frozen=True)
class MarginalParams:
    """Intercepts (strictly increasing) and slopes of one marginal."""

    intercepts: np.ndarray
    slopes: np.ndarray

    def __post_init__(self):
        intercepts = np.array(self.intercepts, dtype=float).reshape(-1)
        slopes = np.array(self.slopes, dtype=float).reshape(-1)
        if intercepts.size < 1:
            raise DomainError("at least one intercept is required")
        if np.any(np.diff(intercepts) <= 0.0):
            raise DomainError(f"intercepts must be strictly increasing, got {intercepts}")
        if not np.all(np.isfinite(intercepts)) or not np.all(np.isfinite(slopes)):
            raise DomainError("marginal parameters must be finite")
        intercepts.flags.writeable = False
        slopes.flags.writeable = False
        object.__setattr__(self, "intercepts", intercepts)
        object.__setattr__(self, "slopes", slopes)

    @property
    def n_states(self) -> int:
        return self.intercepts.size + 1

    def vector(self) -> np.ndarray:
        return np.concatenate([self.intercepts, self.slopes])


def cond_probs(params: MarginalParams, x, d: int) -> np.ndarray:
    """Conditional state probabilities pi_1..pi_d given regressors ``x``."""
    gamma = cond_cdf(params, x, d)
    probs = np.empty(d, dtype=float)
    probs[0] = gamma[0]
    probs[1:] = np.diff(gamma)
    return probs


def cond_cdf(params: MarginalParams, x, d: int) -> np.ndarray:
    """Conditional cumulative probabilities gamma_1..gamma_d (gamma_d = 1)."""
    if params.n_states != d:
        raise DomainError(
            f"params encode {params.n_states} states but d={d} was requested"
        )
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != params.slopes.size:
        raise DomainError(
            f"regressor vector has length {x.size}, expected {params.slopes.size}"
        )
    shift = float(params.slopes @ x)
    gamma = np.empty(d, dtype=float)
    gamma[:-1] = special.expit(params.intercepts + shift)
    gamma[-1] = 1.0
    return gamma


def inv_cdf(gamma, u: float) -> int:
    """Smallest state j with gamma_j >= u (generalized inverse)."""
    g = np.asarray(gamma, dtype=float)
    if not 0.0 <= u <= 1.0:
        raise DomainError(f"u must lie in [0, 1], got {u}")
    return int(np.searchsorted(g, u, side="left")) + 1


def cumulative_rows(intercepts: np.ndarray, slopes: np.ndarray,
                    design: np.ndarray) -> np.ndarray:
    """Vectorized conditional CDF rows: (n, d) with an exact unit last column.

    Internal fitting path: does not validate intercept monotonicity, so
    finite-difference probes near a constraint boundary stay evaluable.
    """
    shift = design @ slopes
    gamma = special.expit(shift[:, None] + intercepts[None, :])
    return np.concatenate([gamma, np.ones((gamma.shape[0], 1))], axis=1)


# ---------------------------------------------------------------------------
# Unconstrained-scale packing (intercept monotonicity via log increments)
# ---------------------------------------------------------------------------

def marginal_to_unconstrained(params: MarginalParams) -> np.ndarray:
    """[a_1, log(a_2 - a_1), ..., slopes] - bijective for increasing intercepts."""
    a = params.intercepts
    head = np.concatenate([[a[0]], np.log(np.diff(a))]) if a.size > 1 else a[:1]
    return np.concatenate([head, params.slopes])


def marginal_from_unconstrained(vec: np.ndarray, d: int, n_slopes: int) -> MarginalParams:
    vec = np.asarray(vec, dtype=float).reshape(-1)
    if vec.size != (d - 1) + n_slopes:
        raise DomainError(
            f"expected {(d - 1) + n_slopes} coordinates, got {vec.size}"
        )
    intercepts = raw_to_intercepts(vec[:d - 1])
    return MarginalParams(intercepts, vec[d - 1:])


def raw_to_intercepts(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    out = np.empty_like(raw)
    out[0] = raw[0]
    if raw.size > 1:
        out[1:] = raw[0] + np.cumsum(np.exp(raw[1:]))
    return out


def intercepts_to_raw(intercepts: np.ndarray) -> np.ndarray:
    a = np.asarray(intercepts, dtype=float)
    if a.size == 1:
        return a.copy()
    return np.concatenate([[a[0]], np.log(np.diff(a))])


def intercept_jacobian(raw: np.ndarray) -> np.ndarray:
    """d(intercepts)/d(raw): lower-triangular, exp(raw_i) below the diagonal."""
    raw = np.asarray(raw, dtype=float)
    m = raw.size
    jac = np.zeros((m, m))
    jac[:, 0] = 1.0
    for i in range(1, m):
        jac[i:, i] = np.exp(raw[i])
    return jac
