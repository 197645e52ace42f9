"""Copula families coupling the ordinal marginals: Gumbel, Frank, Gaussian.

The module provides CDF evaluation (bivariate everywhere, higher arity where
the family admits an exchangeable extension), K-variate sampling driven by an
explicit random generator, and the bijective transforms between the natural
parameter and the unconstrained scale used by the optimizer.

Numerical conventions
---------------------
* CDF values at the boundary are exact: any zero coordinate gives 0, a unit
  coordinate drops out of the copula.
* Gumbel is evaluated in log space so that extreme parameters or tiny
  arguments cannot overflow.
* Frank inside the band ``|phi| < FRANK_INDEPENDENCE_BAND`` is evaluated as
  the independence copula (the family's limit at phi -> 0).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import special

from .exceptions import DomainError, UnsupportedError

# Treat |phi| below this as the Frank independence limit.
FRANK_INDEPENDENCE_BAND = 1e-6

_SQRT_EPS = 1e-12


class CopulaFamily(str, Enum):
    GUMBEL = "gumbel"
    FRANK = "frank"
    GAUSSIAN = "gaussian"


def _as_family(family) -> CopulaFamily:
    if isinstance(family, CopulaFamily):
        return family
    try:
        return CopulaFamily(str(family).lower())
    except ValueError:
        raise UnsupportedError(f"unknown copula family: {family!r}") from None


@dataclass(frozen=True)
class CopulaSpec:
    """A copula family plus its parameter.

    ``params`` is a 0-d array holding the scalar parameter (Gumbel phi,
    Frank phi, Gaussian rho), or a full correlation matrix for the Gaussian
    family when used as a K-variate sampling engine.
    """

    family: CopulaFamily
    params: np.ndarray = field(repr=True)

    def __post_init__(self):
        family = _as_family(self.family)
        params = np.array(self.params, dtype=float)
        if params.ndim not in (0, 2):
            raise DomainError(
                f"copula params must be a scalar or a square matrix, got shape {params.shape}"
            )
        if params.ndim == 0:
            value = float(params)
            if family is CopulaFamily.GUMBEL and not value >= 1.0:
                raise DomainError(f"Gumbel parameter must satisfy phi >= 1, got {value}")
            if family is CopulaFamily.FRANK and not np.isfinite(value):
                raise DomainError(f"Frank parameter must be finite, got {value}")
            if family is CopulaFamily.GAUSSIAN and not -1.0 < value < 1.0:
                raise DomainError(f"Gaussian correlation must lie in (-1, 1), got {value}")
        else:
            if family is not CopulaFamily.GAUSSIAN:
                raise UnsupportedError(
                    f"matrix parameters are only supported for the Gaussian family, not {family.value}"
                )
            _validate_correlation_matrix(params)
        params.flags.writeable = False
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "params", params)

    # -- constructors ------------------------------------------------------
    @staticmethod
    def gumbel(phi: float) -> "CopulaSpec":
        return CopulaSpec(CopulaFamily.GUMBEL, np.asarray(phi, dtype=float))

    @staticmethod
    def frank(phi: float) -> "CopulaSpec":
        return CopulaSpec(CopulaFamily.FRANK, np.asarray(phi, dtype=float))

    @staticmethod
    def gaussian(rho: float) -> "CopulaSpec":
        return CopulaSpec(CopulaFamily.GAUSSIAN, np.asarray(rho, dtype=float))

    @staticmethod
    def gaussian_matrix(matrix) -> "CopulaSpec":
        return CopulaSpec(CopulaFamily.GAUSSIAN, np.asarray(matrix, dtype=float))

    # -- views -------------------------------------------------------------
    @property
    def is_matrix(self) -> bool:
        return self.params.ndim == 2

    @property
    def scalar(self) -> float:
        if self.is_matrix:
            raise DomainError("spec holds a correlation matrix, not a scalar parameter")
        return float(self.params)


def _validate_correlation_matrix(matrix: np.ndarray) -> None:
    if matrix.shape[0] != matrix.shape[1]:
        raise DomainError(f"correlation matrix must be square, got shape {matrix.shape}")
    if not np.allclose(matrix, matrix.T, atol=1e-12):
        raise DomainError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(matrix), 1.0, atol=1e-12):
        raise DomainError("correlation matrix must have unit diagonal")
    try:
        np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise DomainError("correlation matrix must be positive definite") from None


# ---------------------------------------------------------------------------
# CDF evaluation
# ---------------------------------------------------------------------------

def copula_cdf(spec: CopulaSpec, u) -> float:
    """Evaluate the copula CDF at a point ``u`` of length 2 or 3.

    Parameters
    ----------
    spec : CopulaSpec
        Family and scalar parameter.  Matrix-parameterized Gaussian specs are
        sampling engines and are rejected here.
    u : array_like
        Probabilities in [0, 1].

    Returns
    -------
    float
        C(u), exactly 0 when any coordinate is 0 and dropping unit
        coordinates exactly.
    """
    point = np.asarray(u, dtype=float)
    if point.ndim != 1 or point.shape[0] < 2:
        raise DomainError(f"u must be a vector of length >= 2, got shape {point.shape}")
    if np.any(point < 0.0) or np.any(point > 1.0):
        raise DomainError(f"copula arguments must lie in [0, 1], got {point}")
    arity = point.shape[0]

    if spec.is_matrix:
        raise UnsupportedError(
            "copula_cdf requires a scalar-parameter spec; matrix specs only drive sampling"
        )
    if spec.family is CopulaFamily.GUMBEL:
        return float(_gumbel_cdf(spec.scalar, point))
    if spec.family is CopulaFamily.FRANK:
        if arity == 2:
            return float(frank_bivariate_cdf(spec.scalar, point[0], point[1]))
        if spec.scalar <= 0.0:
            raise UnsupportedError(
                "Frank copulas of arity > 2 require phi > 0; "
                f"got phi={spec.scalar} at arity {arity}"
            )
        return float(_frank_exchangeable_cdf(spec.scalar, point))
    if spec.family is CopulaFamily.GAUSSIAN:
        if arity != 2:
            raise UnsupportedError(
                "Gaussian copula CDF is bivariate here; higher arity lives in the "
                "reference module's trivariate normal routine"
            )
        return float(gaussian_bivariate_cdf(spec.scalar, point[0], point[1]))
    raise UnsupportedError(f"unknown family {spec.family}")


def bivariate_cdf(family, param: float, u, v):
    """Vectorized bivariate copula CDF used by the pair likelihood.

    ``u`` and ``v`` are broadcastable arrays of probabilities in [0, 1].
    """
    family = _as_family(family)
    if family is CopulaFamily.GUMBEL:
        return _gumbel_cdf(param, np.stack(np.broadcast_arrays(u, v), axis=-1))
    if family is CopulaFamily.FRANK:
        return frank_bivariate_cdf(param, u, v)
    if family is CopulaFamily.GAUSSIAN:
        return gaussian_bivariate_cdf(param, u, v)
    raise UnsupportedError(f"unknown family {family}")


def _gumbel_cdf(phi: float, points: np.ndarray):
    """Gumbel CDF, any arity, evaluated along the last axis of ``points``.

    C(u) = exp(-(sum_i (-ln u_i)^phi)^(1/phi)) computed in log space:
    boundary coordinates (0 or 1) fall out of the log-sum-exp automatically.
    """
    if not phi >= 1.0:
        raise DomainError(f"Gumbel parameter must satisfy phi >= 1, got {phi}")
    pts = np.asarray(points, dtype=float)
    with np.errstate(divide="ignore"):
        t = -np.log(pts)          # in [0, inf]; 0 at u=1, inf at u=0
        log_t = np.log(t)         # -inf at u=1, +inf at u=0
    # logaddexp keeps the +-inf boundary coordinates exact without warnings
    s = np.logaddexp.reduce(phi * log_t, axis=-1)
    with np.errstate(over="ignore"):
        out = np.exp(-np.exp(s / phi))
    return out if out.ndim else float(out)


def frank_bivariate_cdf(phi: float, u, v):
    """Frank bivariate CDF for any real phi, vectorized.

    Inside the independence band the product copula is returned; outside it
    the evaluation is carried out on log scale so large |phi| cannot
    overflow.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    u, v = np.broadcast_arrays(u, v)
    if abs(phi) < FRANK_INDEPENDENCE_BAND:
        return u * v

    out = np.empty(u.shape, dtype=float)
    zero = (u <= 0.0) | (v <= 0.0)
    u_one = u >= 1.0
    v_one = v >= 1.0
    interior = ~(zero | u_one | v_one)

    uu = np.where(interior, u, 0.5)
    vv = np.where(interior, v, 0.5)
    if phi > 0.0:
        # D - AB = e^{-phi u}(1 - e^{-phi v}) + e^{-phi v}(1 - e^{-phi(1-v)})
        # assembled as a log-sum-exp of two positive terms.
        with np.errstate(divide="ignore"):
            l1 = -phi * uu + np.log(-np.expm1(-phi * vv))
            l2 = -phi * vv + np.log(-np.expm1(-phi * (1.0 - vv)))
            log_den = np.log(-np.expm1(-phi))
        vals = -(np.logaddexp(l1, l2) - log_den) / phi
    else:
        psi = -phi
        with np.errstate(divide="ignore"):
            log_ratio = (
                _log_expm1(psi * uu)
                + _log_expm1(psi * vv)
                - _log_expm1(psi)
            )
        vals = np.logaddexp(0.0, log_ratio) / psi

    out[...] = np.clip(vals, 0.0, 1.0)
    out[zero] = 0.0
    out[u_one & ~zero] = v[u_one & ~zero]
    out[v_one & ~zero & ~u_one] = u[v_one & ~zero & ~u_one]
    return out if out.ndim else float(out)


def _log_expm1(y):
    """log(e^y - 1) for y > 0, stable for both tails."""
    y = np.asarray(y, dtype=float)
    small = y < 20.0
    with np.errstate(divide="ignore"):
        out = np.where(
            small,
            np.log(np.expm1(np.where(small, y, 1.0))),
            y + np.log1p(-np.exp(-np.where(small, 1.0, y))),
        )
    return out


def _frank_exchangeable_cdf(phi: float, point: np.ndarray) -> float:
    """Exchangeable Frank CDF for arity >= 3; requires phi > 0.

    C(u) = -(1/phi) log(1 + prod_i(e^{-phi u_i} - 1) / (e^{-phi} - 1)^(k-1)),
    evaluated as log1p(-exp(sum_i log A_i - (k-1) log D)) with
    A_i = 1 - e^{-phi u_i} and D = 1 - e^{-phi}, all strictly inside (0, 1).
    """
    if np.any(point <= 0.0):
        return 0.0
    active = point[point < 1.0]
    if active.shape[0] == 0:
        return 1.0
    if active.shape[0] == 1:
        return float(active[0])
    k = active.shape[0]
    log_a = np.log(-np.expm1(-phi * active))
    log_d = np.log(-np.expm1(-phi))
    log_q = np.sum(log_a) - (k - 1) * log_d
    value = -np.log1p(-np.exp(log_q)) / phi
    return float(np.clip(value, 0.0, 1.0))


def gaussian_bivariate_cdf(rho: float, u, v):
    """Gaussian copula bivariate CDF via the standard bivariate normal."""
    if not -1.0 < rho < 1.0:
        raise DomainError(f"Gaussian correlation must lie in (-1, 1), got {rho}")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    u, v = np.broadcast_arrays(u, v)
    out = np.empty(u.shape, dtype=float)
    zero = (u <= 0.0) | (v <= 0.0)
    u_one = u >= 1.0
    v_one = v >= 1.0
    interior = ~(zero | u_one | v_one)
    h = special.ndtri(np.where(interior, u, 0.5))
    k = special.ndtri(np.where(interior, v, 0.5))
    out[...] = bvn_cdf(h, k, rho)
    out[zero] = 0.0
    out[u_one & ~zero] = v[u_one & ~zero]
    out[v_one & ~zero & ~u_one] = u[v_one & ~zero & ~u_one]
    return out if out.ndim else float(out)


def bvn_cdf(h, k, rho: float):
    """Standard bivariate normal CDF P(X <= h, Y <= k), corr rho, vectorized.

    Uses Owen's T-function identity, with explicit branches for zero
    arguments where the identity's ratios degenerate.
    """
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    h, k = np.broadcast_arrays(h, k)
    if abs(rho) < _SQRT_EPS:
        return special.ndtr(h) * special.ndtr(k)
    if rho >= 1.0 - _SQRT_EPS:
        return special.ndtr(np.minimum(h, k))
    if rho <= -1.0 + _SQRT_EPS:
        return np.maximum(special.ndtr(h) + special.ndtr(k) - 1.0, 0.0)

    sq = np.sqrt(1.0 - rho * rho)
    phi_h = special.ndtr(h)
    phi_k = special.ndtr(k)

    h_zero = h == 0.0
    k_zero = k == 0.0
    hs = np.where(h_zero, 1.0, h)
    ks = np.where(k_zero, 1.0, k)
    with np.errstate(invalid="ignore", divide="ignore"):
        a1 = (ks - rho * hs) / (hs * sq)
        a2 = (hs - rho * ks) / (ks * sq)
    delta = np.where(hs * ks < 0.0, 0.5, 0.0)
    general = (
        0.5 * (phi_h + phi_k)
        - special.owens_t(hs, a1)
        - special.owens_t(ks, a2)
        - delta
    )
    # P(X <= 0, Y <= k) = Phi(k)/2 + T(k, rho / sqrt(1 - rho^2))
    edge_h = 0.5 * phi_k + special.owens_t(ks, rho / sq)
    edge_k = 0.5 * phi_h + special.owens_t(hs, rho / sq)
    both = 0.25 + np.arcsin(rho) / (2.0 * np.pi)

    out = np.where(h_zero & k_zero, both,
                   np.where(h_zero, edge_h,
                            np.where(k_zero, edge_k, general)))
    # +-inf arguments reduce to the univariate margins.
    out = np.where(np.isneginf(h) | np.isneginf(k), 0.0, out)
    out = np.where(np.isposinf(h), phi_k, out)
    out = np.where(np.isposinf(k) & ~np.isposinf(h) & ~np.isneginf(h), phi_h, out)
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def copula_sample(spec: CopulaSpec, n_series: int, n_draws: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Draw ``n_draws`` joint uniform vectors of length ``n_series``.

    Gumbel uses the positive-stable frailty construction, Frank uses a
    logarithmic-series frailty for phi > 0 (conditional inversion covers the
    bivariate case for any phi != 0), and Gaussian pushes correlated normals
    through their own CDF.
    """
    if n_series < 2:
        raise DomainError(f"n_series must be >= 2, got {n_series}")
    if n_draws < 0:
        raise DomainError(f"n_draws must be >= 0, got {n_draws}")
    if n_draws == 0:
        return np.empty((0, n_series), dtype=float)

    if spec.family is CopulaFamily.GUMBEL:
        return _sample_gumbel(spec.scalar, n_series, n_draws, rng)
    if spec.family is CopulaFamily.FRANK:
        return _sample_frank(spec.scalar, n_series, n_draws, rng)
    if spec.family is CopulaFamily.GAUSSIAN:
        return _sample_gaussian(spec, n_series, n_draws, rng)
    raise UnsupportedError(f"unknown family {spec.family}")


def _sample_gumbel(phi: float, n_series: int, n_draws: int,
                   rng: np.random.Generator) -> np.ndarray:
    if phi - 1.0 < _SQRT_EPS:
        return rng.random((n_draws, n_series))
    alpha = 1.0 / phi
    v = _positive_stable(alpha, n_draws, rng)
    e = rng.exponential(1.0, size=(n_draws, n_series))
    return np.exp(-np.power(e / v[:, None], alpha))


def _positive_stable(alpha: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Positive alpha-stable draws with Laplace transform exp(-s^alpha).

    Kanter's representation: with Theta ~ U(0, pi) and W ~ Exp(1),
    V = [sin((1-a)Theta)/W]^((1-a)/a) * sin(a Theta) / sin(Theta)^(1/a).
    """
    theta = rng.uniform(0.0, np.pi, size=n)
    w = rng.exponential(1.0, size=n)
    ratio = (1.0 - alpha) / alpha
    return (
        np.power(np.sin((1.0 - alpha) * theta) / w, ratio)
        * np.sin(alpha * theta)
        / np.power(np.sin(theta), 1.0 / alpha)
    )


def _sample_frank(phi: float, n_series: int, n_draws: int,
                  rng: np.random.Generator) -> np.ndarray:
    if abs(phi) < FRANK_INDEPENDENCE_BAND:
        return rng.random((n_draws, n_series))
    if n_series == 2:
        # Conditional inversion: valid for every phi != 0.
        u = rng.random(n_draws)
        w = rng.random(n_draws)
        em_u = np.exp(-phi * u)
        v = -np.log1p(w * np.expm1(-phi) / (em_u - w * (em_u - 1.0))) / phi
        return np.column_stack([u, np.clip(v, 0.0, 1.0)])
    if phi <= 0.0:
        raise UnsupportedError(
            f"Frank sampling with K > 2 requires phi > 0, got phi={phi} at K={n_series}"
        )
    # Logarithmic-series frailty, success parameter 1 - e^{-phi}.
    p = -np.expm1(-phi)
    v = rng.logseries(p, size=n_draws).astype(float)
    e = rng.exponential(1.0, size=(n_draws, n_series))
    inner = np.exp(-e / v[:, None]) * np.expm1(-phi)
    return np.clip(-np.log1p(inner) / phi, 0.0, 1.0)


def _sample_gaussian(spec: CopulaSpec, n_series: int, n_draws: int,
                     rng: np.random.Generator) -> np.ndarray:
    if spec.is_matrix:
        matrix = np.asarray(spec.params)
        if matrix.shape[0] != n_series:
            raise DomainError(
                f"correlation matrix is {matrix.shape[0]}x{matrix.shape[0]} "
                f"but {n_series} series were requested"
            )
    else:
        rho = spec.scalar
        if rho <= -1.0 / (n_series - 1):
            raise DomainError(
                f"exchangeable correlation {rho} is not positive definite for K={n_series}"
            )
        matrix = np.full((n_series, n_series), rho)
        np.fill_diagonal(matrix, 1.0)
    try:
        chol = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise DomainError("correlation matrix must be positive definite") from None
    z = rng.standard_normal((n_draws, n_series)) @ chol.T
    return special.ndtr(z)


# ---------------------------------------------------------------------------
# Unconstrained-scale transforms
# ---------------------------------------------------------------------------

def to_unconstrained(spec: CopulaSpec) -> float:
    """Map the scalar copula parameter to the optimizer's unconstrained scale."""
    if spec.is_matrix:
        raise UnsupportedError("transforms are defined for scalar-parameter specs only")
    value = spec.scalar
    if spec.family is CopulaFamily.GUMBEL:
        with np.errstate(divide="ignore"):
            return float(np.log(value - 1.0))
    if spec.family is CopulaFamily.FRANK:
        return float(value)
    if spec.family is CopulaFamily.GAUSSIAN:
        return float(np.arctanh(value))
    raise UnsupportedError(f"unknown family {spec.family}")


def from_unconstrained(family, theta: float) -> CopulaSpec:
    """Inverse of :func:`to_unconstrained`."""
    family = _as_family(family)
    if family is CopulaFamily.GUMBEL:
        return CopulaSpec.gumbel(1.0 + np.exp(theta))
    if family is CopulaFamily.FRANK:
        return CopulaSpec.frank(theta)
    if family is CopulaFamily.GAUSSIAN:
        return CopulaSpec.gaussian(np.tanh(theta))
    raise UnsupportedError(f"unknown family {family}")


def natural_from_unconstrained(family, theta: float) -> float:
    """Scalar parameter value for an unconstrained coordinate."""
    return from_unconstrained(family, theta).scalar


def unconstrained_jacobian(family, theta: float) -> float:
    """d(natural)/d(unconstrained) for the scalar copula parameter."""
    family = _as_family(family)
    if family is CopulaFamily.GUMBEL:
        return float(np.exp(theta))
    if family is CopulaFamily.FRANK:
        return 1.0
    if family is CopulaFamily.GAUSSIAN:
        return float(1.0 / np.cosh(theta) ** 2)
    raise UnsupportedError(f"unknown family {family}")
