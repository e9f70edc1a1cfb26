"""Closed-form steady-state income distribution and its special functions.

The stationary law of the income process is an inverse-gamma distribution:
income above the starvation offset is distributed as C0 / X with
X ~ Gamma(M + 1, 1).  Its density

    f(y) = C0^(M+1) / Gamma(M+1) * exp(-C0 / y) * y^(-(M+2))

is exponentially suppressed at low income and has a power-law tail with
density exponent M + 2.  The CDF is the regularized upper incomplete gamma
function Q(M+1, C0/y), which this module implements directly (series /
continued-fraction split) so the rest of the package does not depend on an
external special-function library for its core law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError, NumericalError

GAMMA_TOL = 1e-12
GAMMA_MAX_ITER = 500

# Below this size a plain Python loop beats numpy's per-op dispatch overhead.
_VECTOR_CUTOFF = 64


def lgamma(x: float) -> float:
    """Natural log of the gamma function for x > 0."""
    if x <= 0.0:
        raise DomainError(f"lgamma requires x > 0, got {x}")
    return math.lgamma(x)


def _reg_upper_scalar(a: float, x: float) -> float:
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    gln = math.lgamma(a)
    if x < a + 1.0:
        # series for the lower function P; Q = 1 - P
        ap = a
        term = 1.0 / a
        total = term
        for _ in range(GAMMA_MAX_ITER):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * GAMMA_TOL:
                return 1.0 - total * math.exp(-x + a * math.log(x) - gln)
        raise NumericalError(f"incomplete gamma series stalled at a={a}, x={x}")
    # modified Lentz continued fraction for Q
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, GAMMA_MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < GAMMA_TOL:
            return math.exp(-x + a * math.log(x) - gln) * h
    raise NumericalError(f"incomplete gamma continued fraction stalled at a={a}, x={x}")


def _reg_upper_array(a: float, x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    gln = math.lgamma(a)
    inf_m = np.isinf(x)
    zero_m = x == 0.0
    out[inf_m] = 0.0
    out[zero_m] = 1.0
    ser_m = ~inf_m & ~zero_m & (x < a + 1.0)
    cf_m = ~inf_m & ~zero_m & ~ser_m
    if ser_m.any():
        xs = x[ser_m]
        term = np.full(xs.shape, 1.0 / a)
        total = term.copy()
        ap = a
        for _ in range(GAMMA_MAX_ITER):
            ap += 1.0
            term *= xs / ap
            total += term
            if np.all(np.abs(term) < np.abs(total) * GAMMA_TOL):
                break
        else:
            raise NumericalError(f"incomplete gamma series stalled at a={a}")
        out[ser_m] = 1.0 - total * np.exp(-xs + a * np.log(xs) - gln)
    if cf_m.any():
        xc = x[cf_m]
        tiny = 1e-300
        b = xc + 1.0 - a
        c = np.full(xc.shape, 1.0 / tiny)
        d = 1.0 / b
        h = d.copy()
        done = np.zeros(xc.shape, dtype=bool)
        for i in range(1, GAMMA_MAX_ITER + 1):
            an = -i * (i - a)
            b += 2.0
            d = an * d + b
            np.copyto(d, tiny, where=np.abs(d) < tiny)
            c = b + an / c
            np.copyto(c, tiny, where=np.abs(c) < tiny)
            d = 1.0 / d
            delta = d * c
            h *= np.where(done, 1.0, delta)
            done |= np.abs(delta - 1.0) < GAMMA_TOL
            if done.all():
                break
        else:
            raise NumericalError(f"incomplete gamma continued fraction stalled at a={a}")
        out[cf_m] = np.exp(-xc + a * np.log(xc) - gln) * h
    return out


def reg_upper_incomplete_gamma(a: float, x):
    """Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a).

    Series representation for x < a + 1, modified Lentz continued fraction
    otherwise; tolerance 1e-12, at most 500 iterations.  Accepts a scalar or
    an ndarray for ``x``.  Q(a, 0) = 1 and Q(a, inf) = 0.
    """
    if not a > 0.0:
        raise DomainError(f"incomplete gamma requires a > 0, got a={a}")
    if np.isscalar(x) or np.ndim(x) == 0:
        xf = float(x)
        if math.isnan(xf) or xf < 0.0:
            raise DomainError(f"incomplete gamma requires x >= 0, got x={x}")
        return _reg_upper_scalar(a, xf)
    arr = np.asarray(x, dtype=float)
    if np.isnan(arr).any() or (arr < 0.0).any():
        raise DomainError("incomplete gamma requires x >= 0")
    if arr.size <= _VECTOR_CUTOFF:
        return np.array([_reg_upper_scalar(a, v) for v in arr.ravel()]).reshape(arr.shape)
    return _reg_upper_array(a, arr)


@dataclass(frozen=True)
class SteadyStateIPDF:
    """Stationary income law: inverse gamma with shape M + 1 and scale C0.

    ``offset_ymin`` is the starvation level subtracted from observed income
    before modeling.  It is stored here for bookkeeping but never applied by
    this module; the survey/estimate layers own the data <-> model coordinate
    shift so it happens in exactly one place.
    """

    shape_M: float
    scale_C0: float
    offset_ymin: float = 0.0

    def __post_init__(self):
        if not self.shape_M > 0.0:
            raise DomainError(f"shape_M must be > 0, got {self.shape_M}")
        if not self.scale_C0 > 0.0:
            raise DomainError(f"scale_C0 must be > 0, got {self.scale_C0}")
        if self.offset_ymin < 0.0:
            raise DomainError(f"offset_ymin must be >= 0, got {self.offset_ymin}")


def _check_positive_income(y):
    arr = np.asarray(y, dtype=float)
    if np.isnan(arr).any() or not (arr > 0.0).all():
        raise DomainError("income must be strictly positive")
    return arr


def ipdf_density(dist: SteadyStateIPDF, y):
    """Density of the stationary law at income y (above the offset).

    Vectorized over ``y``; nonpositive y is a domain error.
    """
    arr = _check_positive_income(y)
    m, c0 = dist.shape_M, dist.scale_C0
    log_norm = (m + 1.0) * math.log(c0) - math.lgamma(m + 1.0)
    out = np.exp(log_norm - c0 / arr - (m + 2.0) * np.log(arr))
    return float(out) if np.isscalar(y) or np.ndim(y) == 0 else out


def ipdf_cdf(dist: SteadyStateIPDF, y):
    """CDF of the stationary law: Q(M+1, C0/y).  Vectorized over ``y``."""
    arr = _check_positive_income(y)
    x = dist.scale_C0 / arr
    out = reg_upper_incomplete_gamma(dist.shape_M + 1.0, x)
    return float(out) if np.isscalar(y) or np.ndim(y) == 0 else out


def ipdf_mean(dist: SteadyStateIPDF) -> float:
    """Mean income C0 * Gamma(M) / Gamma(M+1) = C0 / M."""
    return dist.scale_C0 / dist.shape_M


class Moment(NamedTuple):
    """Raw moment value with an explicit finiteness flag.

    The k-th raw moment exists only for k < M + 1; callers must branch on
    ``finite`` instead of relying on an infinity sentinel.
    """

    value: float
    finite: bool


def ipdf_moment(dist: SteadyStateIPDF, k: int) -> Moment:
    """k-th raw moment: C0^k * Gamma(M+1-k) / Gamma(M+1), finite iff k < M+1."""
    if not (isinstance(k, (int, np.integer)) and k >= 1):
        raise DomainError(f"moment order must be a positive integer, got {k}")
    m, c0 = dist.shape_M, dist.scale_C0
    if k >= m + 1.0:
        return Moment(math.nan, False)
    log_val = k * math.log(c0) + math.lgamma(m + 1.0 - k) - math.lgamma(m + 1.0)
    return Moment(math.exp(log_val), True)


def ipdf_sample(dist: SteadyStateIPDF, n: int, seed: int) -> np.ndarray:
    """Draw n i.i.d. incomes as C0 / Gamma(M+1) variates; deterministic in seed."""
    if n < 0:
        raise DomainError(f"sample size must be >= 0, got {n}")
    if n == 0:
        return np.empty(0)
    rng = np.random.default_rng(seed)
    return dist.scale_C0 / rng.gamma(dist.shape_M + 1.0, 1.0, size=n)
