"""Deterministic low-discrepancy perturbation banks.

A bank is built once from Halton points, pushed through the inverse normal
CDF and smoothed in time with a least-squares cubic B-spline. Row ``i`` of a
bank depends only on the Halton index, so the first ``M`` rows of a bank of
``N`` samples are exactly the bank of ``M`` samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray
from scipy.interpolate import BSpline
from scipy.special import erfc

MAX_PRIMES = 1024
P_CLAMP = 1e-12


@lru_cache(maxsize=1)
def _prime_table() -> tuple[int, ...]:
    # 1024th prime is 8161
    limit = 8200
    sieve = np.ones(limit, dtype=bool)
    sieve[:2] = False
    for k in range(2, int(limit**0.5) + 1):
        if sieve[k]:
            sieve[k * k :: k] = False
    primes = tuple(int(p) for p in np.flatnonzero(sieve)[:MAX_PRIMES])
    assert len(primes) == MAX_PRIMES
    return primes


def first_primes(n: int) -> tuple[int, ...]:
    """Return the first ``n`` primes (2, 3, 5, ...)."""
    if n < 1:
        raise ValueError(f"need at least one prime, got n={n}")
    if n > MAX_PRIMES:
        raise OverflowError(f"Halton dimension {n} exceeds the prime table ({MAX_PRIMES})")
    return _prime_table()[:n]


def radical_inverse(index: int, base: int) -> float:
    """Reflect the base-``base`` digits of ``index`` about the radix point."""
    if index < 1:
        raise ValueError(f"index must be >= 1, got {index}")
    if base < 2:
        raise ValueError(f"base must be >= 2, got {base}")
    # exact rational accumulation, one rounding at the end
    num, den = 0, 1
    while index > 0:
        index, digit = divmod(index, base)
        num = num * base + digit
        den *= base
    return num / den


@dataclass(frozen=True)
class HaltonConfig:
    dimension: int
    count: int
    skip: int = 0

    def __post_init__(self) -> None:
        if self.dimension < 1 or self.count < 1:
            raise ValueError("Halton dimension and count must be >= 1")
        if self.skip < 0:
            raise ValueError("Halton skip must be >= 0")


def halton_points(config: HaltonConfig) -> NDArray[np.float64]:
    """Halton point set of shape ``(count, dimension)``.

    Row ``i`` uses index ``skip + i + 1``; column ``b`` uses the ``b``-th prime.
    """
    bases = first_primes(config.dimension)
    indices = np.arange(config.skip + 1, config.skip + config.count + 1, dtype=np.int64)
    out = np.empty((config.count, config.dimension))
    for col, base in enumerate(bases):
        n = indices.copy()
        # digit-reversed integer and its denominator, kept exact in int64
        num = np.zeros_like(n)
        den = np.ones_like(n)
        while np.any(n > 0):
            live = n > 0
            n, digit = np.divmod(n, base)
            num = np.where(live, num * base + digit, num)
            den = np.where(live, den * base, den)
        out[:, col] = num / den
    return out


def normal_cdf(z):
    """Standard normal CDF through the complementary error function."""
    return 0.5 * erfc(-np.asarray(z, dtype=float) / math.sqrt(2.0))


# Acklam's rational approximation coefficients
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _tail(q):
    num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
    den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
    return num / den


def inverse_normal_cdf(p):
    """Quantile of the standard normal distribution.

    Rational approximation followed by one Halley correction step, giving
    roughly machine precision on ``[1e-12, 1 - 1e-12]``. Accepts scalars or
    arrays; raises ``ValueError`` for probabilities outside ``(0, 1)``.
    """
    scalar = np.ndim(p) == 0
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any(~(p > 0.0) | ~(p < 1.0)):
        raise ValueError("inverse_normal_cdf is defined on the open interval (0, 1)")

    z = np.empty_like(p)
    low = p < _P_LOW
    high = p > 1.0 - _P_LOW
    mid = ~(low | high)

    q = p[mid] - 0.5
    r = q * q
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    z[mid] = num / den
    z[low] = _tail(np.sqrt(-2.0 * np.log(p[low])))
    z[high] = -_tail(np.sqrt(-2.0 * np.log1p(-p[high])))

    # Halley step; work in the smaller tail to keep the residual accurate
    upper = p > 0.5
    e = np.where(upper, (1.0 - p) - normal_cdf(-z), normal_cdf(z) - p)
    u = e * math.sqrt(2.0 * math.pi) * np.exp(0.5 * z * z)
    z = z - u / (1.0 + 0.5 * z * u)
    return float(z[0]) if scalar else z


@lru_cache(maxsize=64)
def _smoothing_operator(length: int, degree: int) -> NDArray[np.float64]:
    n_basis = length // 3 + 4
    n_inner = n_basis - degree - 1
    inner = np.linspace(0.0, 1.0, n_inner + 2)[1:-1]
    knots = np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)])
    grid = np.linspace(0.0, 1.0, length)
    design = BSpline.design_matrix(grid, knots, degree).toarray()
    # minimum-norm least squares; short series are reproduced exactly
    op = design @ np.linalg.pinv(design)
    op.setflags(write=False)
    return op


def bspline_smooth(series, degree: int = 3) -> NDArray[np.float64]:
    """Project a series onto a clamped uniform cubic B-spline space.

    The spline has ``len(series) // 3 + 4`` basis functions and is evaluated
    back on the uniform grid. ``series`` may be 1-D or have time on the last
    axis, in which case every leading row is smoothed independently.
    """
    series = np.asarray(series, dtype=float)
    length = series.shape[-1]
    if length < degree + 1:
        raise ValueError(f"series of length {length} too short for degree {degree}")
    return series @ _smoothing_operator(length, degree).T


@dataclass(frozen=True)
class SampleBank:
    perturbations: NDArray[np.float64] = field(repr=False)
    config: HaltonConfig
    horizon: int
    control_dim: int

    @property
    def count(self) -> int:
        return self.perturbations.shape[0]

    def prefix(self, m: int) -> SampleBank:
        """Bank of the first ``m`` samples (identical to building it at size ``m``)."""
        if not 1 <= m <= self.count:
            raise ValueError(f"prefix size {m} outside [1, {self.count}]")
        cfg = HaltonConfig(self.config.dimension, m, self.config.skip)
        return SampleBank(self.perturbations[:m], cfg, self.horizon, self.control_dim)


def build_sample_bank(count: int, horizon: int, control_dim: int, skip: int = 0) -> SampleBank:
    """Smoothed standard-normal perturbations of shape ``(count, horizon, control_dim)``.

    The flattened Halton point is time-major: all control dims of step 0,
    then step 1, and so on. Horizons shorter than four steps have no cubic
    spline space to project onto and are left unsmoothed.
    """
    if count < 1 or horizon < 1 or control_dim < 1:
        raise ValueError("count, horizon and control_dim must be positive")
    config = HaltonConfig(horizon * control_dim, count, skip)
    u = np.clip(halton_points(config), P_CLAMP, 1.0 - P_CLAMP)
    z = inverse_normal_cdf(u.ravel()).reshape(count, horizon, control_dim)
    if horizon >= 4:
        # row by row so a sample's values never depend on the bank size
        for i in range(count):
            for d in range(control_dim):
                z[i, :, d] = bspline_smooth(z[i, :, d])
    pert = np.ascontiguousarray(z)
    pert.setflags(write=False)
    return SampleBank(pert, config, horizon, control_dim)
