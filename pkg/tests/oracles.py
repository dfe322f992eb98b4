"""Independent reference implementations used only by the tests."""

from __future__ import annotations

from fractions import Fraction

import mpmath
import numpy as np


def digit_expansion(index: int, base: int) -> Fraction:
    """Radical inverse as an exact fraction from the explicit digit list."""
    digits = []
    while index:
        digits.append(index % base)
        index //= base
    return sum((Fraction(a, base ** (j + 1)) for j, a in enumerate(digits)), Fraction(0))


def erf_series(x: float, terms: int = 200) -> float:
    """Maclaurin series of erf evaluated in 50-digit arithmetic."""
    with mpmath.workdps(50):
        x = mpmath.mpf(x)
        total = mpmath.mpf(0)
        for n in range(terms):
            total += (-1) ** n * x ** (2 * n + 1) / (mpmath.factorial(n) * (2 * n + 1))
        return float(2 / mpmath.sqrt(mpmath.pi) * total)


def normal_cdf_series(z: float) -> float:
    return 0.5 * (1.0 + erf_series(z / np.sqrt(2.0)))


def bisect_quantile(p: float, lo: float = -10.0, hi: float = 10.0, iters: int = 200) -> float:
    """Normal quantile by bisection on a high-precision CDF."""
    with mpmath.workdps(50):
        target = mpmath.mpf(p)
        lo, hi = mpmath.mpf(lo), mpmath.mpf(hi)
        for _ in range(iters):
            mid = (lo + hi) / 2
            if mpmath.ncdf(mid) < target:
                lo = mid
            else:
                hi = mid
        return float((lo + hi) / 2)


def central_differences(f, params, eps: float = 1e-6):
    """Central finite-difference gradient of scalar ``f()`` w.r.t. arrays in ``params`` (mutated in place)."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + eps
            up = f()
            p[idx] = old - eps
            down = f()
            p[idx] = old
            g[idx] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def two_pass_moments(values):
    values = [float(v) for v in values]
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    return mean, var**0.5


def euler_cartpole(spec, state, steps: int, refine: int = 100):
    """Explicit Euler at ``dt / refine`` with zero force; a deliberately crude reference."""
    s = np.array(state, dtype=float)
    h = spec.dt / refine
    for _ in range(steps * refine):
        s = s + h * spec._deriv(s, np.zeros(()))
    return s


def relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
