"""Small numerical helpers shared across modules.

Gauss rules on mapped intervals, piecewise power-law integration of sampled
positive functions, and a vectorized bisection inverse for increasing maps.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def log_gauss(a, b, n: int = 8):
    """Nodes/weights for integrating over t in [a, b] (a > 0) in log t.

    ``a`` and ``b`` broadcast; the returned arrays have a trailing axis of
    length ``n``. The weights already include the Jacobian t.
    """
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    x, w = gauss_legendre(n)
    la, lb = np.log(a), np.log(b)
    t = np.exp(la + (lb - la) * x)
    return t, (lb - la) * w * t


def algebraic_gauss(h, q: float, n: int = 24):
    """Nodes/weights for t in [0, h] under t = h w**q.

    Endpoint singularities t**e at 0 become w**(q(e+1)-1), which Gauss
    integrates well once q(e+1) >= 3.
    """
    h = np.asarray(h, dtype=float)[..., None]
    x, w = gauss_legendre(n)
    t = h * x**q
    return t, h * q * x ** (q - 1.0) * w


def powerlaw_integral(t: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Integrals of a positive function between consecutive samples.

    Between t[k] and t[k+1] the function is taken to be the power law
    through both samples, so pure powers integrate exactly.
    """
    t = np.asarray(t, dtype=float)
    g = np.asarray(g, dtype=float)
    ratio = t[1:] / t[:-1]
    lr = np.log(ratio)
    e = np.log(g[1:] / g[:-1]) / lr
    ep1 = e + 1.0
    small = np.abs(ep1 * lr) < 1e-8
    with np.errstate(over="ignore", invalid="ignore"):
        val = g[:-1] * t[:-1] * np.expm1(ep1 * lr) / np.where(small, 1.0, ep1)
    return np.where(small, g[:-1] * t[:-1] * lr * (1.0 + 0.5 * ep1 * lr), val)


def local_slopes(t: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Log-log slopes between consecutive samples."""
    return np.diff(np.log(g)) / np.diff(np.log(t))


def increasing_inverse(func, y, lo: float = 1e-300, hi: float = 1e300,
                       rtol: float = 1e-13, max_iter: int = 200) -> np.ndarray:
    """Solve func(x) = y for an increasing positive ``func`` on (0, inf).

    Bisection in log x, vectorized over ``y``. Raises ValueError when some
    target lies outside [func(lo), func(hi)].
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    flo = func(np.full_like(y, lo))
    fhi = func(np.full_like(y, hi))
    bad = ~((flo <= y) & (y <= fhi))
    if np.any(bad):
        raise ValueError(
            f"bracket [{lo:g}, {hi:g}] does not contain a root for "
            f"{np.count_nonzero(bad)} target(s), e.g. y={y[bad][0]:g}")
    a = np.full_like(y, np.log(lo))
    b = np.full_like(y, np.log(hi))
    tol = np.log1p(rtol)
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        fm = func(np.exp(mid))
        below = fm < y
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
        if np.all(b - a < tol):
            break
    return np.exp(0.5 * (a + b))


def decreasing_inverse(func, y, lo: float = 1e-300, hi: float = 1e300,
                       rtol: float = 1e-13, max_iter: int = 200) -> np.ndarray:
    """Solve func(x) = y for a decreasing positive ``func`` on (0, inf)."""
    return increasing_inverse(lambda x: -func(x), -np.asarray(y, dtype=float),
                              lo=lo, hi=hi, rtol=rtol, max_iter=max_iter)
