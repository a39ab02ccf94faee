"""Radial reduction of the jump kernel.

For radial u on R^d,

    L u(r e_1) = P.V. int_0^inf (u(s) - u(r)) K(r, s) ds,
    K(r, s)    = |S^{d-2}| s^{d-1} int_0^pi j(|r e_1 - s w(theta)|) sin^{d-2}(theta) dtheta.

For a power-law kernel j(rho) = A rho^{-d-alpha} the angular integral is a
Gauss hypergeometric function. We use the Euler-transformed form, which is
finite and well conditioned as s -> r:

    K = A |S^{d-1}| s^{d-1} e^{-d-alpha} (e/(r+s))^{d-1} 2F1(d-1-nu, (d-1)/2; d-1; z)

with e = |r - s|, nu = (d+alpha)/2 and z = 4rs/(r+s)^2 = 1 - (e/(r+s))^2. A general j is tabulated
and the angular integral is done by Gauss-Legendre after the substitution
theta = 2 arcsin(q sinh v), q = e/(2 sqrt(rs)), which maps rho = e cosh v.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import gamma as Gamma
from scipy.special import hyp2f1

from . import bernstein as bs
from ._quad import gauss_legendre


def sphere_area(k: int) -> float:
    """Surface measure of the unit sphere S^k in R^{k+1}."""
    return 2.0 * math.pi ** ((k + 1) / 2.0) / Gamma((k + 1) / 2.0)


class HypergeometricTable:
    """2F1(a, b; c; 1 - y^2) for y in [0, 1] by Chebyshev series on dyadic panels.

    Near y = 0 the function has a branch term y^(2(c-a-b)); on each panel
    [2^-(k+1), 2^-k] the branch point sits one panel width away, so a fixed
    degree gives uniform accuracy. Below the last panel scipy is called directly.
    """

    def __init__(self, a: float, b: float, c: float, n_panels: int = 42, degree: int = 22):
        self.abc = (a, b, c)
        self.n_panels = n_panels
        coefs = []
        for k in range(n_panels):
            lo = 2.0 ** -(k + 1)

            def fn(x, lo=lo):
                y = lo * (1.0 + (x + 1.0) / 2.0)
                return hyp2f1(a, b, c, 1.0 - y * y)

            coefs.append(np.polynomial.chebyshev.chebinterpolate(fn, degree))
        self.coef = np.array(coefs)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        mant, ex = np.frexp(y)
        k = -ex
        x = 4.0 * mant - 3.0
        top = k < 0  # y == 1
        k = np.where(top, 0, k)
        x = np.where(top, 1.0, x)
        tiny = (k >= self.n_panels) | (y == 0)
        k = np.minimum(k, self.n_panels - 1)
        c = self.coef
        b1 = np.zeros_like(y)
        b2 = np.zeros_like(y)
        for j in range(c.shape[1] - 1, 0, -1):
            b1, b2 = c[k, j] + 2.0 * x * b1 - b2, b1
        out = c[k, 0] + x * b1 - b2
        if np.any(tiny):
            out[tiny] = hyp2f1(*self.abc, 1.0 - y[tiny] ** 2)
        return out


class PowerKernel:
    """K for j(rho) = sum_k c_k A(d, alpha_k) rho^{-d-alpha_k}."""

    def __init__(self, d: int, terms):
        self.d = int(d)
        self.terms = tuple((float(c) * bs.stable_j_constant(d, a), float(a)) for c, a in terms)
        self.alpha_max = max(a for _, a in self.terms)
        self.origin_coef = sphere_area(d - 1)
        self._tables = [HypergeometricTable(d - 1 - (d + a) / 2.0, (d - 1) / 2.0, d - 1.0)
                        for _, a in self.terms]

    def j(self, rho):
        rho = np.asarray(rho, dtype=float)
        return sum(c * rho ** (-self.d - a) for c, a in self.terms)

    def __call__(self, r, s):
        r = np.asarray(r, dtype=float)
        s = np.asarray(s, dtype=float)
        return self.offset(r, s - r)

    def offset(self, r, t):
        """K(r, r + t), with the distance |t| taken exactly."""
        r = np.asarray(r, dtype=float)
        t = np.asarray(t, dtype=float)
        d = self.d
        e = np.abs(t)
        s = r + t
        rs = r + s
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(rs > 0, e / rs, 1.0)
            out = 0.0
            for (c, a), table in zip(self.terms, self._tables):
                out = out + c * e ** (-d - a) * table(ratio)
            out = self.origin_coef * s ** (d - 1) * ratio ** (d - 1) * out
        return out

    def origin_moment2(self, h):
        """int_0^h s^2 K(0, s) ds."""
        return sum(self.origin_coef * c * h ** (2 - a) / (2 - a) for c, a in self.terms)


class TabulatedKernel:
    """K for a general j, tabulated on a log grid and integrated over angles.

    Below the table j is continued with the shape phi(rho^-2) rho^-d matched
    at the first node; above it by the log-log slope of the last cell.
    """

    def __init__(self, spec: bs.BernsteinSpec, d: int, rho_min: float = 1e-9,
                 rho_max: float = 1e4, per_decade: int = 48, n_angle: int = 64):
        self.spec, self.d = spec, int(d)
        n = int(per_decade * math.log10(rho_max / rho_min)) + 1
        rho = np.geomspace(rho_min, rho_max, n)
        jv = np.zeros_like(rho)
        for i, x in enumerate(rho):
            try:
                jv[i] = bs.levy_density_j(spec, d, x, rtol=1e-9)
            except ArithmeticError:
                # j has underflowed (e.g. exponential tempering): stop the table here
                if i == 0 or jv[i - 1] > 1e-200:
                    raise
                break
            if jv[i] < 1e-250:
                break
        keep = jv > 0
        self.rho_min, self.rho_top = rho[0], rho[keep][-1]
        self._logj = CubicSpline(np.log(rho[keep]), np.log(jv[keep]))
        self._slope_top = float(self._logj(np.log(self.rho_top), 1))
        self._lo_scale = jv[0] / self._shape(rho[0])
        self.n_angle = n_angle
        self.origin_coef = sphere_area(d - 1)
        scaling = bs.estimate_scaling(spec)
        self.alpha_max = 2.0 * scaling.delta2

    def _shape(self, rho):
        return self.spec.phi(rho**-2.0) * rho ** (-self.d)

    def j(self, rho):
        rho = np.asarray(rho, dtype=float)
        out = np.empty_like(rho)
        lo = rho < self.rho_min
        hi = rho > self.rho_top
        mid = ~(lo | hi)
        out[mid] = np.exp(self._logj(np.log(rho[mid])))
        out[lo] = self._lo_scale * self._shape(rho[lo])
        with np.errstate(under="ignore"):
            out[hi] = np.exp(self._logj(np.log(self.rho_top))
                             + self._slope_top * np.log(rho[hi] / self.rho_top))
        return out

    def __call__(self, r, s):
        r = np.asarray(r, dtype=float)
        s = np.asarray(s, dtype=float)
        return self.offset(r, s - r)

    def offset(self, r, t):
        """K(r, r + t), with the distance |t| taken exactly."""
        r, t = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
        s = r + t
        d = self.d
        out = np.zeros(r.shape)
        at0 = (r == 0) & (s > 0)
        out[at0] = self.origin_coef * s[at0] ** (d - 1) * self.j(s[at0])
        gen = (r > 0) & (s > 0)
        out[gen & (t == 0)] = np.inf
        ok = gen & (t != 0)
        rr, ss, e = r[ok], s[ok], np.abs(t[ok])
        q = e / (2.0 * np.sqrt(rr * ss))
        x, w = gauss_legendre(self.n_angle)
        # theta in [0, pi/2] through rho = e cosh v
        vmax = np.arcsinh(math.sqrt(0.5) / q)
        v = vmax[:, None] * x
        sh = q[:, None] * np.sinh(v)
        theta = 2.0 * np.arcsin(np.minimum(sh, 1.0))
        dtheta = 2.0 * q[:, None] * np.cosh(v) / np.sqrt(np.maximum(1.0 - sh**2, 1e-300))
        rho = e[:, None] * np.cosh(v)
        near = (self.j(rho) * np.sin(theta) ** (d - 2) * dtheta) @ w * vmax
        # theta in [pi/2, pi] is smooth
        x2, w2 = gauss_legendre(24)
        th = 0.5 * math.pi * (1.0 + x2)
        rho2 = np.sqrt(rr[:, None] ** 2 + ss[:, None] ** 2 - 2 * rr[:, None] * ss[:, None] * np.cos(th))
        far = (self.j(rho2) * np.sin(th) ** (d - 2)) @ w2 * (0.5 * math.pi)
        out[ok] = sphere_area(d - 2) * ss ** (d - 1) * (near + far)
        return out

    def origin_moment2(self, h):
        from ._quad import algebraic_gauss

        t, wt = algebraic_gauss(np.asarray(h, dtype=float), 3.0 / (2.0 - self.alpha_max), 24)
        return (t**2 * self(np.zeros_like(t), t) * wt).sum(axis=-1)


def make_kernel(spec: bs.BernsteinSpec, d: int):
    if d < 2:
        raise ValueError("dimension must be at least 2")
    if spec.power_terms is not None:
        return PowerKernel(d, spec.power_terms)
    if spec.nu is None:
        raise ValueError(f"family {spec.family!r} has no Levy density; the kernel is unavailable")
    return TabulatedKernel(spec, d)


def radial_kernel(spec: bs.BernsteinSpec, d: int, r, s):
    """K(r, s); r, s >= 0 and not both zero."""
    r_arr, s_arr = np.asarray(r, dtype=float), np.asarray(s, dtype=float)
    if np.any(r_arr < 0) or np.any(s_arr < 0):
        raise ValueError("radii must be nonnegative")
    if np.any((r_arr == 0) & (s_arr == 0)):
        raise ValueError("K(0, 0) is undefined")
    out = make_kernel(spec, d)(r_arr, s_arr)
    return float(out) if np.ndim(out) == 0 else out
