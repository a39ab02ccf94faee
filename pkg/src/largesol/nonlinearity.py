"""Source terms f with power-like growth and the transforms built on them.

For f with (1+m) f(t) <= t f'(t) <= (1+M) f(t) we use

    F(t)      = int_0^t f,
    varphi(t) = int_t^inf F(s)^(-1/2) ds   (decreasing),
    psi       = varphi^(-1).

The power family f(t) = t^p has closed forms for all three. Custom
expressions are handled by a table of F and varphi at log-spaced nodes plus
Gauss-Legendre integration inside each cell, so evaluations between nodes are
as accurate as at the nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from ._quad import decreasing_inverse, gauss_legendre

ArrayFn = Callable[[np.ndarray], np.ndarray]

_TABLE_LO, _TABLE_HI, _PER_DECADE = -6.0, 30.0, 20
_GAUSS_N = 10


def _nonneg(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("f is defined on [0, inf) only")
    return t


@dataclass(frozen=True)
class Nonlinearity:
    family: str
    params: Mapping[str, object]
    f: ArrayFn = field(repr=False, compare=False)
    df: ArrayFn = field(repr=False, compare=False)
    m: float
    M: float
    _table: "_Table | None" = field(default=None, repr=False, compare=False)

    def __call__(self, t):
        return self.f(_nonneg(t))

    @property
    def p(self) -> float | None:
        return self.params.get("p") if self.family == "power" else None

    def record(self) -> dict:
        if self.family == "power":
            return {"family": "power", "p": self.params["p"]}
        return {"family": "custom", "expression": self.params["expression"]}


def make_power(p: float) -> Nonlinearity:
    """f(t) = t^p on [0, inf); m = M = p - 1."""
    p = float(p)
    if not p > 1.0:
        raise ValueError(f"power exponent must exceed 1, got {p}")
    return Nonlinearity(
        family="power",
        params={"p": p},
        f=lambda t: np.power(t, p),
        df=lambda t: p * np.power(t, p - 1.0),
        m=p - 1.0,
        M=p - 1.0,
    )


def make_custom(expression: str, grid=None) -> Nonlinearity:
    """f given as an expression in ``t`` using +, -, *, /, **, log and exp.

    The exponents m, M are estimated on ``grid`` (default: the table range).
    """
    import sympy

    t = sympy.Symbol("t", positive=True)
    allowed = {"t": t, "log": sympy.log, "exp": sympy.exp, "sqrt": sympy.sqrt}
    try:
        expr = sympy.parse_expr(expression, local_dict=allowed, global_dict={"Integer": sympy.Integer,
                                                                               "Float": sympy.Float,
                                                                               "Rational": sympy.Rational,
                                                                               "Symbol": sympy.Symbol})
    except Exception as exc:  # sympy raises a zoo of exception types
        raise ValueError(f"cannot parse expression {expression!r}: {exc}") from None
    extra = expr.free_symbols - {t}
    if extra:
        raise ValueError(f"expression may only use the variable t, found {sorted(map(str, extra))}")
    f_np = sympy.lambdify(t, expr, "numpy")
    df_np = sympy.lambdify(t, sympy.diff(expr, t), "numpy")

    def f(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.asarray(f_np(x), dtype=float) * np.ones_like(x)
        return np.where(x == 0, 0.0, out)

    def df(x):
        x = np.asarray(x, dtype=float)
        return np.asarray(df_np(x), dtype=float) * np.ones_like(x)

    if abs(float(sympy.limit(expr, t, 0, "+"))) > 0:
        raise ValueError("custom f must satisfy f(0) = 0")
    probe = Nonlinearity("custom", {"expression": expression}, f, df, 1.0, 1.0)
    m_hat, M_hat, ok = check_f1(probe, np.logspace(_TABLE_LO, _TABLE_HI, 721) if grid is None else grid)
    if not ok:
        raise ValueError(f"custom f violates the growth bounds (m_hat={m_hat:g}, M_hat={M_hat:g})")
    nl = Nonlinearity("custom", {"expression": expression}, f, df, m_hat, M_hat)
    return Nonlinearity("custom", {"expression": expression}, f, df, m_hat, M_hat, _Table.build(nl))


def from_config(record: Mapping) -> Nonlinearity:
    """Build from ``{"family": "power", "p": ...}`` or ``{"family": "custom", "expression": ...}``.

    Parameters nested under ``"params"`` are accepted too.
    """
    family = record.get("family") if isinstance(record, Mapping) else None
    params = record.get("params", record) if family else {}
    try:
        if family == "power":
            return make_power(params["p"])
        if family == "custom":
            return make_custom(params["expression"])
    except KeyError as exc:
        raise ValueError(f"f record for family {family!r} lacks parameter {exc}") from None
    raise ValueError(f"unknown nonlinearity family {family!r}")


def check_f1(nl: Nonlinearity, grid) -> tuple[float, float, bool]:
    """(min - 1, max - 1, verdict) of t f'(t)/f(t) over the grid."""
    t = np.asarray(grid, dtype=float)
    if t.size < 16 or np.any(t <= 0):
        raise ValueError("need at least 16 positive grid points")
    fv = nl.f(t)
    if np.any(fv == 0):
        raise ValueError(f"f vanishes at t = {t[fv == 0][0]:g} > 0")
    ratio = t * nl.df(t) / fv - 1.0
    lo, hi = float(ratio.min()), float(ratio.max())
    return lo, hi, bool(0.0 < lo <= hi)


def check_doubling(nl: Nonlinearity, grid) -> bool:
    """f(2t) <= 2^(1+M) f(t) on the grid."""
    t = np.asarray(grid, dtype=float)
    return bool(np.all(nl.f(2 * t) <= 2.0 ** (1.0 + nl.M) * nl.f(t) * (1 + 1e-12)))


class _Table:
    """F and varphi at log-spaced nodes s_k with cell-wise Gauss refinement."""

    def __init__(self, nl, s, F, phi):
        self.nl, self.s, self.F, self.phi = nl, s, F, phi
        self.log_s = np.log(s)

    @classmethod
    def build(cls, nl: Nonlinearity) -> "_Table":
        s = np.logspace(_TABLE_LO, _TABLE_HI, int((_TABLE_HI - _TABLE_LO) * _PER_DECADE) + 1)
        x, w = gauss_legendre(_GAUSS_N)
        h = np.diff(s)
        nodes = s[:-1, None] + h[:, None] * x
        cell_f = h * (nl.f(nodes) @ w)
        # local power behaviour f ~ s^e below the first node
        e0 = float(s[0] * nl.df(s[:1])[0] / nl.f(s[:1])[0])
        F0 = s[0] * float(nl.f(s[:1])[0]) / (1.0 + e0)
        F = np.concatenate([[F0], F0 + np.cumsum(cell_f)])
        tab = cls(nl, s, F, None)
        cell_phi = h * (tab._F_inside(nodes) ** -0.5 @ w)
        # tail past the last node from the local power fit F ~ s^e
        eT = s[-1] * float(nl.f(s[-1:])[0]) / F[-1]
        tail = 2.0 * s[-1] * F[-1] ** -0.5 / (eT - 2.0)
        tab.phi = np.concatenate([tail + np.cumsum(cell_phi[::-1])[::-1], [tail]])
        tab._e_lo = e0
        tab._e_hi = eT
        return tab

    def _cell(self, t):
        k = np.searchsorted(self.s, t, side="right") - 1
        return np.clip(k, 0, self.s.size - 2)

    def _F_inside(self, x):
        """F at points x (any shape) using the node value to the left."""
        x = np.asarray(x, dtype=float)
        k = self._cell(x)
        x0 = self.s[k]
        gx, gw = gauss_legendre(_GAUSS_N)
        pts = x0[..., None] + (x - x0)[..., None] * gx
        return self.F[k] + (x - x0) * (self.nl.f(pts) @ gw)

    def F_at(self, t):
        t = np.asarray(t, dtype=float)
        out = np.empty_like(t)
        lo, hi = t < self.s[0], t > self.s[-1]
        mid = ~(lo | hi)
        out[mid] = self._F_inside(t[mid])
        out[lo] = self.F[0] * (t[lo] / self.s[0]) ** (1.0 + self._e_lo)
        out[hi] = self.F[-1] * (t[hi] / self.s[-1]) ** self._e_hi
        return out

    def varphi_at(self, t):
        t = np.asarray(t, dtype=float)
        out = np.empty_like(t)
        lo, hi = t < self.s[0], t > self.s[-1]
        mid = ~(lo | hi)
        tm = t[mid]
        k = self._cell(tm)
        right = self.s[k + 1]
        gx, gw = gauss_legendre(_GAUSS_N)
        pts = tm[:, None] + (right - tm)[:, None] * gx
        out[mid] = self.phi[k + 1] + (right - tm) * (self._F_inside(pts) ** -0.5 @ gw)
        # outside the table F is a pure power, so varphi is too
        e_lo = 1.0 + self._e_lo
        out[lo] = self.phi[0] + 2.0 * self.s[0] * self.F[0] ** -0.5 / (e_lo - 2.0) * (
            (t[lo] / self.s[0]) ** (1.0 - e_lo / 2.0) - 1.0)
        out[hi] = self.phi[-1] * (t[hi] / self.s[-1]) ** (1.0 - self._e_hi / 2.0)
        return out


def _positive(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("argument must be positive")
    return t


def _scalar(x, like):
    return float(x) if np.ndim(like) == 0 else x


def antiderivative_F(nl: Nonlinearity, t):
    ta = _positive(t)
    if nl.family == "power":
        p = nl.params["p"]
        return _scalar(ta ** (p + 1.0) / (p + 1.0), t)
    return _scalar(nl._table.F_at(np.atleast_1d(ta)).reshape(ta.shape), t)


def power_varphi_constant(p: float) -> float:
    return 2.0 * math.sqrt(p + 1.0) / (p - 1.0)


def varphi(nl: Nonlinearity, t):
    ta = _positive(t)
    if nl.family == "power":
        p = nl.params["p"]
        return _scalar(power_varphi_constant(p) * ta ** (-(p - 1.0) / 2.0), t)
    return _scalar(nl._table.varphi_at(np.atleast_1d(ta)).reshape(ta.shape), t)


def dvarphi(nl: Nonlinearity, t):
    return -np.asarray(antiderivative_F(nl, t)) ** -0.5


def psi(nl: Nonlinearity, t):
    """Inverse of varphi: closed form for powers, bracketing bisection otherwise."""
    ta = _positive(t)
    if nl.family == "power":
        p = nl.params["p"]
        return _scalar((power_varphi_constant(p) / ta) ** (2.0 / (p - 1.0)), t)
    flat = np.atleast_1d(ta).ravel()
    try:
        out = decreasing_inverse(lambda x: varphi(nl, x), flat, rtol=1e-13)
    except ValueError:
        raise ValueError("psi bracket not found in [1e-300, 1e300]") from None
    return _scalar(np.asarray(out).reshape(ta.shape), t)


def dpsi(nl: Nonlinearity, t):
    """psi'(t) = 1/varphi'(psi(t)) = -F(psi(t))^(1/2)."""
    return -np.asarray(antiderivative_F(nl, psi(nl, t))) ** 0.5


@dataclass(frozen=True)
class TransformReport:
    passed: bool
    failed: tuple[str, ...]
    sqrt_ratio_bounds: tuple[float, float]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "failed": list(self.failed),
                "sqrt_ratio_bounds": list(self.sqrt_ratio_bounds)}


def check_transform_properties(nl: Nonlinearity, grid, rtol: float = 1e-6) -> TransformReport:
    """Bounds linking varphi, psi and f, checked with finite differences on ``grid``."""
    t = _positive(grid)
    h = 1e-4 * t
    failed = []
    ph = varphi(nl, t)
    dph = np.abs(varphi(nl, t + h) - varphi(nl, t - h)) / (2 * h)
    slack = 1 + rtol
    if np.any(dph * slack < nl.m / 2 * ph / t) or np.any(dph > slack * nl.M / 2 * ph / t):
        failed.append("varphi_derivative")
    sq = np.sqrt(t / nl.f(t)) / ph
    if not (np.all(np.isfinite(sq)) and sq.min() > 0):
        failed.append("sqrt_ratio")
    ps = psi(nl, t)
    dps = np.abs(psi(nl, t + h) - psi(nl, t - h)) / (2 * h)
    if np.any(dps * slack < 2 / nl.M * ps / t) or np.any(dps > slack * 2 / nl.m * ps / t):
        failed.append("psi_derivative")
    g_m = ps * t ** (2 / nl.m)
    g_M = ps * t ** (2 / nl.M)
    order = np.argsort(t)
    if np.any(np.diff(g_m[order]) < -rtol * g_m[order][1:]):
        failed.append("psi_m_monotone")
    if np.any(np.diff(g_M[order]) > rtol * g_M[order][1:]):
        failed.append("psi_M_monotone")
    return TransformReport(not failed, tuple(failed), (float(sq.min()), float(sq.max())))
