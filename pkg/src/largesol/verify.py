"""Discrete verifiers for the structural lemmas behind the existence proof.

"Distributional" statements are checked as weighted-sum pairings with the
weighted adjoint A^* = D^{-1} A^T D of the discrete operator, for which
sum w v (A^* xi) = sum w xi (A v) holds exactly. Test functions are discrete
bumps: indicator profiles smoothed by repeated [1, 2, 1] / 4 averaging.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nonlinearity as nlm
from .nonlocal_operator import DiscreteOperator, Field, RadialGrid, _band_slice, band_solve, harmonic_lift

PAIRING_NOTE = "weak forms evaluated as weighted node sums against the operator adjoint"


@dataclass(frozen=True)
class CheckResult:
    name: str
    verdict: bool
    margin: float
    location: int | None
    tolerance: float
    applicable: bool = True
    note: str = ""

    def __post_init__(self):
        expected = bool(self.applicable and np.isfinite(self.margin) and self.margin >= -self.tolerance)
        if self.verdict != expected:
            raise ValueError("verdict must be true exactly when margin >= -tolerance")

    @classmethod
    def judge(cls, name, margin, location, tolerance, note=""):
        margin = float(margin)
        return cls(name, bool(margin >= -tolerance), margin, location, float(tolerance), True, note)

    @classmethod
    def inapplicable(cls, name, tolerance, note):
        return cls(name, False, float("nan"), None, float(tolerance), False, note)

    def to_dict(self) -> dict:
        return {"name": self.name, "verdict": self.verdict, "margin": self.margin, "location": self.location,
                "tolerance": self.tolerance, "applicable": self.applicable, "note": self.note}


def format_table(results) -> str:
    rows = [f"{'check':<22} {'verdict':<12} {'margin':>12} {'node':>6} {'tol':>9}"]
    for res in results:
        verdict = ("pass" if res.verdict else "FAIL") if res.applicable else "inapplicable"
        node = "-" if res.location is None else str(res.location)
        rows.append(f"{res.name:<22} {verdict:<12} {res.margin:>12.3e} {node:>6} {res.tolerance:>9.1e}")
        if res.note:
            rows.append(f"  {res.note}")
    return "\n".join(rows)


def _vals(u) -> np.ndarray:
    return np.asarray(u.values if isinstance(u, Field) else u, dtype=float)


def _abs_action(op: DiscreteOperator, v: np.ndarray) -> np.ndarray:
    """sum_j |A_ij| |v_j|: the rounding scale of (A v)_i."""
    return np.abs(op.A) @ np.abs(v)


def _mask(N: int, band) -> np.ndarray:
    if isinstance(band, np.ndarray) and band.dtype == bool:
        return band
    sl = _band_slice(N, band)
    mask = np.zeros(N, dtype=bool)
    mask[sl] = True
    return mask


def make_bump(grid: RadialGrid, start: int, stop: int, smoothing: int = 2) -> Field:
    """Indicator of nodes [start, stop) smoothed ``smoothing`` times; support grows by one node per pass."""
    N = grid.N
    if not 0 <= start < stop <= N:
        raise ValueError(f"invalid bump range [{start}, {stop})")
    xi = np.zeros(N)
    xi[start:stop] = 1.0
    for _ in range(smoothing):
        padded = np.concatenate(([0.0], xi, [0.0]))
        xi = 0.25 * padded[:-2] + 0.5 * padded[1:-1] + 0.25 * padded[2:]
    return Field(grid, xi, "bump")


def random_bumps(grid: RadialGrid, count: int, rng: np.random.Generator, stop: int,
                 start: int = 0, smoothing: int = 2, max_width: int | None = None) -> list[Field]:
    """Random bumps whose support lies in nodes [start, stop)."""
    span = stop - start - 2 * smoothing
    if span < 1:
        raise ValueError("index range too short for the requested smoothing")
    max_width = span if max_width is None else min(max_width, span)
    out = []
    for _ in range(count):
        width = int(rng.integers(1, max_width + 1))
        lo = int(rng.integers(start + smoothing, stop - smoothing - width + 1))
        out.append(make_bump(grid, lo, lo + width, smoothing))
    return out


def random_bands(N: int, count: int, rng: np.random.Generator, stop: int | None = None,
                 min_width: int = 2) -> list[tuple[int, int]]:
    stop = N if stop is None else stop
    out = []
    for _ in range(count):
        a, b = sorted(rng.choice(stop + 1, size=2, replace=False))
        if b - a < min_width:
            b = min(stop, a + min_width)
            a = b - min_width
        out.append((int(a), int(b)))
    return out


def check_superharmonic(op: DiscreteOperator, h, bands, tol: float = 1e-9) -> CheckResult:
    """h >= harmonic lift of h on every band, given (-L) h >= 0."""
    hv = _vals(h)
    scale = max(float(np.max(np.abs(hv))), np.finfo(float).tiny)
    Ah = op.apply(hv)
    floor = Ah + tol * _abs_action(op, hv)
    if np.any(floor < 0):
        node = int(np.argmin(floor))
        return CheckResult.inapplicable("superharmonic", tol, f"(-L)h < 0 at node {node}")
    margin, where = np.inf, None
    for band in bands:
        mask = _mask(op.N, band)
        lift = harmonic_lift(op, band, hv).values
        rel = (hv - lift)[mask] / scale
        i = int(np.argmin(rel))
        if rel[i] < margin:
            margin, where = float(rel[i]), int(np.flatnonzero(mask)[i])
    return CheckResult.judge("superharmonic", margin, where, tol, f"{len(bands)} bands")


def check_green_identity(op: DiscreteOperator, nl: nlm.Nonlinearity, u, bands, rtol: float = 1e-5,
                         inequality: bool = False) -> CheckResult:
    """u = -G_A f(u) + P_A u on every band (u >= ... with ``inequality``)."""
    uv = _vals(u)
    fu = nl.f(np.maximum(uv, 0.0))
    margin, where = np.inf, None
    for band in bands:
        mask = _mask(op.N, band)
        v = band_solve(op, band, -fu, uv).values
        scale = max(float(np.max(np.abs(uv[mask]))), np.finfo(float).tiny)
        diff = (uv - v)[mask] / scale
        rel = diff if inequality else -np.abs(diff)
        i = int(np.argmin(rel))
        if rel[i] < margin:
            margin, where = float(rel[i]), int(np.flatnonzero(mask)[i])
    name = "green_inequality" if inequality else "green_identity"
    return CheckResult.judge(name, margin, where, rtol, f"{len(bands)} bands")


def check_comparison(op: DiscreteOperator, nl: nlm.Nonlinearity, u1, u2, band, tol: float = 1e-8) -> CheckResult:
    """u1 >= u2 on the band given super/subsolution residual signs there and u1 >= u2 off it."""
    a, b = _vals(u1), _vals(u2)
    mask = _mask(op.N, band)
    for label, v, sign in (("u1 supersolution", a, 1.0), ("u2 subsolution", b, -1.0)):
        res = sign * (op.apply(v) + nl.f(np.maximum(v, 0.0)))
        scale = _abs_action(op, v) + nl.f(np.maximum(v, 0.0)) + np.finfo(float).tiny
        bad = mask & (res < -tol * scale)
        if bad.any():
            return CheckResult.inapplicable("comparison", tol, f"{label} fails at node {int(np.flatnonzero(bad)[0])}")
    size = np.maximum(np.abs(a), np.abs(b)) + np.finfo(float).tiny
    off = ~mask & (a < b - tol * size)
    if off.any():
        return CheckResult.inapplicable("comparison", tol, f"u1 < u2 off the band at node {int(np.flatnonzero(off)[0])}")
    rel = (a - b)[mask] / size[mask]
    i = int(np.argmin(rel))
    return CheckResult.judge("comparison", rel[i], int(np.flatnonzero(mask)[i]), tol)


def _test_matrix(op: DiscreteOperator, xis, forbidden: np.ndarray):
    X = np.array([_vals(x) for x in xis], dtype=float)
    if X.ndim != 2 or X.shape[1] != op.N:
        raise ValueError("test functions must be node fields")
    if np.any(X < 0):
        raise ValueError("test functions must be nonnegative")
    touching = np.flatnonzero((X[:, forbidden] != 0).any(axis=1))
    return X, touching


def _outer_band(op: DiscreteOperator, layer_factor: float) -> np.ndarray:
    mask = op.grid.delta < layer_factor * op.grid.gap
    mask[-1] = True
    return mask


def check_kato(op: DiscreteOperator, u, F_src, xis, tol: float = 1e-10,
               layer_factor: float = 3.0) -> CheckResult:
    """sum w |u| (A^* xi) <= sum w xi sgn(u) F for each test function xi."""
    uv, F = _vals(u), _vals(F_src)
    Au = op.apply(uv)
    if np.any(np.abs(Au - F) > 1e-9 * (_abs_action(op, uv) + np.abs(F)) + np.finfo(float).tiny):
        return CheckResult.inapplicable("kato", tol, "(-L)u = F is not satisfied")
    X, touching = _test_matrix(op, xis, _outer_band(op, layer_factor))
    if touching.size:
        return CheckResult.inapplicable("kato", tol, f"test function {int(touching[0])} touches the outer band")
    w = op.grid.weights
    adj = np.array([op.transpose_apply(x) for x in X])
    lhs = adj @ (w * np.abs(uv))
    rhs = X @ (w * np.sign(uv) * F)
    scale = np.abs(adj) @ (w * np.abs(uv)) + X @ (w * np.abs(F)) + np.finfo(float).tiny
    rel = (rhs - lhs) / scale
    i = int(np.argmin(rel))
    return CheckResult.judge("kato", rel[i], i, tol, f"{len(X)} test functions; {PAIRING_NOTE}")


def check_max_subsolution(op: DiscreteOperator, nl: nlm.Nonlinearity, u, v, xis, tol: float = 1e-8,
                          use_min: bool = False, layer_factor: float = 3.0,
                          residual_tol: float = 1e-8) -> CheckResult:
    """w = max(u, v) satisfies sum w (A^* xi) W <= -sum f(w) xi W; min reverses the inequality."""
    name = "min_supersolution" if use_min else "max_subsolution"
    uv, vv = _vals(u), _vals(v)
    outer = _outer_band(op, layer_factor)
    for label, z in (("u", uv), ("v", vv)):
        res = op.apply(z) + nl.f(np.maximum(z, 0.0))
        scale = _abs_action(op, z) + nl.f(np.maximum(z, 0.0)) + np.finfo(float).tiny
        bad = ~outer & (np.abs(res) > residual_tol * scale)
        if bad.any():
            return CheckResult.inapplicable(name, tol, f"{label} is not a solution at node {int(np.flatnonzero(bad)[0])}")
    X, touching = _test_matrix(op, xis, outer)
    if touching.size:
        return CheckResult.inapplicable(name, tol, f"test function {int(touching[0])} touches the outer band")
    wv = np.minimum(uv, vv) if use_min else np.maximum(uv, vv)
    wt = op.grid.weights
    fw = nl.f(np.maximum(wv, 0.0))
    adj = np.array([op.transpose_apply(x) for x in X])
    lhs = adj @ (wt * wv)
    rhs = -(X @ (wt * fw))
    scale = np.abs(adj) @ (wt * np.abs(wv)) + X @ (wt * fw) + np.finfo(float).tiny
    rel = (lhs - rhs) / scale if use_min else (rhs - lhs) / scale
    i = int(np.argmin(rel))
    return CheckResult.judge(name, rel[i], i, tol, f"{len(X)} test functions; {PAIRING_NOTE}")
