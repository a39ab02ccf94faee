"""Supersolution, moderate solutions and the monotone large-solution limit.

Discretely the boundary is a thin layer B of nodes with delta < delta_stop
(by default the last node only). The moderate problem with parameter k is

    (-L u)_i + f(u_i) = 0   for i in I = complement of B,
    u_B = g_k = min(k m_B, ubar_B),

where m is the discrete Martin profile: harmonic on I with m_B = 1/V*(delta_B).
The cap by the supersolution is the largest boundary datum compatible with
u_k <= ubar; once k m_B exceeds it the scheme has converged. Each moderate
problem is solved by the shifted monotone iteration

    (A_II + Lambda) u^{n+1} = Lambda u^n - f(u^n) - A_IB g,
    Lambda_i = (1 + M) f(u^n_i) / u^n_i,

started from the harmonic lift of g. For f(t) = t^p it is Newton's method.
Iterates decrease monotonically and stay nonnegative supersolutions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import bernstein as bs
from . import nonlinearity as nlm
from .nonlocal_operator import (
    BallDomain,
    DiscreteOperator,
    Field,
    RadialGrid,
    assemble,
    build_grid,
    green_apply,
    harmonic_lift,
    martin_surrogate,
)


class SolverError(RuntimeError):
    """Non-convergence or a violated monotonicity/domination invariant."""


class CertificationError(SolverError):
    pass


def layer_mask(grid: RadialGrid, delta_stop_factor: float = 3.0) -> np.ndarray:
    """Boolean mask of the boundary layer {delta < delta_stop_factor * gap}."""
    mask = grid.delta < delta_stop_factor * grid.gap
    mask[-1] = True
    return mask


def build_U(domain: BallDomain, spec: bs.BernsteinSpec, nl: nlm.Nonlinearity, grid: RadialGrid) -> Field:
    """U = psi(V(delta)) at the nodes."""
    surr = bs.renewal_surrogate(spec)
    try:
        vals = nlm.psi(nl, surr.V(domain.delta(grid.r)))
    except ValueError as exc:
        raise ValueError(f"psi evaluation failed: {exc}") from None
    return Field(grid, vals, "U")


def l1_norm(field: Field) -> float:
    return float(np.abs(field.values) @ field.grid.weights)


def l1_crosscheck(U: Field, ko_holds: bool, share_limit: float = 0.01) -> dict:
    """Compare integrability of U with the KO verdict.

    The graded-quadrature norm is always finite; integrability shows up as a
    vanishing share of the norm carried by the outermost cell.
    """
    w = U.grid.weights
    norm = l1_norm(U)
    share = float(abs(U.values[-1]) * w[-1] / norm) if norm > 0 else 0.0
    integrable = share < share_limit
    return {"norm": norm, "boundary_share": share, "integrable": integrable,
            "ko_holds": bool(ko_holds), "consistent": integrable == bool(ko_holds)}


@dataclass(frozen=True)
class BandReport:
    verdict: bool
    C2: float
    ratios: tuple[float, ...]
    resolutions: tuple[int, ...]
    eta: float
    band_nodes: int

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "C2": self.C2, "ratios": list(self.ratios),
                "resolutions": list(self.resolutions), "eta": self.eta, "band_nodes": self.band_nodes}


def band_ratio(op: DiscreteOperator, U: Field, nl: nlm.Nonlinearity, eta: float,
               delta_stop_factor: float = 3.0) -> tuple[float, int]:
    """sup of LU_i / f(U_i) over resolved nodes with delta < eta, and the node count."""
    grid = op.grid
    band = (grid.delta < eta) & ~layer_mask(grid, delta_stop_factor)
    fU = nl.f(U.values[band])
    if np.any(fU == 0):
        raise ValueError("f(U) vanishes in the band")
    LU = op.generator(U)[band]
    return float(np.max(LU / fU)), int(band.sum())


def verify_supersolution_band(op: DiscreteOperator, U: Field, nl: nlm.Nonlinearity, eta: float = 0.1,
                              companion: tuple[DiscreteOperator, Field] | None = None,
                              delta_stop_factor: float = 3.0, min_nodes: int = 16,
                              stable_within: float = 0.2) -> BandReport:
    """LU <= C2 f(U) near the boundary, with C2 stable under mesh refinement.

    ``companion`` is the same problem at another resolution; by default it is
    assembled at N/2 from the operator's spec record.
    """
    ratio, count = band_ratio(op, U, nl, eta, delta_stop_factor)
    if count < min_nodes:
        raise ValueError(f"only {count} resolved nodes in the band delta < {eta}")
    if companion is None:
        spec = bs.from_config(op.spec_record)
        g2 = build_grid(op.domain, op.N // 2, op.grid.gamma)
        companion = (assemble(spec, op.domain, g2), build_U(op.domain, spec, nl, g2))
    op2, U2 = companion
    ratio2, _ = band_ratio(op2, U2, nl, eta, delta_stop_factor)
    pair = sorted([(op.N, ratio), (op2.N, ratio2)])
    ok = bool(np.isfinite(ratio) and np.isfinite(ratio2)
              and abs(ratio - ratio2) <= stable_within * max(abs(ratio), abs(ratio2)))
    return BandReport(ok, max(ratio, ratio2), tuple(r for _, r in pair), tuple(n for n, _ in pair),
                      float(eta), count)


@dataclass(frozen=True, eq=False)
class SupersolutionBundle:
    U: Field
    G: Field
    a: float
    b: float
    c: float
    c_resolved: float
    eta: float
    ubar: Field
    certification_margin: float

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c, "c_resolved": self.c_resolved, "eta": self.eta,
                "certification_margin": self.certification_margin}


def residual(op: DiscreteOperator, nl: nlm.Nonlinearity, u) -> np.ndarray:
    """(-L u) + f(u) at every node."""
    vals = u.values if isinstance(u, Field) else np.asarray(u, dtype=float)
    return op.apply(vals) + nl.f(np.maximum(vals, 0.0))


def build_supersolution(op: DiscreteOperator, U: Field, nl: nlm.Nonlinearity, eta: float = 0.1,
                        delta_stop_factor: float = 3.0, tol: float = 1e-9,
                        shift: str = "tight") -> SupersolutionBundle:
    """ubar = a U + b G_Omega 1 with a = c^(1/m).

    c is the discrete sup of LU / f(U) over interior nodes with delta < eta
    (at least 1). With ``shift="proof"``, b = a sup_{delta >= eta} |LU|.
    The default ``"tight"`` uses b = sup_{delta >= eta} (a LU - a^(1+m) f(U))_+,
    never larger; since f(a U + b G) >= a^(1+m) f(U) either choice makes the
    supersolution inequality hold at every interior node. It is then checked
    explicitly.
    """
    if shift not in ("tight", "proof"):
        raise ValueError("shift must be 'tight' or 'proof'")
    grid = op.grid
    interior = ~layer_mask(grid, delta_stop_factor)
    LU = op.generator(U)
    near = interior & (grid.delta < eta)
    far = interior & ~near
    fU = nl.f(U.values)
    c_all = float(np.max(LU[near] / fU[near])) if near.any() else 0.0
    resolved = near & (grid.delta >= 10 * delta_stop_factor * grid.gap)
    c_res = float(np.max(LU[resolved] / fU[resolved])) if resolved.any() else c_all
    c = max(1.0, c_all)
    a = max(1.0, c ** (1.0 / nl.m))
    if not far.any():
        b = 0.0
    elif shift == "proof":
        b = a * float(np.max(np.abs(LU[far])))
    else:
        b = max(0.0, float(np.max(a * LU[far] - a ** (1.0 + nl.m) * fU[far])))
    G = green_apply(op, np.ones(grid.N))
    G = Field(grid, G.values, "G")
    ubar = Field(grid, a * U.values + b * G.values, "ubar")
    res = residual(op, nl, ubar)[interior]
    scale = np.maximum(np.abs(op.apply(ubar))[interior], nl.f(ubar.values[interior]))
    rel = res / scale
    worst = int(np.argmin(rel))
    margin = float(rel[worst])
    if margin < -tol:
        node = int(np.flatnonzero(interior)[worst])
        raise CertificationError(f"supersolution inequality fails at node {node} (relative margin {margin:.3e})")
    return SupersolutionBundle(U, G, float(a), float(b), c, c_res, float(eta), ubar, margin)


def martin_field(op: DiscreteOperator, spec: bs.BernsteinSpec, delta_stop_factor: float = 3.0) -> Field:
    """Discrete Martin profile: harmonic off the layer, 1/V*(delta) on it."""
    grid = op.grid
    layer = layer_mask(grid, delta_stop_factor)
    data = np.zeros(grid.N)
    data[layer] = martin_surrogate(op.domain, spec, grid).reciprocal().values[layer]
    start = int(np.flatnonzero(layer)[0])
    return Field(grid, harmonic_lift(op, (0, start), data).values, "martin")


@dataclass
class MonotoneSolve:
    u: Field
    iterations: int
    changes: list[float]
    monotone: bool
    boundary_value: float


def solve_moderate(op: DiscreteOperator, nl: nlm.Nonlinearity, k: float, martin: Field, tol: float = 1e-10,
                   cap: Field | None = None, delta_stop_factor: float = 3.0,
                   max_iter: int = 200) -> MonotoneSolve:
    """Solve -Lu + f(u) = 0 off the layer with u = min(k m, cap) on it."""
    if not k > 0:
        raise ValueError("k must be positive")
    grid = op.grid
    layer = layer_mask(grid, delta_stop_factor)
    inner = ~layer
    g = k * martin.values[layer]
    if cap is not None:
        g = np.minimum(g, cap.values[layer])
    A = op.A
    AII = A[np.ix_(inner, inner)]
    rhs_b = -A[np.ix_(inner, layer)] @ g
    u = np.empty(grid.N)
    u[layer] = g
    u[inner] = linalg.solve(AII, rhs_b)
    if np.any(u < 0):
        raise SolverError("harmonic start is negative; operator is not monotone")
    onePlusM = 1.0 + nl.M
    changes = []
    monotone = True
    for it in range(1, max_iter + 1):
        ui = u[inner]
        fu = nl.f(ui)
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = np.where(ui > 0, onePlusM * fu / ui, 0.0)
        new = linalg.solve(AII + np.diag(lam), lam * ui - fu + rhs_b)
        new = np.maximum(new, 0.0)
        scale = np.maximum(np.abs(ui), np.finfo(float).tiny)
        if np.any(new > ui + 1e-12 * scale):
            monotone = False
            bad = int(np.argmax(new - ui))
            raise SolverError(f"iterate increased at node {bad} in iteration {it}")
        change = float(np.max(np.abs(new - ui) / np.maximum(scale, 1e-300)))
        changes.append(change)
        u[inner] = new
        if change < tol:
            return MonotoneSolve(Field(grid, u.copy(), f"u_k={k:g}"), it, changes, monotone, float(g.max()))
    raise SolverError(f"moderate solve for k={k:g} did not converge in {max_iter} iterations")


@dataclass
class SolveTrace:
    ks: list[float] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    changes: list[list[float]] = field(default_factory=list)
    increasing: list[bool] = field(default_factory=list)
    dominated: list[bool] = field(default_factory=list)
    domination_margin: list[float] = field(default_factory=list)
    schedule_change: list[float] = field(default_factory=list)
    moderate: list[Field] = field(default_factory=list, repr=False)
    u: Field | None = field(default=None, repr=False)
    base: float = 3.0
    converged: bool = False

    @property
    def monotone_ok(self) -> bool:
        return all(self.increasing) and all(self.dominated)

    def to_dict(self, include_fields: bool = True) -> dict:
        out = {
            "base": self.base,
            "k": self.ks,
            "iterations": self.iterations,
            "interior_change_norms": self.changes,
            "increasing": self.increasing,
            "dominated": self.dominated,
            "domination_margin": self.domination_margin,
            "schedule_change": self.schedule_change,
            "converged": self.converged,
            "monotone_flags_ok": self.monotone_ok,
        }
        if include_fields:
            out["moderate_fields"] = [f.values.tolist() for f in self.moderate]
        return out


def solve_large(op: DiscreteOperator, nl: nlm.Nonlinearity, bundle: SupersolutionBundle, martin: Field,
                base: float = 3.0, tol: float = 1e-8, newton_tol: float = 1e-12,
                delta_stop_factor: float = 3.0, max_schedule: int = 60, max_iter: int = 200) -> SolveTrace:
    """Moderate solves along k_n = base^n, n = 1, 2, ..., until the field settles."""
    if not base > 1:
        raise ValueError("schedule base must exceed 1")
    grid = op.grid
    trusted = ~layer_mask(grid, delta_stop_factor)
    ubar = bundle.ubar.values
    trace = SolveTrace(base=float(base))
    prev = None
    for n in range(1, max_schedule + 1):
        k = float(base) ** n
        sol = solve_moderate(op, nl, k, martin, newton_tol, cap=bundle.ubar,
                             delta_stop_factor=delta_stop_factor, max_iter=max_iter)
        u = sol.u.values
        slack = 1e-10 * np.abs(ubar)
        dominated = bool(np.all(u <= ubar + slack))
        margin = float(np.min((ubar - u)[trusted] / ubar[trusted]))
        if prev is None:
            increasing, change = True, float("inf")
        else:
            increasing = bool(np.all(u >= prev - 1e-10 * np.abs(prev)))
            change = float(np.max(np.abs(u - prev)[trusted] / np.abs(u[trusted])))
        trace.ks.append(k)
        trace.iterations.append(sol.iterations)
        trace.changes.append(sol.changes)
        trace.increasing.append(increasing)
        trace.dominated.append(dominated)
        trace.domination_margin.append(margin)
        trace.schedule_change.append(change)
        trace.moderate.append(sol.u)
        if not dominated:
            node = int(np.argmax(u - ubar))
            raise SolverError(f"u_k exceeds the supersolution at node {node} for k={k:g}")
        if not increasing:
            node = int(np.argmin(u - prev))
            raise SolverError(f"schedule not monotone at node {node} for k={k:g}")
        prev = u
        if change < tol:
            trace.converged = True
            break
    if not trace.converged:
        raise SolverError(f"schedule did not settle within {max_schedule} steps")
    trace.u = Field(grid, prev, "u")
    return trace


def fit_blowup_rate(u: Field, window: tuple[float, float] = (0.005, 0.05)) -> tuple[float, float]:
    """beta = -slope of log u against log delta over nodes in the window; RMS residual."""
    lo, hi = window
    if not 0 < lo < hi:
        raise ValueError("degenerate delta window")
    delta = u.grid.delta
    sel = (delta >= lo) & (delta <= hi)
    if sel.sum() < 8:
        raise ValueError(f"window holds {int(sel.sum())} nodes; need at least 8")
    vals = u.values[sel]
    if np.any(vals <= 0):
        raise ValueError("field must be positive on the window")
    x, y = np.log(delta[sel]), np.log(vals)
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    rms = float(np.sqrt(res[0] / sel.sum())) if res.size else 0.0
    return float(-coef[0]), rms
