"""Keller-Osserman type conditions coupling phi and f.

Every check evaluates an integrand on a log-spaced grid, integrates it
piecewise as a power law and decides convergence from the fitted local
exponent at the end of the grid. A fitted exponent within ``margin`` of the
critical value yields :attr:`Verdict.INDETERMINATE` instead of a guess.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields
from typing import NamedTuple

import numpy as np

from . import bernstein as bs
from . import nonlinearity as nlm
from ._quad import local_slopes, powerlaw_integral


class Verdict(str, enum.Enum):
    HOLDS = "holds"
    FAILS = "fails"
    INDETERMINATE = "indeterminate"

    def __bool__(self) -> bool:
        return self is Verdict.HOLDS

    @classmethod
    def from_exponent(cls, value: float, critical: float, margin: float, holds_above: bool) -> "Verdict":
        """Classify ``value`` against ``critical`` with a dead zone of width ``margin``."""
        gap = value - critical if holds_above else critical - value
        if gap >= margin:
            return cls.HOLDS
        if gap <= -margin:
            return cls.FAILS
        return cls.INDETERMINATE


@dataclass(frozen=True)
class CheckSettings:
    margin: float = 0.05
    points_per_decade: int = 16
    ko_t_max: float = 1e8
    refined_R: float = 1.0
    refined_r_max: float = 1e6
    eps_min: float = 1e-8
    eps_max: float = 1e-1
    growth_s_max: float = 1e10
    int_ratio: float = 1.05
    int_t_min: float = 1e-12

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"check setting {f.name} must be positive")


DEFAULT = CheckSettings()


class KOResult(NamedTuple):
    verdict: Verdict
    exponent: float
    partial_integral: float


class RefinedResult(NamedTuple):
    verdict: Verdict
    C1: float
    diagnostic: str


class RatioResult(NamedTuple):
    verdict: Verdict
    sup_ratio: float
    head_exponent: float


class GrowthResult(NamedTuple):
    verdict: Verdict
    exponent: float


class IntegralResult(NamedTuple):
    verdict: Verdict
    value: float
    head_exponent: float


def _log_grid(lo: float, hi: float, per_decade: int) -> np.ndarray:
    n = max(8, int(np.ceil(per_decade * np.log10(hi / lo))) + 1)
    return np.geomspace(lo, hi, n)


def ko_integrand(spec: bs.BernsteinSpec, nl: nlm.Nonlinearity, t) -> np.ndarray:
    """g(t) = phi^{-1}(varphi(t)^{-2})^{-1/2}."""
    x = np.asarray(nlm.varphi(nl, t)) ** -2.0
    try:
        inv = bs.phi_inverse(spec, x)
    except ValueError as exc:
        raise ValueError(f"phi^-1 bracketing failed: {exc}") from None
    return inv ** -0.5


def _top_slope(t, g, decades: float = 1.0) -> float:
    sl = local_slopes(t, g)
    top = t[1:] >= t[-1] / 10.0**decades
    return float(sl[top].max())


def check_ko_integral(spec, nl, settings: CheckSettings = DEFAULT) -> KOResult:
    """Decay of the integrand g on [1, t_max]: holds if the top slope is <= -1 - margin."""
    t = _log_grid(1.0, settings.ko_t_max, settings.points_per_decade)
    g = ko_integrand(spec, nl, t)
    sigma = _top_slope(t, g)
    verdict = Verdict.from_exponent(sigma, -1.0, settings.margin, holds_above=False)
    return KOResult(verdict, sigma, float(powerlaw_integral(t, g).sum()))


def _tail_ratio(t, g):
    """rho(r) = int_r^inf g / (r g(r)) using a power-law tail past the grid."""
    sigma = float(local_slopes(t[-2:], g[-2:])[0])
    if sigma >= -1.0:
        return None, sigma
    tail = g[-1] * t[-1] / (-sigma - 1.0)
    cells = powerlaw_integral(t, g)
    upper = tail + np.concatenate([np.cumsum(cells[::-1])[::-1], [0.0]])
    return upper / (t * g), sigma


def check_ko_refined(spec, nl, R: float | None = None, r_max: float | None = None,
                     settings: CheckSettings = DEFAULT) -> RefinedResult:
    """sup over r in [R, r_max] of int_r^inf g / (r g(r)); holds if the running sup settles."""
    R = settings.refined_R if R is None else R
    r_max = settings.refined_r_max if r_max is None else r_max
    if r_max / R < 1e3:
        raise ValueError("need r_max / R >= 1e3")
    # extend a decade past r_max to read off the tail exponent
    t = _log_grid(R, 10 * r_max, settings.points_per_decade)
    g = ko_integrand(spec, nl, t)
    rho, sigma = _tail_ratio(t, g)
    if rho is None:
        return RefinedResult(Verdict.FAILS, float("inf"), f"tail exponent {sigma:.4g} >= -1: integral diverges")
    keep = t <= r_max * (1 + 1e-12)
    rho, tk = rho[keep], t[keep]
    running = np.maximum.accumulate(rho)
    top = running[-1]
    decade_ago = running[tk <= tk[-1] / 10.0][-1]
    growth = top / decade_ago - 1.0
    if growth >= 0.01:
        return RefinedResult(Verdict.FAILS, float(top),
                             f"running sup still grows {100 * growth:.2f}% over the top decade")
    return RefinedResult(Verdict.HOLDS, float(top), "running sup stabilized")


def _head_ratio(eps_grid, t, g, margin):
    """sup over eps of int_0^eps g / (eps g(eps)), with a power-law head below the grid."""
    e = float(local_slopes(t[:2], g[:2])[0])
    verdict = Verdict.from_exponent(e, -1.0, margin, holds_above=True)
    if e <= -1.0:
        return RatioResult(verdict, float("inf"), e)
    head = g[0] * t[0] / (e + 1.0)
    cum = head + np.concatenate([[0.0], np.cumsum(powerlaw_integral(t, g))])
    idx = np.searchsorted(t, eps_grid)
    ratio = cum[idx] / (t[idx] * g[idx])
    return RatioResult(verdict, float(ratio.max()), e)


def _eps_setup(settings, eps_grid):
    t = _log_grid(settings.eps_min * 1e-4, settings.eps_max, settings.points_per_decade)
    if eps_grid is None:
        eps_grid = t[t >= settings.eps_min]
    eps_grid = np.asarray(eps_grid, dtype=float)
    if np.any(eps_grid < t[0]) or np.any(eps_grid > t[-1]):
        raise ValueError("epsilon grid outside the evaluation range")
    t = np.union1d(t, eps_grid)
    return t, eps_grid


def check_kato_m_sufficient(spec, nl, eps_grid=None, settings: CheckSettings = DEFAULT) -> RatioResult:
    """int_0^eps phi(t^-2)^(1/m) dt / (eps phi(eps^-2)^(1/m)) bounded in eps."""
    t, eps_grid = _eps_setup(settings, eps_grid)
    g = spec.phi(t**-2.0) ** (1.0 / nl.m)
    return _head_ratio(eps_grid, t, g, settings.margin)


def check_psi_v_integral(spec, nl, eps_grid=None, settings: CheckSettings = DEFAULT) -> RatioResult:
    """int_0^eps psi(V(t)) dt / (eps psi(V(eps))) bounded in eps."""
    t, eps_grid = _eps_setup(settings, eps_grid)
    surr = bs.renewal_surrogate(spec)
    g = nlm.psi(nl, surr.V(t))
    return _head_ratio(eps_grid, t, g, settings.margin)


def growth_function(spec, nl, s) -> np.ndarray:
    """G(s) = V^{-1}(sqrt(s/f(s))) sqrt(s f(s))."""
    s = np.asarray(s, dtype=float)
    fs = nl.f(s)
    surr = bs.renewal_surrogate(spec)
    try:
        vinv = surr.V_inverse(np.sqrt(s / fs))
    except ValueError as exc:
        raise ValueError(f"V^-1 bracketing failed: {exc}") from None
    return vinv * np.sqrt(s * fs)


def check_growth(spec, nl, s_grid=None, settings: CheckSettings = DEFAULT) -> GrowthResult:
    """Holds if G grows like s^e with e >= margin over the top decade."""
    s = _log_grid(1.0, settings.growth_s_max, settings.points_per_decade) if s_grid is None \
        else np.asarray(s_grid, dtype=float)
    G = growth_function(spec, nl, s)
    top = s >= s[-1] / 10.0
    slope = float(np.polyfit(np.log(s[top]), np.log(G[top]), 1)[0])
    return GrowthResult(Verdict.from_exponent(slope, 0.0, settings.margin, holds_above=True), slope)


def check_int_criterion(spec, nl, settings: CheckSettings = DEFAULT) -> IntegralResult:
    """int_0^1 V(t) f(V(t)/t) dt on a geometric grid toward 0 with a fitted power head."""
    n = int(np.ceil(np.log(1.0 / settings.int_t_min) / np.log(settings.int_ratio))) + 1
    t = settings.int_ratio ** -np.arange(n)[::-1]
    surr = bs.renewal_surrogate(spec)
    v = surr.V(t)
    g = v * nl.f(v / t)
    e = float(local_slopes(t[:2], g[:2])[0])
    verdict = Verdict.from_exponent(e, -1.0, settings.margin, holds_above=True)
    if e <= -1.0:
        return IntegralResult(verdict, float("inf"), e)
    value = g[0] * t[0] / (e + 1.0) + float(powerlaw_integral(t, g).sum())
    return IntegralResult(verdict, float(value), e)


@dataclass(frozen=True)
class ComponentResult:
    verdict: Verdict
    constants: dict = field(default_factory=dict)
    diagnostic: str = ""

    def to_dict(self) -> dict:
        return {"verdict": self.verdict.value, "constants": dict(self.constants),
                "diagnostic": self.diagnostic}


@dataclass(frozen=True)
class ConditionReport:
    f1: ComponentResult
    ko_integral: ComponentResult
    ko_refined: ComponentResult
    kato_m: ComponentResult
    psi_v_integral: ComponentResult
    growth: ComponentResult
    int_criterion: ComponentResult
    admissible: bool
    reasons: tuple[str, ...]
    settings: CheckSettings = DEFAULT

    REQUIRED = ("f1", "ko_refined", "growth", "int_criterion")
    COMPONENTS = ("f1", "ko_integral", "ko_refined", "kato_m", "psi_v_integral", "growth", "int_criterion")

    def to_dict(self) -> dict:
        out = {name: getattr(self, name).to_dict() for name in self.COMPONENTS}
        out["admissible"] = self.admissible
        out["reasons"] = list(self.reasons)
        out["settings"] = {f.name: getattr(self.settings, f.name) for f in fields(self.settings)}
        return out

    def to_table(self) -> str:
        rows = [f"{'condition':<16} {'verdict':<14} constants"]
        for name in self.COMPONENTS:
            c = getattr(self, name)
            consts = ", ".join(f"{k}={v:.6g}" for k, v in c.constants.items())
            rows.append(f"{name:<16} {c.verdict.value:<14} {consts}")
        rows.append(f"admissible: {'yes' if self.admissible else 'no'}")
        rows.extend(f"  - {r}" for r in self.reasons)
        return "\n".join(rows)


_LABELS = {
    "f1": "growth bounds on f",
    "ko_integral": "KO integral",
    "ko_refined": "refined KO condition",
    "growth": "boundary growth condition",
    "int_criterion": "integral criterion",
}


def full_report(spec, nl, settings: CheckSettings = DEFAULT) -> ConditionReport:
    """Run every check; admissible iff f1, refined KO, growth and the integral criterion hold."""
    def guarded(fn):
        try:
            return fn()
        except (ValueError, ArithmeticError) as exc:
            return ComponentResult(Verdict.INDETERMINATE, {}, f"error: {exc}")

    def f1():
        lo, hi, ok = nlm.check_f1(nl, np.geomspace(1e-6, 1e6, 241))
        return ComponentResult(Verdict.HOLDS if ok else Verdict.FAILS, {"m_hat": lo, "M_hat": hi})

    def ko():
        r = check_ko_integral(spec, nl, settings)
        return ComponentResult(r.verdict, {"tail_exponent": r.exponent, "partial_integral": r.partial_integral})

    def refined():
        r = check_ko_refined(spec, nl, settings=settings)
        consts = {"C1": r.C1} if np.isfinite(r.C1) else {}
        return ComponentResult(r.verdict, consts, r.diagnostic)

    def ratio(fn):
        def run():
            r = fn(spec, nl, settings=settings)
            consts = {"head_exponent": r.head_exponent}
            if np.isfinite(r.sup_ratio):
                consts["sup_ratio"] = r.sup_ratio
            return ComponentResult(r.verdict, consts)
        return run

    def growth():
        r = check_growth(spec, nl, settings=settings)
        return ComponentResult(r.verdict, {"exponent": r.exponent})

    def integral():
        r = check_int_criterion(spec, nl, settings)
        consts = {"head_exponent": r.head_exponent}
        if np.isfinite(r.value):
            consts["integral"] = r.value
        return ComponentResult(r.verdict, consts)

    parts = {
        "f1": guarded(f1),
        "ko_integral": guarded(ko),
        "ko_refined": guarded(refined),
        "kato_m": guarded(ratio(check_kato_m_sufficient)),
        "psi_v_integral": guarded(ratio(check_psi_v_integral)),
        "growth": guarded(growth),
        "int_criterion": guarded(integral),
    }
    reasons = []
    for name in ("ko_integral",) + tuple(n for n in ConditionReport.REQUIRED if n != "f1") + ("f1",):
        v = parts[name].verdict
        if v is not Verdict.HOLDS:
            reasons.append(f"{_LABELS[name]} {'fails' if v is Verdict.FAILS else 'is indeterminate'}"
                           + (f" ({parts[name].diagnostic})" if parts[name].diagnostic else ""))
    admissible = all(parts[n].verdict is Verdict.HOLDS for n in ConditionReport.REQUIRED)
    return ConditionReport(**parts, admissible=admissible, reasons=tuple(reasons), settings=settings)
