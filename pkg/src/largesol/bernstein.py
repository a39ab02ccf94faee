"""Complete Bernstein functions and the quantities derived from them.

A :class:`BernsteinSpec` bundles the Laplace exponent phi of a subordinator,
its derivative and, when known in closed form, the Levy density nu of the
subordinator. From it we derive the conjugate s/phi(s), scaling exponents at
infinity, the radial jump kernel j of the subordinate Brownian motion and the
renewal-function surrogate Phi(t) = phi(t**-2)**-1/2.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import integrate
from scipy.special import gamma as Gamma

from ._quad import increasing_inverse

ArrayFn = Callable[[np.ndarray], np.ndarray]

FAMILIES = ("stable", "relativistic-stable", "sum-of-stables", "conjugate", "custom")


@dataclass(frozen=True)
class BernsteinSpec:
    family: str
    params: Mapping[str, object]
    phi: ArrayFn = field(repr=False, compare=False)
    dphi: ArrayFn | None = field(default=None, repr=False, compare=False)
    nu: ArrayFn | None = field(default=None, repr=False, compare=False)
    # (coefficient, alpha) pairs when phi = sum c * lam**(alpha/2); lets the
    # kernel code use closed forms
    power_terms: tuple[tuple[float, float], ...] | None = field(default=None, compare=False)

    def __call__(self, lam):
        return self.phi(np.asarray(lam, dtype=float))

    def record(self) -> dict:
        """Config record {family, params} this spec was built from."""
        params = {k: v for k, v in self.params.items() if k != "base_spec"}
        return {"family": self.family, "params": params}


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"stable index alpha must lie in (0, 2), got {alpha}")
    return alpha


def _stable_nu_coef(alpha: float) -> float:
    return (alpha / 2.0) / Gamma(1.0 - alpha / 2.0)


def stable(alpha: float) -> BernsteinSpec:
    """phi(lam) = lam**(alpha/2), the fractional Laplacian (-Delta)**(alpha/2)."""
    a = _check_alpha(alpha)
    b = a / 2.0
    c = _stable_nu_coef(a)
    spec = BernsteinSpec(
        family="stable",
        params={"alpha": a},
        phi=lambda lam: np.power(lam, b),
        dphi=lambda lam: b * np.power(lam, b - 1.0),
        nu=lambda s: c * np.power(s, -1.0 - b),
        power_terms=((1.0, a),),
    )
    return validate(spec)


def relativistic_stable(alpha: float, mass: float = 1.0) -> BernsteinSpec:
    """phi(lam) = (lam + mass**(2/alpha))**(alpha/2) - mass."""
    a = _check_alpha(alpha)
    if mass <= 0:
        raise ValueError(f"mass must be positive, got {mass}")
    b = a / 2.0
    shift = mass ** (2.0 / a)
    c = _stable_nu_coef(a)
    spec = BernsteinSpec(
        family="relativistic-stable",
        params={"alpha": a, "mass": float(mass)},
        phi=lambda lam: np.power(lam + shift, b) - mass,
        dphi=lambda lam: b * np.power(lam + shift, b - 1.0),
        nu=lambda s: c * np.power(s, -1.0 - b) * np.exp(-shift * s),
    )
    return validate(spec)


def sum_of_stables(alphas, weights=None) -> BernsteinSpec:
    """phi(lam) = sum_k w_k lam**(alpha_k/2) with positive weights."""
    alphas = tuple(_check_alpha(a) for a in alphas)
    if not alphas:
        raise ValueError("need at least one stable component")
    weights = tuple(float(w) for w in (weights or [1.0] * len(alphas)))
    if len(weights) != len(alphas) or min(weights) <= 0:
        raise ValueError("weights must be positive and match alphas")
    terms = tuple(zip(weights, alphas))

    def phi(lam):
        return sum(w * np.power(lam, a / 2.0) for w, a in terms)

    def dphi(lam):
        return sum(w * (a / 2.0) * np.power(lam, a / 2.0 - 1.0) for w, a in terms)

    def nu(s):
        return sum(w * _stable_nu_coef(a) * np.power(s, -1.0 - a / 2.0) for w, a in terms)

    spec = BernsteinSpec(
        family="sum-of-stables",
        params={"alphas": list(alphas), "weights": list(weights)},
        phi=phi, dphi=dphi, nu=nu, power_terms=terms,
    )
    return validate(spec)


def custom(phi: ArrayFn, dphi: ArrayFn | None = None, nu: ArrayFn | None = None,
           name: str = "custom") -> BernsteinSpec:
    """Wrap user-supplied evaluators. Without ``nu`` the kernel j is unavailable."""
    spec = BernsteinSpec(family="custom", params={"name": name}, phi=phi, dphi=dphi, nu=nu)
    return validate(spec)


def from_config(record: Mapping) -> BernsteinSpec:
    """Build a spec from ``{"family": ..., "params": {...}}``."""
    try:
        family = record["family"]
    except (KeyError, TypeError):
        raise ValueError("phi record needs a 'family' field") from None
    params = dict(record.get("params", {}))
    if family == "stable":
        return stable(params["alpha"])
    if family == "relativistic-stable":
        return relativistic_stable(params["alpha"], params.get("mass", 1.0))
    if family == "sum-of-stables":
        return sum_of_stables(params["alphas"], params.get("weights"))
    if family == "conjugate":
        return conjugate(from_config(params["base"]))
    raise ValueError(f"unknown or non-serializable phi family {family!r}")


def _sample_grid() -> np.ndarray:
    return np.logspace(-6, 8, 141)


def validate(spec: BernsteinSpec, rtol: float = 1e-10) -> BernsteinSpec:
    """Check phi(0)=0, monotonicity, concavity and (if present) nu decreasing."""
    phi0 = float(np.asarray(spec.phi(np.array([0.0]))).ravel()[0])
    if abs(phi0) > 1e-12:
        raise ValueError(f"phi(0) = {phi0} != 0")
    lam = _sample_grid()
    vals = spec.phi(lam)
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
        raise ValueError("phi must be finite and positive on (0, inf)")
    if np.any(np.diff(vals) <= 0):
        raise ValueError("phi is not strictly increasing on the sample grid")
    # concavity on a uniform grid, where second differences are meaningful
    for lo in (1e-3, 1.0, 1e3):
        u = np.linspace(lo, 10 * lo, 41)
        v = spec.phi(u)
        d2 = v[:-2] - 2 * v[1:-1] + v[2:]
        if np.any(d2 > rtol * np.abs(v[1:-1]).max()):
            raise ValueError("phi is not concave on the sample grid")
    if spec.nu is not None:
        nv = spec.nu(lam)
        if np.any(np.diff(nv) > rtol * np.abs(nv[:-1])):
            raise ValueError("Levy density nu is not nonincreasing")
    return spec


def eval_phi(spec: BernsteinSpec, lam):
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr <= 0):
        raise ValueError("phi is evaluated at positive arguments only")
    out = spec.phi(lam_arr)
    return float(out) if np.ndim(out) == 0 else out


def eval_dphi(spec: BernsteinSpec, lam):
    """phi'(lam); central differences with Richardson extrapolation if no closed form."""
    lam = np.asarray(lam, dtype=float)
    if spec.dphi is not None:
        return spec.dphi(lam)
    return _fd_derivative(spec.phi, lam)


def _fd_derivative(fn: ArrayFn, x: np.ndarray, rtol: float = 1e-7) -> np.ndarray:
    h = 1e-3 * x
    prev = None
    for _ in range(8):
        d1 = (fn(x + h) - fn(x - h)) / (2 * h)
        d2 = (fn(x + h / 2) - fn(x - h / 2)) / h
        est = (4 * d2 - d1) / 3
        if prev is not None and np.all(np.abs(est - prev) <= rtol * np.abs(est)):
            return est
        prev = est
        h = h / 4
    raise ArithmeticError("finite-difference derivative did not converge")


def phi_inverse(spec: BernsteinSpec, y):
    """phi^{-1} by bracketing bisection (phi is strictly increasing)."""
    return increasing_inverse(spec.phi, y)


def conjugate(spec: BernsteinSpec) -> BernsteinSpec:
    """phi*(s) = s / phi(s)."""
    s = _sample_grid()
    if np.any(spec.phi(s) <= 0):
        raise ValueError("phi vanishes at a positive point; conjugate undefined")
    if spec.family == "stable":
        return stable(2.0 - spec.params["alpha"])
    base = spec
    if spec.family == "conjugate":
        return spec.params["base_spec"]

    def phis(lam):
        lam = np.asarray(lam, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = lam / base.phi(lam)
        # phi*(0) = 1/phi'(0+) = 0 for phi with infinite slope at the origin
        return np.where(lam == 0, 0.0, out)

    def dphis(lam):
        p = base.phi(lam)
        return (p - lam * eval_dphi(base, lam)) / p**2

    out = BernsteinSpec(
        family="conjugate",
        params={"base": base.record(), "base_spec": base},
        phi=phis, dphi=dphis,
    )
    return validate(out)


@dataclass(frozen=True)
class ScalingReport:
    delta1: float
    delta2: float
    a1: float
    a2: float
    t_min: float
    t_max: float
    verdict: bool

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_scaling(spec: BernsteinSpec, t_min: float = 1.0, t_max: float = 1e6,
                     lattice_size: int | None = None,
                     points_per_decade: int = 64) -> ScalingReport:
    """Extreme log-ratio slopes log(phi(lam t)/phi(t))/log(lam) over a lattice.

    The lattice is a log-spaced set of t in [t_min, t_max]; every ordered pair
    (t, lam t) in it contributes one slope.
    """
    if not (1.0 <= t_min < t_max) or not np.isfinite(t_max):
        raise ValueError(f"degenerate scaling window [{t_min}, {t_max}]")
    if lattice_size is None:
        lattice_size = max(8, int(round(points_per_decade * math.log10(t_max / t_min))) + 1)
    if lattice_size < 8:
        raise ValueError("lattice size must be at least 8")
    t = np.geomspace(t_min, t_max, lattice_size)
    ph = spec.phi(t)
    if not np.all(np.isfinite(ph)) or np.any(ph <= 0):
        raise ValueError("non-finite phi values in the scaling window")
    lt, lp = np.log(t), np.log(ph)
    i, j = np.triu_indices(lattice_size, k=1)
    loglam = lt[j] - lt[i]
    slopes = (lp[j] - lp[i]) / loglam
    d1, d2 = float(slopes.min()), float(slopes.max())
    ratio_log = lp[j] - lp[i]
    a1 = float(np.exp(np.min(ratio_log - d1 * loglam)))
    a2 = float(np.exp(np.max(ratio_log - d2 * loglam)))
    ok = bool(0.0 < d1 <= d2 < 1.0
              and np.all(ratio_log >= np.log(a1) + d1 * loglam - 1e-12)
              and np.all(ratio_log <= np.log(a2) + d2 * loglam + 1e-12))
    return ScalingReport(d1, d2, a1, a2, float(t_min), float(t_max), ok)


def check_phi_prime_ratio(spec: BernsteinSpec, T: float = 1e6, n: int = 400) -> tuple[float, float]:
    """min and max of t phi'(t)/phi(t) over a log grid of [1, T]."""
    if not T > 1:
        raise ValueError("need T > 1")
    t = np.geomspace(1.0, T, n)
    r = t * eval_dphi(spec, t) / spec.phi(t)
    return float(r.min()), float(r.max())


def stable_j_constant(d: int, alpha: float) -> float:
    """A(d, alpha) with j(r) = A r**-(d+alpha) for phi(lam) = lam**(alpha/2)."""
    return (alpha * 2.0 ** (alpha - 1.0) * Gamma((d + alpha) / 2.0)
            / (math.pi ** (d / 2.0) * Gamma(1.0 - alpha / 2.0)))


def levy_density_j(spec: BernsteinSpec, d: int, r, rtol: float = 1e-8):
    """j(r) = int_0^inf (4 pi s)^(-d/2) exp(-r^2/(4s)) nu(s) ds by adaptive quadrature.

    The integral is split at the Gaussian peak scale s = r^2/4; the head is
    mapped by s = r^2/(4w), w in [1, inf).
    """
    if spec.nu is None:
        raise ValueError(f"family {spec.family!r} has no closed-form Levy density; j unavailable")
    if d < 2:
        raise ValueError("dimension must be at least 2")
    r_arr = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(r_arr <= 0):
        raise ValueError("j is evaluated at positive radii only")
    nu = spec.nu
    out = np.empty_like(r_arr)
    for k, rr in enumerate(r_arr):
        s0 = rr * rr / 4.0

        def head(w, rr=rr):
            s = rr * rr / (4.0 * w)
            return (4 * math.pi * s) ** (-d / 2.0) * math.exp(-w) * float(nu(s)) * rr * rr / (4.0 * w * w)

        def tail(y, rr=rr, s0=s0):
            # s = s0 e^y; the integrand decays at least like e^{-(d/2) y}
            s = s0 * math.exp(y)
            return (4 * math.pi * s) ** (-d / 2.0) * math.exp(-rr * rr / (4.0 * s)) * float(nu(s)) * s

        total = 0.0
        err = 0.0
        for fn, a, b in ((head, 1.0, np.inf), (tail, 0.0, 5.0), (tail, 5.0, 20.0), (tail, 20.0, 120.0)):
            val, e = integrate.quad(fn, a, b, epsabs=0.0, epsrel=rtol * 0.1, limit=400)
            total += val
            err += e
        if not np.isfinite(total) or total <= 0 or err > rtol * total:
            raise ArithmeticError(f"quadrature for j({rr:g}) did not converge (err {err:.2e})")
        out[k] = total
    return float(out[0]) if np.ndim(r) == 0 else out


def check_j_asymptotics(spec: BernsteinSpec, d: int, r_grid, spread_limit: float = 1e3) -> tuple[float, float]:
    """min/max of j(r) r^d / phi(r^-2) over radii in (0, 1]."""
    if not estimate_scaling(spec).verdict:
        raise ValueError("scaling condition fails; j ~ phi(r^-2)/r^d is not expected")
    r = np.asarray(r_grid, dtype=float)
    if np.any(r <= 0) or np.any(r > 1):
        raise ValueError("radii must lie in (0, 1]")
    ratio = levy_density_j(spec, d, r) * r**d / spec.phi(r**-2.0)
    lo, hi = float(ratio.min()), float(ratio.max())
    if not (np.isfinite(lo) and np.isfinite(hi) and lo > 0) or hi / lo > spread_limit:
        raise ArithmeticError(f"j r^d / phi(r^-2) ranges over [{lo:g}, {hi:g}]; spec violates scaling")
    return lo, hi


@dataclass(frozen=True)
class RenewalSurrogate:
    """Phi(t) = phi(t^-2)^(-1/2) standing in for the renewal function V.

    ``exact_v`` is set when Phi equals V (the stable family, V(t) = t^(alpha/2)).
    """
    spec: BernsteinSpec = field(repr=False)
    exact_v: bool

    def Phi(self, t):
        t = np.asarray(t, dtype=float)
        if self.exact_v:
            # t^(alpha/2) directly; t^-2 would overflow for t < 1e-154
            return np.where(t > 0, np.abs(t) ** (self.spec.params["alpha"] / 2.0), 0.0)
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(t > 0, self.spec.phi(t**-2.0) ** -0.5, 0.0)

    V = Phi

    def V_inverse(self, v):
        if self.exact_v:
            v = np.asarray(v, dtype=float)
            if np.any(v < 0):
                raise ValueError("V^-1 needs nonnegative arguments")
            return v ** (2.0 / self.spec.params["alpha"])
        return increasing_inverse(self.Phi, v)

    def vstar(self, s):
        """t / Phi(t), comparable to the conjugate renewal function V*."""
        s = np.asarray(s, dtype=float)
        return s / self.Phi(s)

    def dPhi(self, t):
        # d/dt phi(t^-2)^(-1/2) = phi'(t^-2) t^-3 phi(t^-2)^(-3/2)
        t = np.asarray(t, dtype=float)
        lam = t**-2.0
        return eval_dphi(self.spec, lam) * t**-3.0 * self.spec.phi(lam) ** -1.5


def renewal_surrogate(spec: BernsteinSpec) -> RenewalSurrogate:
    if not estimate_scaling(spec).verdict:
        raise ValueError("scaling condition fails; renewal surrogate not justified")
    return RenewalSurrogate(spec=spec, exact_v=spec.family == "stable")


def surrogate_regularity(surr: RenewalSurrogate, n: int = 200) -> tuple[float, float]:
    """Max over (0, 1] of t Phi'(t)/Phi(t) and |Phi''(t)| t / Phi'(t) (finite differences)."""
    t = np.geomspace(1e-8, 1.0, n)
    h = 1e-4 * t
    p = surr.Phi(t)
    d1 = (surr.Phi(t + h) - surr.Phi(t - h)) / (2 * h)
    d2 = (surr.Phi(t + h) - 2 * p + surr.Phi(t - h)) / h**2
    return float(np.max(t * d1 / p)), float(np.max(np.abs(d2) * t / d1))
