"""Ball geometry, graded radial grids and the dense discretization of -L.

Radial functions are represented by nodal values u_0..u_{N-1} at radii
r_i = R (1 - (1 - i/N)^gamma). Between nodes u is piecewise linear, on the
last cell [r_{N-1}, R] it is held at u_{N-1}, and outside the ball it is 0.
The matrix A approximates -L:

    (A u)_i = sum_j W_ij (u_i - u_j) + kappa_i u_i,   W_ij >= 0,

so A 1 = kappa exactly and A is an M-matrix. W_ij are moments of K(r_i, .)
against the interpolation basis; on the two cells touching r_i the linear
interpolant is replaced by the quadratic through r_{i-1}, r_i, r_{i+1}, which
supplies the second-order (principal value) compensation. kappa_i is the
exterior mass int_R^inf K(r_i, s) ds.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg
from scipy.interpolate import PchipInterpolator

from . import bernstein as bs
from ._quad import algebraic_gauss, gauss_legendre, log_gauss
from .kernel import make_kernel, sphere_area


class AssemblyError(ValueError):
    """The assembled matrix lost its M-matrix sign structure."""


@dataclass(frozen=True)
class BallDomain:
    d: int = 2
    R: float = 1.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"dimension must be an integer >= 2, got {self.d}")
        if not self.R > 0:
            raise ValueError(f"ball radius must be positive, got {self.R}")

    def delta(self, r):
        """Distance to the boundary, exact for |x| = r <= R."""
        r = np.asarray(r, dtype=float)
        if np.any(r < 0) or np.any(r > self.R):
            raise ValueError("radius outside the ball")
        return self.R - r


@dataclass(frozen=True, eq=False)
class RadialGrid:
    r: np.ndarray
    R: float
    gamma: float
    d: int
    weights: np.ndarray

    @property
    def N(self) -> int:
        return self.r.size

    @property
    def delta(self) -> np.ndarray:
        return self.R - self.r

    @property
    def gap(self) -> float:
        return float(self.R - self.r[-1])

    @property
    def edges(self) -> np.ndarray:
        """Cell endpoints r_0 .. r_{N-1}, R."""
        return np.append(self.r, self.R)


def build_grid(domain: BallDomain, N: int, gamma: float = 1.0) -> RadialGrid:
    """Nodes r_i = R (1 - (1 - i/N)^gamma), i = 0..N-1, and volume weights.

    The weight of node i is the integral over the ball of its basis function,
    so sum_i w_i u_i is the exact volume integral of the interpolant.
    """
    if int(N) != N or N < 4:
        raise ValueError(f"need at least 4 nodes, got {N}")
    if not gamma >= 1:
        raise ValueError(f"grading exponent must be >= 1, got {gamma}")
    N = int(N)
    R = float(domain.R)
    r = R * (1.0 - (1.0 - np.arange(N) / N) ** gamma)
    r[0] = 0.0
    edges = np.append(r, R)
    x, w = gauss_legendre(8)
    h = np.diff(edges)
    s = edges[:-1, None] + h[:, None] * x
    vol = sphere_area(domain.d - 1) * s ** (domain.d - 1) * w * h[:, None]
    weights = np.zeros(N)
    lam = np.broadcast_to(x, s.shape)
    weights[:-1] += (vol[:-1] * (1 - lam[:-1])).sum(axis=1)
    weights[1:] += (vol[:-1] * lam[:-1]).sum(axis=1)
    weights[-1] += vol[-1].sum()
    r.setflags(write=False)
    weights.setflags(write=False)
    return RadialGrid(r=r, R=R, gamma=float(gamma), d=domain.d, weights=weights)


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal values of a radial function; zero outside the ball."""

    grid: RadialGrid
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.N,):
            raise ValueError(f"field needs {self.grid.N} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"field {self.name!r} has non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @cached_property
    def _interp(self):
        return PchipInterpolator(self.grid.r, self.values, extrapolate=False)

    def __call__(self, r):
        """Monotone (PCHIP) interpolation; held constant on the last cell, 0 outside."""
        r = np.asarray(r, dtype=float)
        out = np.where(r <= self.grid.r[-1], self._interp(np.minimum(np.abs(r), self.grid.r[-1])),
                       self.values[-1])
        return np.where(np.abs(r) <= self.grid.R, out, 0.0)

    def reciprocal(self, name: str | None = None) -> "Field":
        return Field(self.grid, 1.0 / self.values, name or f"1/{self.name}")

    def with_values(self, values, name: str | None = None) -> "Field":
        return Field(self.grid, values, self.name if name is None else name)

    def integral(self) -> float:
        return float(self.grid.weights @ self.values)


@dataclass(eq=False)
class DiscreteOperator:
    grid: RadialGrid
    domain: BallDomain
    A: np.ndarray = field(repr=False)
    kappa: np.ndarray = field(repr=False)
    spec_record: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = np.array(self.A, dtype=float)
        self.kappa = np.array(self.kappa, dtype=float)
        self.A.setflags(write=False)
        self.kappa.setflags(write=False)

    @property
    def N(self) -> int:
        return self.grid.N

    def apply(self, u) -> np.ndarray:
        """(-L) u at the nodes."""
        return self.A @ _values(u)

    def generator(self, u) -> np.ndarray:
        """L u at the nodes."""
        return -self.apply(u)

    def transpose_apply(self, xi) -> np.ndarray:
        """D^{-1} A^T D xi with D = diag(weights), the weighted adjoint of -L.

        It satisfies sum_i w_i v_i (A^* xi)_i = sum_i w_i xi_i (A v)_i exactly.
        """
        w = self.grid.weights
        return (self.A.T @ (w * _values(xi))) / w

    @cached_property
    def _lu(self):
        return linalg.lu_factor(self.A, check_finite=True)

    def solve(self, rhs) -> np.ndarray:
        return linalg.lu_solve(self._lu, np.asarray(rhs, dtype=float))

    def sign_defects(self, tol: float = 0.0) -> np.ndarray:
        """Rows whose off-diagonal entries are positive or diagonal nonpositive."""
        off = self.A - np.diag(np.diag(self.A))
        bad = (off > tol * np.abs(np.diag(self.A))[:, None]).any(axis=1) | (np.diag(self.A) <= 0)
        return np.flatnonzero(bad)


def _values(u) -> np.ndarray:
    return np.asarray(u.values if isinstance(u, Field) else u, dtype=float)


def _near_weights(kern, r, edges, alpha, n_sing):
    """Weights from the quadratic stencil on the cells touching each node."""
    N = r.size
    # t = h w^q turns the t^(1-alpha) moment integrands into smooth ones in w
    q = 2.0 / (2.0 - alpha)
    wl = np.zeros(N)  # weight on u_{i-1}
    wr = np.zeros(N)  # weight on u_{i+1}

    # node 0: even quadratic u_0 + b s^2 on [0, r_1]
    wr[0] = kern.origin_moment2(r[1]) / r[1] ** 2

    # interior nodes: quadratic through i-1, i, i+1
    i = np.arange(1, N - 1)
    ri = r[i]
    hl, hr = r[i] - r[i - 1], r[i + 1] - r[i]
    I1, I2 = _moments(kern, ri, hl, hr, q, n_sing)
    D = hl * hr * (hl + hr)
    wr[i] = hl * (hl * I1 + I2) / D
    wl[i] = hr * (I2 - hr * I1) / D

    # last node: linear slope from the left, continued over the gap
    rl = r[-1]
    hl1 = np.array([r[-1] - r[-2]])
    g = np.array([edges[-1] - r[-1]])
    I1_last, _ = _moments(kern, np.array([rl]), hl1, g, q, n_sing)
    # a one-sided stencil; dropped when its sign would break the M-matrix structure
    wl[-1] = max(-float(I1_last[0]) / hl1[0], 0.0)
    return wl, wr


def _moments(kern, ri, hl, hr, q, n_sing):
    """I1 = P.V. int_{-hl}^{hr} t K(r, r+t) dt and I2 = int t^2 K(r, r+t) dt."""
    hm = np.minimum(hl, hr)
    t, w = algebraic_gauss(hm, q, n_sing)
    kp = kern.offset(ri[:, None], t)
    km = kern.offset(ri[:, None], -t)
    I1 = (t * (kp - km) * w).sum(axis=1)
    I2 = (t**2 * (kp + km) * w).sum(axis=1)
    # the longer side beyond hm, where K is smooth in log-distance
    longer_right = hr > hl
    hx = np.maximum(hl, hr)
    rest = hx > hm * (1 + 1e-14)
    if np.any(rest):
        tt, ww = log_gauss(hm[rest], hx[rest], 16)
        sign = np.where(longer_right[rest], 1.0, -1.0)[:, None]
        kk = kern.offset(ri[rest][:, None], sign * tt)
        I1[rest] += (sign * tt * kk * ww).sum(axis=1)
        I2[rest] += (tt**2 * kk * ww).sum(axis=1)
    # algebraic part of I2 on the longer side was already counted up to hm only
    return I1, I2


def _far_block(kern, r, edges, rows, n_far):
    """W contributions of all non-adjacent cells for a block of rows."""
    N = r.size
    ri = r[rows][:, None]
    lo_e, hi_e = edges[:-1][None, :], edges[1:][None, :]
    cells = np.arange(N)[None, :]
    rr = np.asarray(rows)[:, None]
    near = (cells == rr) | (cells == rr - 1)
    right = lo_e >= ri
    t_a = np.where(right, lo_e - ri, ri - hi_e)
    t_b = np.where(right, hi_e - ri, ri - lo_e)
    # placeholders for excluded cells keep the log map well defined
    t_a = np.where(near, 1.0, t_a)
    t_b = np.where(near, 2.0, t_b)
    t, w = log_gauss(t_a, t_b, n_far)
    sgn = np.where(right, 1.0, -1.0)[..., None]
    s = ri[..., None] + sgn * t
    kw = kern.offset(ri[..., None], sgn * t) * w
    kw = np.where(near[..., None], 0.0, kw)
    h = (hi_e - lo_e)[..., None]
    lam = (s - lo_e[..., None]) / h
    W = np.zeros((len(rows), N))
    upper = kw * lam
    lower = kw * (1.0 - lam)
    # linear cells 0..N-2 feed both endpoints; the last cell is constant
    W[:, :-1] += lower[:, :-1].sum(axis=-1)
    W[:, 1:] += upper[:, :-1].sum(axis=-1)
    W[:, -1] += kw[:, -1].sum(axis=-1)
    return W


def _killing(kern, r, R, n_panels=48, n_gauss=8, far_factor=1000.0):
    """kappa_i = int_R^inf K(r_i, s) ds: log-panels up to far_factor R plus a power tail."""
    g = R - r
    T = far_factor * R
    k = np.arange(n_panels + 1)
    b = g[:, None] * (T / g[:, None]) ** (k / n_panels)
    t, w = log_gauss(b[:, :-1], b[:, 1:], n_gauss)
    rr = r[:, None, None]
    body = (kern.offset(rr, t) * w).sum(axis=(1, 2))
    k1 = kern.offset(r, T)
    k2 = kern.offset(r, 2 * T)
    # an underflowed (exponentially tempered) kernel has no tail to add
    live = (k1 > 0) & (k2 > 0)
    tail = np.zeros_like(body)
    if np.any(live):
        e = np.log(k2[live] / k1[live]) / math.log(2.0)
        if np.any(e >= -1.0):
            raise AssemblyError("exterior kernel tail does not decay integrably")
        tail[live] = k1[live] * T / (-e - 1.0)
    return body + tail


def assemble(spec: bs.BernsteinSpec, domain: BallDomain, grid: RadialGrid, *, kernel=None,
             n_far: int = 8, n_sing: int = 24, block: int = 64, threads: int = 1) -> DiscreteOperator:
    """Dense matrix of -L on radial functions vanishing outside the ball."""
    if grid.d != domain.d or grid.R != domain.R:
        raise ValueError("grid does not belong to this domain")
    kern = make_kernel(spec, domain.d) if kernel is None else kernel
    alpha = float(kern.alpha_max)
    r, edges, N = grid.r, grid.edges, grid.N

    blocks = [np.arange(a, min(a + block, N)) for a in range(0, N, block)]
    W = np.zeros((N, N))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda rows: _far_block(kern, r, edges, rows, n_far), blocks))
    else:
        parts = [_far_block(kern, r, edges, rows, n_far) for rows in blocks]
    for rows, part in zip(blocks, parts):
        W[rows] = part

    wl, wr = _near_weights(kern, r, edges, alpha, n_sing)
    idx = np.arange(N)
    W[idx[1:], idx[1:] - 1] += wl[1:]
    W[idx[:-1], idx[:-1] + 1] += wr[:-1]
    np.fill_diagonal(W, 0.0)

    kappa = _killing(kern, r, domain.R)
    bad = np.flatnonzero((W < 0).any(axis=1))
    if bad.size:
        raise AssemblyError(f"negative interaction weights in rows {bad[:10].tolist()}")
    if np.any(kappa <= 0):
        raise AssemblyError("nonpositive killing term")
    A = -W
    A[idx, idx] = W.sum(axis=1) + kappa
    return DiscreteOperator(grid=grid, domain=domain, A=A, kappa=kappa, spec_record=spec.record())


def _band_slice(N: int, band) -> slice:
    start, stop = (band.start, band.stop) if isinstance(band, slice) else band
    start = 0 if start is None else int(start)
    stop = N if stop is None else int(stop)
    if not 0 <= start < stop <= N:
        raise ValueError(f"empty or invalid band [{start}, {stop})")
    return slice(start, stop)


def green_apply(op: DiscreteOperator, g) -> Field:
    """h with (-L) h = g at the nodes and h = 0 outside the ball."""
    gv = _values(g)
    if not np.all(np.isfinite(gv)):
        raise ValueError("source must be finite")
    h = op.solve(gv)
    if not np.all(np.isfinite(h)):
        raise AssemblyError("Green solve produced non-finite values")
    return Field(op.grid, h, "green")


def harmonic_lift(op: DiscreteOperator, band, data) -> Field:
    """h = data off the band, (-L) h = 0 on the band."""
    sl = _band_slice(op.N, band)
    dv = _values(data).copy()
    idx = np.arange(op.N)
    inside = (idx >= sl.start) & (idx < sl.stop)
    if not np.all(np.isfinite(dv[~inside])):
        raise ValueError("boundary data must be finite off the band")
    A = op.A
    rhs = -A[np.ix_(inside, ~inside)] @ dv[~inside]
    dv[inside] = linalg.solve(A[np.ix_(inside, inside)], rhs)
    return Field(op.grid, dv, "lift")


def band_solve(op: DiscreteOperator, band, source, data) -> Field:
    """h = data off the band, (-L) h = source on the band."""
    sl = _band_slice(op.N, band)
    dv = _values(data).copy()
    src = _values(source)
    idx = np.arange(op.N)
    inside = (idx >= sl.start) & (idx < sl.stop)
    A = op.A
    rhs = src[inside] - A[np.ix_(inside, ~inside)] @ dv[~inside]
    dv[inside] = linalg.solve(A[np.ix_(inside, inside)], rhs)
    return Field(op.grid, dv, "band")


def martin_surrogate(domain: BallDomain, spec: bs.BernsteinSpec, grid: RadialGrid) -> Field:
    """V*(delta) at the nodes; its reciprocal is the moderate blow-up profile."""
    surr = bs.renewal_surrogate(spec)
    return Field(grid, surr.vstar(domain.delta(grid.r)), "vstar")
