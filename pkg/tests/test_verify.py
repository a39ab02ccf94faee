import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from largesol import bernstein as bs
from largesol import nonlinearity as nlm
from largesol import solver as sv
from largesol import verify as vf
from largesol.cli import sign_changing_field, verify_battery
from largesol.nonlocal_operator import green_apply, harmonic_lift


@pytest.fixture(scope="module")
def op(op_cache):
    return op_cache(1.0, 256, 3.0)


def interior_stop(op):
    return int(np.flatnonzero(~sv.layer_mask(op.grid))[-1]) + 1


def test_check_result_invariant():
    assert vf.CheckResult.judge("x", -1e-12, 3, 1e-10).verdict
    assert not vf.CheckResult.judge("x", -1e-8, 3, 1e-10).verdict
    with pytest.raises(ValueError):
        vf.CheckResult("x", True, -1.0, 0, 1e-10)
    with pytest.raises(ValueError):
        vf.CheckResult("x", True, 0.0, 0, 1e-10, applicable=False)
    res = vf.CheckResult.inapplicable("x", 1e-10, "why")
    assert not res.verdict and not res.applicable and np.isnan(res.margin)
    assert res.to_dict()["note"] == "why"
    assert "inapplicable" in vf.format_table([res])


def test_make_bump(op):
    xi = vf.make_bump(op.grid, 10, 12, smoothing=2).values
    assert np.flatnonzero(xi).tolist() == list(range(8, 14))
    assert xi.sum() == pytest.approx(2.0)
    with pytest.raises(ValueError):
        vf.make_bump(op.grid, 5, 5)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_adjoint_pairing_is_exact(op_cache, seed):
    op = op_cache(1.0, 256, 3.0)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.N)
    xi = vf.random_bumps(op.grid, 1, rng, op.N)[0].values
    w = op.grid.weights
    lhs = np.sum(w * v * op.transpose_apply(xi))
    rhs = np.sum(w * xi * op.apply(v))
    scale = np.sum(w * np.abs(v) * np.abs(op.transpose_apply(xi))) + np.sum(w * xi * np.abs(op.apply(v)))
    assert abs(lhs - rhs) <= 1e-12 * scale


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_random_bands_and_bumps_in_range(seed):
    rng = np.random.default_rng(seed)
    for a, b in vf.random_bands(100, 10, rng, stop=80):
        assert 0 <= a < b <= 80 and b - a >= 2
    from largesol.nonlocal_operator import BallDomain, build_grid
    g = build_grid(BallDomain(), 64, 2.0)
    for xi in vf.random_bumps(g, 5, rng, 40, start=10):
        nz = np.flatnonzero(xi.values)
        assert nz.min() >= 10 and nz.max() < 40


def test_superharmonic(op):
    rng = np.random.default_rng(0)
    G = green_apply(op, np.ones(op.N)).values
    res = vf.check_superharmonic(op, G, vf.random_bands(op.N, 30, rng))
    assert res.verdict and res.margin > 0
    # a function harmonic on the band equals its own lift there
    h = harmonic_lift(op, (40, 120), G).values
    res = vf.check_superharmonic(op, h, [(40, 120)])
    assert res.verdict and abs(res.margin) < 1e-10
    assert not vf.check_superharmonic(op, -G, [(10, 20)]).applicable


def moderate_pair(op):
    spec, nl = bs.stable(1.0), nlm.make_power(2.5)
    m = sv.martin_field(op, spec)
    return nl, sv.solve_moderate(op, nl, 2.0, m).u, sv.solve_moderate(op, nl, 20.0, m).u


def test_green_identity_and_tampering(op):
    nl, u, _ = moderate_pair(op)
    bands = vf.random_bands(op.N, 10, np.random.default_rng(1), stop=interior_stop(op))
    assert vf.check_green_identity(op, nl, u, bands).verdict
    bad = u.values.copy()
    bad[100] *= 1.01
    res = vf.check_green_identity(op, nl, bad, [(50, 150)])
    assert not res.verdict and res.location is not None


def test_comparison(op):
    nl, lo, hi = moderate_pair(op)
    band = (0, interior_stop(op))
    same = vf.check_comparison(op, nl, hi, hi, band)
    assert same.verdict and same.margin == 0.0
    assert vf.check_comparison(op, nl, hi, lo, band).verdict
    # the lower solution is no supersolution above the higher one off the band
    assert not vf.check_comparison(op, nl, lo, hi, band).applicable


def test_kato(op):
    u, F = sign_changing_field(op)
    assert np.any(u > 0) and np.any(u < 0)
    xis = vf.random_bumps(op.grid, 30, np.random.default_rng(2), interior_stop(op))
    assert vf.check_kato(op, u, F, xis).verdict
    flipped = F.copy()
    flipped[60] = -flipped[60]
    assert not vf.check_kato(op, u, flipped, xis).applicable
    edge = [vf.make_bump(op.grid, op.N - 3, op.N, smoothing=0)]
    assert not vf.check_kato(op, u, F, edge).applicable
    with pytest.raises(ValueError):
        vf.check_kato(op, u, F, [-xis[0].values])


def test_max_and_min_of_solutions(op):
    nl, lo, hi = moderate_pair(op)
    xis = vf.random_bumps(op.grid, 30, np.random.default_rng(3), interior_stop(op))
    assert vf.check_max_subsolution(op, nl, lo, hi, xis).verdict
    assert vf.check_max_subsolution(op, nl, lo, hi, xis, use_min=True).verdict
    junk = hi.values * 1.5
    assert not vf.check_max_subsolution(op, nl, lo, junk, xis).applicable


def battery_verdicts(op_cache, N):
    op = op_cache(1.0, N, 3.0)
    spec, nl = bs.stable(1.0), nlm.make_power(2.5)
    U = sv.build_U(op.domain, spec, nl, op.grid)
    bundle = sv.build_supersolution(op, U, nl)
    tr = sv.solve_large(op, nl, bundle, sv.martin_field(op, spec))
    res = verify_battery(op, nl, tr.u.values, bundle.ubar.values, tr.moderate, n_bands=30, n_bumps=20)
    return [(r.name, r.verdict, r.applicable) for r in res]


def test_battery_passes_and_is_stable_under_mesh_halving(op_cache):
    coarse, fine = battery_verdicts(op_cache, 256), battery_verdicts(op_cache, 512)
    assert coarse == fine
    assert all(v and a for _, v, a in fine)
    assert len(fine) == 7
