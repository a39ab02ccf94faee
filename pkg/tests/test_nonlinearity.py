import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from largesol import nonlinearity as nlm

exponents = st.floats(min_value=1.05, max_value=6.0)
CUSTOM = "t**2*log(1+t)"


@pytest.fixture(scope="module")
def custom():
    return nlm.make_custom(CUSTOM)


def test_power_values():
    nl = nlm.make_power(3)
    assert nl.f(2.0) == 8.0
    assert nl.df(2.0) == 12.0
    assert (nl.m, nl.M) == (2.0, 2.0)
    t = np.geomspace(1e-3, 1e3, 7)
    nl = nlm.make_power(2.5)
    np.testing.assert_allclose(t * nl.df(t) / nl.f(t), 2.5, rtol=1e-14)


@pytest.mark.parametrize("p", [1.0, 0.5, -2.0])
def test_power_rejects_small_exponent(p):
    with pytest.raises(ValueError):
        nlm.make_power(p)


def test_check_f1_power():
    grid = np.geomspace(1e-3, 1e3, 32)
    assert nlm.check_f1(nlm.make_power(3), grid) == pytest.approx((2.0, 2.0, True))
    m, M, ok = nlm.check_f1(nlm.make_power(1.5), grid)
    assert (m, M, ok) == (pytest.approx(0.5), pytest.approx(0.5), True)


def test_check_f1_preconditions():
    with pytest.raises(ValueError):
        nlm.check_f1(nlm.make_power(2), np.linspace(1, 2, 8))
    with pytest.raises(ValueError):
        nlm.check_f1(nlm.make_custom("t**2*exp(-1/t)"), np.geomspace(1e-5, 1, 20))


def test_check_f1_custom_matches_dense_oracle(custom):
    grid = np.linspace(0.01, 10, 200)
    m_hat, M_hat, ok = nlm.check_f1(custom, grid)
    dense = np.linspace(0.01, 10, 20001)
    ratio = dense * (2 * dense * np.log1p(dense) + dense**2 / (1 + dense)) / (dense**2 * np.log1p(dense)) - 1
    assert ok
    assert 1 < m_hat < 2 and M_hat <= 2
    assert m_hat == pytest.approx(ratio.min(), abs=1e-3)
    assert M_hat == pytest.approx(ratio.max(), abs=1e-3)


def test_custom_rejects_bad_expressions():
    with pytest.raises(ValueError):
        nlm.make_custom("t**2 + 1")
    with pytest.raises(ValueError):
        nlm.make_custom("t**2 + x")
    with pytest.raises(ValueError):
        nlm.make_custom("__import__('os')")


def test_antiderivative_power():
    assert nlm.antiderivative_F(nlm.make_power(3), 2.0) == pytest.approx(4.0)
    assert nlm.antiderivative_F(nlm.make_power(2), 1.0) == pytest.approx(1 / 3)


def test_antiderivative_custom_against_mpmath(custom):
    want = float(mp.quad(lambda s: s**2 * mp.log(1 + s), [0, 1]))
    assert nlm.antiderivative_F(custom, 1.0) == pytest.approx(want, rel=1e-10)
    t = np.array([1.0, 3.0, 10.0, 100.0])
    assert np.all(nlm.antiderivative_F(custom, t) >= 0.5 * t ** (2 + custom.m) / (2 + custom.m) * math.log(2))


def test_varphi_power_closed_forms():
    assert nlm.varphi(nlm.make_power(3), 4.0) == pytest.approx(0.5, rel=1e-14)
    assert nlm.varphi(nlm.make_power(2), 1.0) == pytest.approx(2 * math.sqrt(3), rel=1e-14)


def test_varphi_custom_against_mpmath(custom):
    F = lambda s: mp.quad(lambda x: x**2 * mp.log(1 + x), [0, s])
    want = float(mp.quad(lambda s: F(s) ** -0.5, [2, 20, 200, mp.inf]))
    assert nlm.varphi(custom, 2.0) == pytest.approx(want, rel=1e-7)


def test_psi_power_closed_forms():
    assert nlm.psi(nlm.make_power(3), 0.5) == pytest.approx(4.0, rel=1e-14)
    assert nlm.psi(nlm.make_power(2), 2 * math.sqrt(3)) == pytest.approx(1.0, rel=1e-14)
    nl = nlm.make_power(2.5)
    assert nlm.psi(nl, nlm.varphi(nl, 7.0)) == pytest.approx(7.0, rel=1e-8)


def test_psi_rejects_nonpositive():
    with pytest.raises(ValueError):
        nlm.psi(nlm.make_power(2), 0.0)


@pytest.mark.parametrize("nl_name", ["power", "custom"])
def test_varphi_psi_roundtrip_twelve_decades(nl_name, custom):
    nl = nlm.make_power(2.5) if nl_name == "power" else custom
    s = np.geomspace(1e-4, 1e8, 25)
    np.testing.assert_allclose(nlm.psi(nl, nlm.varphi(nl, s)), s, rtol=1e-8)
    v = nlm.varphi(nl, s)
    np.testing.assert_allclose(nlm.varphi(nl, nlm.psi(nl, v)), v, rtol=1e-8)


def test_transform_properties_power_equalities():
    grid = np.geomspace(1e-2, 1e2, 30)
    rep = nlm.check_transform_properties(nlm.make_power(3), grid)
    assert rep.passed and rep.failed == ()
    nl = nlm.make_power(3)
    np.testing.assert_allclose(nlm.psi(nl, grid) * grid, 2.0, rtol=1e-13)
    rep2 = nlm.check_transform_properties(nlm.make_power(2), grid)
    assert rep2.sqrt_ratio_bounds == pytest.approx((1 / (2 * math.sqrt(3)),) * 2, rel=1e-12)


def test_transform_properties_custom(custom):
    rep = nlm.check_transform_properties(custom, np.geomspace(1e-2, 1e3, 30))
    assert rep.passed, rep.failed


def test_transform_report_names_failures():
    nl = nlm.make_power(3)
    bad = nlm.Nonlinearity("power", {"p": 3.0}, nl.f, nl.df, 3.0, 3.0)
    rep = nlm.check_transform_properties(bad, np.geomspace(1e-1, 10, 20))
    assert not rep.passed
    assert "varphi_derivative" in rep.failed


def test_negative_arguments_rejected():
    with pytest.raises(ValueError):
        nlm.make_power(2)(-1.0)


def test_from_config():
    assert nlm.from_config({"family": "power", "p": 2.5}).p == 2.5
    assert nlm.from_config({"family": "power", "params": {"p": 2.0}}).p == 2.0
    assert nlm.from_config({"family": "custom", "expression": CUSTOM}).family == "custom"
    with pytest.raises(ValueError):
        nlm.from_config({"family": "cubic"})
    nl = nlm.make_power(2.5)
    assert nlm.from_config(nl.record()).record() == nl.record()


@settings(max_examples=40, deadline=None)
@given(exponents, st.floats(min_value=1e-6, max_value=1e6))
def test_doubling(p, t):
    nl = nlm.make_power(p)
    assert nl.f(2 * t) <= 2 ** (1 + nl.M) * nl.f(t) * (1 + 1e-12)
    assert nlm.check_doubling(nl, np.array([t]))


@settings(max_examples=40, deadline=None)
@given(exponents, st.floats(min_value=1e-5, max_value=1e5))
def test_power_transforms_match_closed_forms(p, t):
    nl = nlm.make_power(p)
    c = 2 * math.sqrt(p + 1) / (p - 1)
    assert nlm.varphi(nl, t) == pytest.approx(c * t ** (-(p - 1) / 2), rel=1e-10)
    assert nlm.psi(nl, t) == pytest.approx((c / t) ** (2 / (p - 1)), rel=1e-10)
    assert nlm.antiderivative_F(nl, t) == pytest.approx(t ** (p + 1) / (p + 1), rel=1e-10)
    assert nlm.varphi(nl, 2 * t) < nlm.varphi(nl, t)


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=1e-3, max_value=1e4))
def test_custom_monotone_and_f1(t):
    nl = nlm.make_custom(CUSTOM)
    ratio = t * nl.df(t) / nl.f(t)
    assert 1 + nl.m - 1e-9 <= ratio <= 1 + nl.M + 1e-9
    assert nlm.varphi(nl, 2 * t) < nlm.varphi(nl, t)
