import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from gapforge import PreconditionError, complete_elliptic_K, jacobi_elliptic, lame_potential
from gapforge.elliptic import free_potential, lame_edge_functions


def K_quad(m):
    return integrate.quad(lambda t: 1.0 / math.sqrt(1.0 - m * math.sin(t) ** 2), 0.0, math.pi / 2,
                          epsabs=0, epsrel=1e-13, limit=200)[0]


@pytest.mark.parametrize("m", [0.0, 0.1, 0.5, 0.9, 0.999])
def test_K_matches_quadrature(m):
    assert complete_elliptic_K(m) == pytest.approx(K_quad(m), rel=1e-13)


def test_K_half_frozen():
    # frozen oracle: quadrature of the defining integral at m = 1/2
    assert complete_elliptic_K(0.5) == pytest.approx(1.8540746773013719, rel=1e-15)
    assert complete_elliptic_K(0.0) == pytest.approx(math.pi / 2, rel=1e-15)


def test_sn_by_inverting_incomplete_integral():
    # sn(x|m) = sin(phi) where F(phi|m) = x; phi found by root solving on quadrature
    from scipy.optimize import brentq

    m, x = 0.5, 0.8
    F = lambda p: integrate.quad(lambda t: 1.0 / math.sqrt(1 - m * math.sin(t) ** 2), 0, p,  # noqa: E731
                                 epsabs=1e-14, epsrel=1e-14, limit=200)[0]
    phi = brentq(lambda p: F(p) - x, 0.0, math.pi / 2, xtol=1e-15)
    e = jacobi_elliptic(x, m)
    assert e.sn == pytest.approx(math.sin(phi), abs=1e-13)
    assert e.cn == pytest.approx(math.cos(phi), abs=1e-13)
    assert e.dn == pytest.approx(math.sqrt(1 - m * math.sin(phi) ** 2), abs=1e-13)


def test_against_scipy_ellipj():
    x = np.linspace(-20.0, 20.0, 1001)
    for m in (0.05, 0.5, 0.95):
        e = jacobi_elliptic(x, m)
        sn, cn, dn, _ = special.ellipj(x, m)
        assert np.max(np.abs(e.sn - sn)) < 1e-12
        assert np.max(np.abs(e.cn - cn)) < 1e-12
        assert np.max(np.abs(e.dn - dn)) < 1e-12


def test_m_zero_reduces_to_trig():
    x = np.linspace(-5, 5, 51)
    e = jacobi_elliptic(x, 0.0)
    assert np.allclose(e.sn, np.sin(x), atol=1e-15)
    assert np.allclose(e.cn, np.cos(x), atol=1e-15)
    assert np.allclose(e.dn, 1.0)


def test_scalar_in_scalar_out():
    e = jacobi_elliptic(0.3, 0.5)
    assert isinstance(e.sn, float) and isinstance(e.K, float)


@given(st.floats(-50, 50), st.floats(0.0, 0.99))
@settings(max_examples=200, deadline=None)
def test_identities(x, m):
    e = jacobi_elliptic(x, m)
    assert abs(e.sn**2 + e.cn**2 - 1.0) < 1e-13
    assert abs(e.dn**2 + m * e.sn**2 - 1.0) < 1e-13
    assert e.dn > 0


@given(st.floats(-10, 10), st.floats(0.0, 0.95))
@settings(max_examples=100, deadline=None)
def test_periodicity(x, m):
    K = complete_elliptic_K(m)
    a, b = jacobi_elliptic(x, m), jacobi_elliptic(x + 2 * K, m)
    assert abs(a.sn + b.sn) < 1e-11 and abs(a.cn + b.cn) < 1e-11 and abs(a.dn - b.dn) < 1e-11


def test_derivative_identities_by_finite_difference():
    m, h = 0.7, 1e-3
    x = np.linspace(-3, 3, 61)
    for _, f, df in lame_edge_functions(m):
        fd = (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)
        assert np.max(np.abs(fd - df(x))) < 1e-10


@pytest.mark.parametrize("m", [0.1, 0.5, 0.9])
def test_edge_functions_solve_lame(m):
    V = lame_potential(m)
    h = 1e-3
    x = np.linspace(-2, 2, 41)
    for E, f, _ in lame_edge_functions(m):
        d2 = (-f(x + 2 * h) + 16 * f(x + h) - 30 * f(x) + 16 * f(x - h) - f(x - 2 * h)) / (12 * h * h)
        assert np.max(np.abs(-d2 + V(x) * f(x) - E * f(x))) < 1e-7


def test_lame_potential_properties():
    V = lame_potential(0.5)
    x = np.linspace(0, 3, 31)
    assert V.period == pytest.approx(2 * 1.8540746773013719)
    assert np.allclose(V(x + V.period), V(x), atol=1e-13)
    assert V.is_even()
    assert V.name == "lame" and V.params["m"] == 0.5
    assert np.allclose(V.derivative(x), 4 * 0.5 * jacobi_elliptic(x, 0.5).sn
                       * jacobi_elliptic(x, 0.5).cn * jacobi_elliptic(x, 0.5).dn)
    F = free_potential()
    assert F.period == pytest.approx(math.pi) and np.all(F(x) == 0)


@pytest.mark.parametrize("m", [-0.1, 1.0, 1.5, float("nan"), "abc"])
def test_rejects_bad_parameter(m):
    with pytest.raises(PreconditionError) as exc:
        complete_elliptic_K(m)
    assert exc.value.field == "m"


def test_m_one_message():
    with pytest.raises(PreconditionError, match="degenerate"):
        lame_potential(1.0)
