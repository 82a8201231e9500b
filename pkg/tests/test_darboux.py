import math

import numpy as np
import pytest

from gapforge import (PreconditionError, TransformationFunction, beta_from_u, bloch_pair,
                      lame_potential, map_eigenfunction_1, map_eigenfunction_2, missing_state_1,
                      missing_state_2, riccati_residual, transform_potential_1,
                      transform_potential_2)
from gapforge.darboux import d1_central4, d2_central4, schrodinger_residual
from gapforge.elliptic import free_potential, jacobi_elliptic
from gapforge.spectral import SolutionTrace

X = np.linspace(-8.0, 8.0, 16001)
FREE = free_potential()


def trace(f, df, eps, x=X):
    return SolutionTrace(x, f(x), df(x), eps)


def test_fd_stencils_exact_on_quartics():
    x = np.linspace(-1, 1, 41)
    f = x**4 - 2 * x**3 + x
    h = x[1] - x[0]
    assert np.allclose(d1_central4(f, h)[2:-2], (4 * x**3 - 6 * x**2 + 1)[2:-2], atol=1e-12)
    assert np.allclose(d2_central4(f, h)[2:-2], (12 * x**2 - 12 * x)[2:-2], atol=1e-9)
    assert np.isnan(d1_central4(f, h)[:2]).all()


def test_cosh_gives_sech_squared_well():
    u = trace(np.cosh, np.sinh, -1.0)
    r = transform_potential_1(FREE, u)
    assert r.regular
    assert np.max(np.abs(r.V_out + 2 / np.cosh(X) ** 2)) < 1e-13
    assert r.residuals["riccati"] < 1e-10
    # second differences of ln cosh: round-off ~ eps |ln u| / h^2
    assert r.residuals["route_agreement"] < 1e-7


def test_lame_ground_state_gives_shifted_copy():
    m = 0.5
    V = lame_potential(m)
    x = np.linspace(-6, 6, 6001)
    e = jacobi_elliptic(x, m)
    u = SolutionTrace(x, e.dn, -m * e.sn * e.cn, m)
    beta = beta_from_u(u)
    assert np.max(np.abs(beta.values - m * e.sn * e.cn / e.dn)) < 1e-14
    assert riccati_residual(beta, V, m) < 1e-9
    r = transform_potential_1(V, u)
    K = V.params["K"]
    assert np.max(np.abs(r.V_out - V(x + K))) < 1e-12


def test_map_eigenfunction_closed_form():
    k = 1.7
    u = trace(np.cosh, np.sinh, -1.0)
    psi = trace(lambda x: np.sin(k * x), lambda x: k * np.cos(k * x), k * k)
    phi = map_eigenfunction_1(u, psi)
    assert np.max(np.abs(phi.psi - (k * np.cos(k * X) - np.tanh(X) * np.sin(k * X)))) < 1e-13
    r = transform_potential_1(FREE, u)
    assert schrodinger_residual(phi, r.V_out) < 1e-8
    # derivative from the Riccati identity vs finite differences
    fd = d1_central4(phi.psi, phi.h)
    assert np.nanmax(np.abs(fd - phi.dpsi)) < 1e-9


def test_map_at_factorization_energy_kills_u():
    u = trace(np.cosh, np.sinh, -1.0)
    phi = map_eigenfunction_1(u, u)
    assert np.max(np.abs(phi.psi)) < 1e-12


def test_missing_state_first_order():
    u = trace(np.cosh, np.sinh, -1.0)
    phi = missing_state_1(u)
    assert np.allclose(phi.psi * np.exp(phi.log_scale) * np.cosh(X), 1.0)
    r = transform_potential_1(FREE, u)
    assert schrodinger_residual(phi, r.V_out) < 1e-8
    with pytest.raises(PreconditionError, match="node"):
        missing_state_1(trace(np.sinh, np.cosh, -1.0))


def test_scale_invariance_and_trivial_u():
    u = trace(np.cosh, np.sinh, -1.0)
    a = transform_potential_1(FREE, u).V_out
    b = transform_potential_1(FREE, u.scaled(-3.5)).V_out
    assert np.max(np.abs(a - b)) < 1e-13
    one = trace(np.ones_like, np.zeros_like, 0.0)
    assert np.max(np.abs(transform_potential_1(FREE, one).V_out)) == 0.0


def test_singular_transform_flags_poles():
    r = transform_potential_1(FREE, trace(np.sinh, np.cosh, -1.0))
    assert not r.regular
    assert len(r.poles) == 1 and abs(r.poles[0]) < 1e-9
    assert np.isnan(r.V_out).any()


def _two_soliton():
    ua = trace(np.cosh, np.sinh, -1.0)
    u = trace(lambda x: np.sinh(2 * x), lambda x: 2 * np.cosh(2 * x), -4.0)
    return ua, u


def test_second_order_two_soliton():
    ua, u = _two_soliton()
    r = transform_potential_2(FREE, ua, u)
    assert r.regular
    assert np.max(np.abs(r.V_out + 6 / np.cosh(X) ** 2)) < 1e-12
    assert r.residuals["route_agreement"] < 1e-7
    assert r.residuals["chain_agreement"] < 1e-9
    # W(cosh x, sinh 2x) = 2 cosh^3 x
    ratio = r.wronskian / np.cosh(X) ** 3
    assert np.max(np.abs(ratio / ratio[0] - 1.0)) < 1e-12


def test_second_order_symmetry_bitwise():
    ua, u = _two_soliton()
    a = transform_potential_2(FREE, ua, u).V_out
    b = transform_potential_2(FREE, u, ua).V_out
    assert np.array_equal(a, b)


def test_second_order_states():
    ua, u = _two_soliton()
    r = transform_potential_2(FREE, ua, u)
    pa, pe = missing_state_2(ua, u)
    assert pa.energy == -1.0 and pe.energy == -4.0
    assert np.max(np.abs(pe.psi * np.exp(pe.log_scale) - 0.5 / np.cosh(X) ** 2)) < 1e-13
    assert np.max(np.abs(pa.psi * np.exp(pa.log_scale) - np.sinh(X) / np.cosh(X) ** 2)) < 1e-13
    for p in (pa, pe):
        assert schrodinger_residual(p, r.V_out) < 1e-8


def test_second_order_maps_scattering_state():
    ua, u = _two_soliton()
    r = transform_potential_2(FREE, ua, u)
    k = 0.9
    psi = trace(lambda x: np.cos(k * x), lambda x: -k * np.sin(k * x), k * k)
    phi = map_eigenfunction_2(ua, u, psi)
    assert schrodinger_residual(phi, r.V_out) < 1e-8
    assert np.nanmax(np.abs(d1_central4(phi.psi, phi.h) - phi.dpsi)) < 1e-8
    # reflectionless: |phi| tends to a constant times the free amplitude
    assert np.max(np.abs(phi.psi[:100])) > 0.1


def test_second_order_preconditions():
    ua, _ = _two_soliton()
    with pytest.raises(PreconditionError):
        transform_potential_2(FREE, ua, ua)
    short = trace(np.cosh, np.sinh, -4.0, x=np.linspace(0, 1, 11))
    with pytest.raises(PreconditionError, match="grid"):
        transform_potential_2(FREE, ua, short)


def test_from_bloch_mixing():
    V = lame_potential(0.5)
    pair = bloch_pair(V, -0.1)
    u = TransformationFunction.from_bloch(pair, 1.0, 4)
    assert u.node_count == 0 and u.divergence == ("grows", "grows")
    assert np.max(np.abs(u.u)) == pytest.approx(1.0)
    minus = TransformationFunction.from_bloch(pair, math.inf, 4)
    assert minus.coefficients == (0.0, 1.0) and minus.divergence == ("grows", "decays")
    assert schrodinger_residual(u.trace, V) < 1e-7
    with pytest.raises(PreconditionError):
        TransformationFunction.from_bloch(pair, float("nan"), 4)
