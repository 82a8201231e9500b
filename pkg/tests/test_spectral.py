import math

import numpy as np
import pytest

from gapforge import (NumericalError, PreconditionError, bloch_pair, classify, find_band_edges,
                      integrate, lame_potential, monodromy)
from gapforge.elliptic import free_potential, jacobi_elliptic
from gapforge.spectral import (ANTIPERIODIC, BAND, EDGE, GAP, PERIODIC, canonical_solutions,
                               count_nodes, discriminant, gap_index, node_locations)

V5 = lame_potential(0.5)


def test_integrate_dn_over_two_periods():
    tr = integrate(V5, 0.5, 0.0, 2 * V5.period, 1.0, 0.0)
    assert np.max(np.abs(tr.psi - jacobi_elliptic(tr.x, 0.5).dn)) < 1e-10


def test_integrate_free_sine():
    F = free_potential()
    tr = integrate(F, 4.0, 0.0, math.pi, 0.0, 2.0)
    assert np.max(np.abs(tr.psi - np.sin(2 * tr.x))) < 1e-10
    assert np.max(np.abs(tr.dpsi - 2 * np.cos(2 * tr.x))) < 1e-9


def test_integrate_backward_sn():
    e = jacobi_elliptic(V5.period, 0.5)
    tr = integrate(V5, 1.5, V5.period, 0.0, e.sn, e.cn * e.dn)
    assert tr.x[0] == 0.0 and tr.x[-1] == pytest.approx(V5.period)
    assert np.max(np.abs(tr.psi - jacobi_elliptic(tr.x, 0.5).sn)) < 1e-10


def test_integrate_rejects_coarse_step_and_empty_interval():
    with pytest.raises(PreconditionError):
        integrate(V5, 0.5, 0.0, 1.0, 1.0, 0.0, h=V5.period / 100)
    with pytest.raises(PreconditionError):
        integrate(V5, 0.5, 1.0, 1.0, 1.0, 0.0)


@pytest.mark.parametrize("m", [0.0, 0.5, 0.9])
@pytest.mark.parametrize("eps", [-1.0, 0.3, 1.25, 2.5])
def test_monodromy_invariants(m, eps):
    V = lame_potential(m)
    M = monodromy(V, eps)
    assert abs(M.det - 1) < 1e-9
    _, P, D = canonical_solutions(V, eps)
    W = P[:, 0] * D[:, 1] - P[:, 1] * D[:, 0]
    assert np.max(np.abs(W - 1)) < 1e-8
    M2 = monodromy(V, eps, x0=V.period / 3)
    assert M2.discriminant == pytest.approx(M.discriminant, rel=1e-9, abs=1e-9)


def test_free_discriminant_closed_form():
    F = free_potential()
    E = np.array([-2.0, 0.3, 2.0, 5.0])
    D = discriminant(F, E)
    k = np.sqrt(E.astype(complex))
    assert np.allclose(D, 2 * np.cos(k * math.pi).real, atol=1e-10)


def test_discriminant_values_and_vectorization():
    D = discriminant(V5, np.array([0.5, 1.0, 1.5, 1.25, -0.1]))
    assert D[0] == pytest.approx(2.0, abs=1e-9)
    assert D[1] == pytest.approx(-2.0, abs=1e-9)
    assert D[2] == pytest.approx(-2.0, abs=1e-9)
    assert abs(D[3]) > 2 and abs(D[4]) > 2
    assert D[4] == pytest.approx(monodromy(V5, -0.1).discriminant, rel=1e-14)


def test_multipliers():
    M = monodromy(V5, -0.1)
    assert M.t_plus * M.t_minus == pytest.approx(1.0, rel=1e-9)
    assert M.t_plus + M.t_minus == pytest.approx(M.discriminant, rel=1e-12)
    assert abs(M.t_plus) > 1
    band = monodromy(V5, 0.75).multipliers
    assert all(abs(abs(t) - 1) < 1e-9 for t in band)


def test_classify():
    assert classify(0.3).kind == BAND
    assert classify(2.5).kind == GAP
    assert classify(-2.0 - 1e-9).kind == EDGE and classify(-2.0).detail == ANTIPERIODIC
    assert classify(2.0).detail == PERIODIC
    assert classify(monodromy(V5, 1.25)).kind == GAP


def test_band_structure_lame():
    bs = find_band_edges(V5, (-0.5, 3.0))
    assert np.allclose(bs.edges, [0.5, 1.0, 1.5], atol=1e-9)
    assert bs.edge_kinds == [PERIODIC, ANTIPERIODIC, ANTIPERIODIC]
    assert bs.open_lower and bs.gaps[0][0] == -math.inf
    assert bs.gap_containing(1.2) == pytest.approx((1.0, 1.5))
    assert bs.gap_containing(0.7) is None
    assert bs.lowest_edge == pytest.approx(0.5)


def test_band_structure_free_particle_has_no_finite_gap():
    bs = find_band_edges(lame_potential(0.0), (-0.5, 5.0))
    assert len(bs.edges) == 1 and abs(bs.edges[0]) < 1e-9
    assert len(bs.gaps) == 1
    assert sorted(round(c["energy"], 5) for c in bs.closures) == [1.0, 4.0]


def test_band_structure_no_edges():
    with pytest.raises(NumericalError, match="no edges"):
        find_band_edges(V5, (0.6, 0.9))


def test_bloch_pair_multipliers_and_periodicity():
    pair = bloch_pair(V5, -0.1)
    tp, tm = pair.v_plus.multiplier, pair.v_minus.multiplier
    assert tp * tm == pytest.approx(1.0, rel=1e-9)
    for br, t in ((pair.v_plus, tp), (pair.v_minus, tm)):
        # integrate the branch data one more period and compare with t v
        tr = integrate(V5, -0.1, 0.0, V5.period, br.psi[0], br.dpsi[0])
        assert tr.psi[-1] == pytest.approx(t * br.psi[0], rel=1e-8)
        assert math.hypot(br.psi[0], br.dpsi[0]) == pytest.approx(1.0)
        assert br.psi[0] > 0


def test_bloch_gap_one_zero_per_period():
    pair = bloch_pair(V5, 1.25)
    assert pair.v_plus.multiplier < -1
    x, p, _, _ = pair.v_plus.sample(3)
    assert count_nodes(p) == 6
    assert gap_index(V5, 1.25) == 1 and gap_index(V5, -0.1) == 0


def test_bloch_rejects_band_and_edge():
    with pytest.raises(PreconditionError, match="band"):
        bloch_pair(V5, 0.75)
    with pytest.raises(PreconditionError, match="edge"):
        bloch_pair(V5, 0.5)


def test_branch_trace_is_scaled():
    tr = bloch_pair(V5, -0.1).v_plus.trace(10)
    assert np.max(np.abs(tr.psi)) == pytest.approx(1.0)
    assert tr.log_scale > 20


def test_nodes():
    x = np.linspace(0, 3 * math.pi, 3001)
    assert count_nodes(np.sin(x + 0.1)) == 3
    assert np.allclose(node_locations(x, np.sin(x + 0.1)), np.pi * np.arange(1, 4) - 0.1, atol=1e-6)
