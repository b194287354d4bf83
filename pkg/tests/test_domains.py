import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hsverify.algebra_core import comm
from hsverify.chamber_geometry import random_k_elements, triangulated_chamber
from hsverify.domains import (boundary_codim_check, cauchy_riemann_residual, eps_map, esw_map, euclid_domain,
                              euclid_orientation, integrand_g, ps_domain, ps_jacobian_analytic, ps_map,
                              ps_rectified_map, q_coords, regulator_chi, signed_jacobian, sw_domain,
                              sw_jacobian_analytic, sw_map, xi_form_bound)
from hsverify.integrator import sample_A
from hsverify.root_system import chamber_data

from conftest import decomposition

SMALL = [("orthogonal", 1, 1), ("unitary", 1, 1), ("orthogonal", 2, 1), ("symplectic", 1, 1), ("unitary", 2, 1)]


@pytest.mark.parametrize("kind,p,q", SMALL)
def test_ps_jacobian_analytic_matches_finite_differences(kind, p, q):
    d = decomposition(kind, p, q)
    rng = np.random.default_rng(11)
    dmap = ps_domain(d)
    for _ in range(3):
        y = 0.6 * rng.standard_normal(d.p.dim)
        x = rng.standard_normal(d.Qplus.dim)
        num = signed_jacobian(dmap, np.concatenate([y, x]))
        ana = ps_jacobian_analytic(d, y, x)
        assert abs(num - ana) < 1e-6 * max(1.0, abs(ana))


@pytest.mark.parametrize("kind,p,q", SMALL)
def test_sw_jacobian_analytic_matches_finite_differences(kind, p, q):
    d = decomposition(kind, p, q)
    rng = np.random.default_rng(12)
    for b in (0.5, 2.0):
        y = 0.5 * rng.standard_normal(d.p.dim)
        x = rng.standard_normal(d.Qplus.dim)
        num = signed_jacobian(sw_domain(d, b), np.concatenate([y, x]))
        ana = sw_jacobian_analytic(d, y, b)
        assert abs(num - ana) < 1e-6 * max(1.0, abs(ana))


@pytest.mark.parametrize("kind,p,q", SMALL)
def test_ps_jacobian_at_origin_is_bracket_determinant(kind, p, q):
    """At Y=0 the differential is block anti-diagonal: Y -> [Y, X] into Q-, X -> X into Q+."""
    d = decomposition(kind, p, q)
    x = np.random.default_rng(13).standard_normal(d.Qplus.dim)
    X = d.Qplus.element(x)
    B = np.array([d.Qminus.coords(comm(P, X)) for P in d.p.basis]).T
    expected = (-1) ** (d.p.dim * d.Qplus.dim) * np.linalg.det(B)
    assert ps_jacobian_analytic(d, np.zeros(d.p.dim), x) == pytest.approx(expected, rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("kind,p,q", SMALL)
def test_euclid_orientation(kind, p, q):
    d = decomposition(kind, p, q)
    pt = np.random.default_rng(14).standard_normal(d.Q.dim)
    assert abs(signed_jacobian(euclid_domain(d), pt) - euclid_orientation(d)) < 1e-8


def test_ps_map_lands_in_Q():
    d = decomposition("unitary", 2, 1)
    rng = np.random.default_rng(15)
    Q = ps_map(d, rng.standard_normal(d.p.dim), rng.standard_normal(d.Qplus.dim))
    assert d.Q.residual(Q) < 1e-10


@given(st.integers(0, 10_000), st.floats(0.01, 1.0))
def test_regulator_definition(seed, eps):
    d = decomposition("orthogonal", 2, 1)
    rng = np.random.default_rng(seed)
    Q = d.Q.element(rng.standard_normal(d.Q.dim))
    Qm = (Q - d.s @ Q @ d.s) / 2
    chi = regulator_chi(Q, eps, d.s)
    assert 0 < chi <= 1
    assert chi == pytest.approx(np.exp(-eps * np.linalg.norm(Qm) ** 2), rel=1e-10)


def test_regulator_rejects_nonpositive_eps():
    d = decomposition("orthogonal", 1, 1)
    with pytest.raises(ValueError):
        regulator_chi(d.s, 0.0, d.s)


@given(st.floats(0.001, 0.999), st.floats(-1, 1))
def test_xi_form_bound(eps, T):
    lo, val = xi_form_bound(eps, T)
    assert lo - 1e-15 <= val <= 1 + 1e-15


def test_integrand_is_holomorphic():
    d = decomposition("unitary", 1, 1)
    rng = np.random.default_rng(16)
    A = sample_A(d, seed=1)
    for _ in range(5):
        Q = d.Q.element(rng.standard_normal(d.Q.dim)) + 1j * d.Q.element(rng.standard_normal(d.Q.dim))
        V = d.Q.element(rng.standard_normal(d.Q.dim))
        assert cauchy_riemann_residual(A, Q, V) < 1e-6


def test_integrand_value():
    A = np.diag([0.5, -0.2]).astype(complex)
    Q = np.diag([1.0, 2.0]).astype(complex)
    assert integrand_g(Q, A) == pytest.approx(np.exp(-5 - 2j * (0.5 - 0.4)), rel=1e-14)


@pytest.mark.parametrize("kind,p,q", [("orthogonal", 2, 2), ("unitary", 2, 2), ("symplectic", 2, 2)])
def test_boundary_rank_deficiency(kind, p, q):
    d = decomposition(kind, p, q)
    cd = chamber_data(d)
    rep = boundary_codim_check(d, cd, triangulated_chamber(cd), n_points=10, seed=3)
    assert rep.applicable
    assert len(rep.face_deficiencies) == 10
    assert min(rep.face_deficiencies) >= 2
    assert max(rep.interior_deficiencies) == 0


def test_rank_one_boundary_check_not_applicable():
    d = decomposition("orthogonal", 2, 1)
    cd = chamber_data(d)
    assert not boundary_codim_check(d, cd, triangulated_chamber(cd)).applicable


@pytest.mark.parametrize("kind,p,q", [("orthogonal", 2, 1), ("unitary", 2, 2)])
def test_homotopy_endpoints(kind, p, q):
    d = decomposition(kind, p, q)
    cd = chamber_data(d)
    tc = triangulated_chamber(cd)
    rng = np.random.default_rng(17)
    x = rng.standard_normal(d.Qplus.dim)
    k = random_k_elements(d, 1, 4)[0]
    h = rng.uniform(0, 1, cd.a.dim)
    # EPS with no saturated index at t=0 is the rectified PS map
    assert np.abs(eps_map(d, cd, tc, 0, (), 0.0, h, k, x) - ps_rectified_map(d, cd, tc, 0, h, k, x)).max() < 1e-12
    # at t=1 it reduces to Ad(k) X
    X = d.Qplus.element(x)
    assert np.abs(eps_map(d, cd, tc, 0, (), 1.0, h, k, x) - k @ X @ np.linalg.inv(k)).max() < 1e-12
    # ESW at t=0 is the SW map at Y = H; at t=1 it is X - i b [k H k^-1, s]
    H = rng.standard_normal(cd.a.dim)
    Hm = cd.a.element(H)
    eye = np.eye(d.n, dtype=complex)
    sw = sw_map(d, d.p.coords(Hm), x, 1.5)
    assert np.abs(esw_map(d, cd, 0.0, H, eye, x, 1.5) - sw).max() < 1e-10
    kHk = k @ Hm @ np.linalg.inv(k)
    assert np.abs(esw_map(d, cd, 1.0, H, k, x, 1.5) - (X - 1.5j * comm(kHk, d.s))).max() < 1e-10


def test_q_coords_complex_linear():
    d = decomposition("unitary", 1, 1)
    rng = np.random.default_rng(18)
    a, b = rng.standard_normal(d.Q.dim), rng.standard_normal(d.Q.dim)
    W = d.Q.element(a) + 1j * d.Q.element(b)
    assert np.allclose(q_coords(d.Q, W), a + 1j * b, atol=1e-12)
