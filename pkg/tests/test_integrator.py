import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special
from scipy.linalg import expm

from hsverify.algebra_core import trace_form
from hsverify.domains import integrand_g, ps_jacobian_analytic, ps_map, regulator_chi
from hsverify.integrator import (EpsSchedule, MCSpec, PSKernel, SWKernel, check_As_positive, euclid_constant,
                                 extrapolation_weights, haar_density_p, haar_K, integrate_ps, jprime_is_polynomial,
                                 mc_p, ps_constant, quadrature_p, rhs_value, sample_A, verify_polar_form,
                                 verify_sw, verify_ps_identity)
from hsverify.root_system import polar_data

from conftest import PRESETS, decomposition


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def gaussian_integral_oracle(d):
    """Integral of exp(-Tr Q^2) over Q+ + iQ- from the explicit quadratic form, times the orientation."""
    basis = list(d.Qplus.basis) + [1j * B for B in d.Qminus.basis]
    M = np.array([[np.real(np.trace(a @ b)) for b in basis] for a in basis])
    m, dp = d.Qminus.dim, d.Qplus.dim
    orient = (-1) ** (m * dp) * 1j ** m
    return orient * math.pi ** (len(basis) / 2) / math.sqrt(np.linalg.det(M))


def brute_force_x_integral(d, A, y, eps, absolute=False, half_width=6.5, nodes=70):
    """Tensor Gauss-Legendre over a box in Q+ of J g chi, evaluated through the maps."""
    t, w = np.polynomial.legendre.leggauss(nodes)
    t, w = t * half_width, w * half_width
    total = 0j
    for idx in np.ndindex(*(nodes,) * d.Qplus.dim):
        x = t[list(idx)]
        Q = ps_map(d, y, x)
        J = ps_jacobian_analytic(d, y, x)
        if absolute:
            J = abs(J)
        total += np.prod(w[list(idx)]) * J * integrand_g(Q, A) * regulator_chi(Q, eps, d.s)
    return total


def sign_weighted_polar_orthogonal_11(A, eps):
    """Integral over the PS image in Q for O(1,1) of sgn(lambda1 - lambda2) g chi |dQ|.

    Q = u E11 + w E22 + v J with J = [[0,1],[-1,0]]. The image of PS is
    |u - w| > 2|v| and lambda1 - lambda2 has the sign of u - w. The v-integral
    over |v| < |r|/2 (r = u - w) is done with the Faddeeva function, the
    t = u + w integral is Gaussian and the remaining r-integral is 1D.
    """
    a = 2 * (1 - eps)
    rho = np.real(A[0, 0] - A[1, 1])
    sig = np.real(A[0, 0] + A[1, 1])
    kappa = np.real(A[1, 0] - A[0, 1])

    def v_integral_scaled(R):
        # e^{-a R^2} * int_{-R}^{R} exp(a v^2 - 2i kappa v) dv
        zp = math.sqrt(a) * (R - 1j * kappa / a)
        zm = math.sqrt(a) * (-R - 1j * kappa / a)
        val = math.sqrt(math.pi / a) / 2 * 1j * (np.exp(-2j * kappa * R) * special.wofz(-zp)
                                                 - np.exp(2j * kappa * R) * special.wofz(-zm))
        return val.real

    # sgn(r) e^{-r^2/2 - i rho r} is odd in its sign part: -2i int_0^inf e^{-r^2/2} sin(rho r) V(r/2) dr
    f = lambda r: math.exp(-eps * r * r / 2) * v_integral_scaled(r / 2)
    r_max = math.sqrt(2 * 40 / eps)  # e^{-eps r^2 / 2} < e^{-40} beyond
    val, _ = integrate.quad(f, 0, r_max, weight="sin", wvar=rho, epsabs=1e-14, epsrel=1e-12, limit=500)
    return 0.5 * math.sqrt(2 * math.pi) * math.exp(-sig ** 2 / 2) * (-2j) * val


def haar_density_oracle(d, y, h=1e-6):
    """|det| of the p-part of e^{-Y} dexp, by central differences of expm."""
    Y = d.p.element(y)
    E = expm(-Y)
    cols = []
    for i in range(d.p.dim):
        e = np.zeros(d.p.dim)
        e[i] = h
        D = (expm(d.p.element(y + e)) - expm(d.p.element(y - e))) / (2 * h)
        cols.append(d.p.coords(d.p.project(E @ D)))
    return abs(np.linalg.det(np.array(cols)))


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------

def test_euclid_constant_orthogonal_11():
    c = euclid_constant(decomposition("orthogonal", 1, 1))
    assert abs(abs(c) - math.pi ** 1.5 / math.sqrt(2)) < 1e-12


@pytest.mark.parametrize("kind,p,q", PRESETS)
def test_euclid_constant_matches_quadratic_form(kind, p, q):
    d = decomposition(kind, p, q)
    assert abs(euclid_constant(d) - gaussian_integral_oracle(d)) < 1e-12 * abs(euclid_constant(d))


def test_ps_constant_sign(preset_decomposition):
    d = preset_decomposition
    ratio = ps_constant(d) / euclid_constant(d)
    assert ratio == pytest.approx(np.sign(np.linalg.det(d.ad_s_matrix())))


# ---------------------------------------------------------------------------
# A sampling and preconditions
# ---------------------------------------------------------------------------

@given(st.integers(0, 1000), st.sampled_from([("orthogonal", 2, 1), ("unitary", 1, 2), ("symplectic", 1, 1)]))
def test_sample_A_respects_delta(seed, cls):
    d = decomposition(*cls)
    A = sample_A(d, delta=0.5, seed=seed)
    assert d.Q.residual(A) < 1e-12
    assert check_As_positive(d, A) >= 0.5 - 1e-12


def test_precondition_refused():
    d = decomposition("orthogonal", 1, 1)
    with pytest.raises(ValueError, match="As > 0"):
        integrate_ps(d, -d.s, 0.1)


# ---------------------------------------------------------------------------
# engines
# ---------------------------------------------------------------------------

@given(st.lists(st.floats(0.01, 1.0), min_size=3, max_size=5, unique=True), st.integers(0, 2))
def test_extrapolation_weights_exact_for_polynomials(eps, order):
    eps = sorted(eps, reverse=True)
    if min(abs(a - b) for a in eps for b in eps if a != b) < 0.02:
        return
    w = extrapolation_weights(eps, order)
    coeffs = np.arange(1, order + 2, dtype=float)
    vals = [np.polyval(coeffs, e) for e in eps]
    assert w @ vals == pytest.approx(coeffs[-1], abs=1e-8)
    assert np.count_nonzero(w) == order + 1


def test_eps_schedule_validation():
    with pytest.raises(ValueError):
        EpsSchedule((0.4, 0.2, 0.1))
    with pytest.raises(ValueError):
        EpsSchedule((0.1, 0.2, 0.05))
    assert EpsSchedule().order == 1


def test_quadrature_gaussian():
    f = lambda y: (np.exp(-np.sum(y ** 2, axis=1)) * np.cos(y[:, 0]))[:, None]
    val, err, R, panels = quadrature_p(f, 2)
    assert val[0] == pytest.approx(math.pi * math.exp(-0.25), rel=1e-10)


def test_mc_is_deterministic_and_unbiased():
    spec = MCSpec(seed=5, samples=40_000, batch=7_000)
    f = lambda y, rng: np.exp(-y[:, :1] ** 2)
    m1, e1, _ = mc_p(f, 1, spec, 1)
    m2, e2, _ = mc_p(f, 1, spec, 1)
    assert m1[0] == m2[0] and e1[0] == e2[0]
    assert abs(m1[0] - math.sqrt(math.pi)) < 4 * e1[0]


def test_mc_antithetic_option():
    spec = MCSpec(seed=5, samples=40_000, antithetic=True)
    m, e, _ = mc_p(lambda y, rng: np.exp(-y[:, :1] ** 2), 1, spec, 1)
    assert abs(m[0] - math.sqrt(math.pi)) < 4 * e[0]


# ---------------------------------------------------------------------------
# semi-analytic X integration against brute force
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind,p,q,y", [("orthogonal", 1, 1, [0.3]), ("orthogonal", 1, 1, [-0.8]),
                                        ("unitary", 1, 1, [0.2, -0.4]), ("symplectic", 1, 1, [0.1, 0.2, -0.1, 0.3])])
def test_ps_kernel_matches_brute_force(kind, p, q, y):
    d = decomposition(kind, p, q)
    A = sample_A(d, seed=2)
    eps = 0.2
    got = PSKernel(d, A).x_integrated(np.array([y]), [eps])[0, 0]
    want = brute_force_x_integral(d, A, np.array(y), eps)
    assert abs(got - want) < 1e-8 * max(1.0, abs(want))


def test_ps_kernel_absolute_matches_brute_force():
    """dim p = 1: J is linear in x, so integrate on the two sides of its kernel separately."""
    d = decomposition("orthogonal", 1, 1)
    A = sample_A(d, seed=2)
    y, eps = np.array([0.4]), 0.1
    k = np.array([ps_jacobian_analytic(d, y, e) for e in np.eye(2)])
    e1 = k / np.linalg.norm(k)
    e2 = np.array([-e1[1], e1[0]])
    t, w = np.polynomial.legendre.leggauss(80)
    want = 0j
    for lo, hi in ((-6.5, 0.0), (0.0, 6.5)):
        u, wu = (hi - lo) / 2 * t + (hi + lo) / 2, (hi - lo) / 2 * w
        v, wv = 6.5 * t, 6.5 * w
        for i in range(80):
            for j in range(80):
                x = u[i] * e1 + v[j] * e2
                Q = ps_map(d, y, x)
                want += wu[i] * wv[j] * abs(ps_jacobian_analytic(d, y, x)) * integrand_g(Q, A) \
                    * regulator_chi(Q, eps, d.s)
    got = PSKernel(d, A).x_integrated(y[None], [eps], absolute=True)[0, 0]
    assert abs(got - want) < 1e-8 * max(1.0, abs(want))


def test_sw_kernel_matches_brute_force():
    from hsverify.domains import sw_jacobian_analytic, sw_map

    d = decomposition("unitary", 1, 1)
    A = sample_A(d, seed=2)
    y, b = np.array([0.3, -0.2]), 1.3
    t, w = np.polynomial.legendre.leggauss(60)
    t, w = 6 * t, 6 * w
    want = 0j
    J = sw_jacobian_analytic(d, y, b)
    for i in range(60):
        for j in range(60):
            want += w[i] * w[j] * J * integrand_g(sw_map(d, y, [t[i], t[j]], b), A)
    got = SWKernel(d, A, b).x_integrated(y[None])[0]
    assert abs(got - want) < 1e-8 * max(1.0, abs(want))


# ---------------------------------------------------------------------------
# integral identities
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("eps", [0.2, 0.05])
def test_oriented_integral_equals_sign_weighted_measure_integral(eps):
    d = decomposition("orthogonal", 1, 1)
    orient = np.sign(ps_jacobian_analytic(d, [0.0], [1.0, 0.0]))  # lambda1 - lambda2 = 1 > 0 here
    for seed in (1, 2):
        A = sample_A(d, seed=seed)
        ps = integrate_ps(d, A, eps).value
        oracle = orient * sign_weighted_polar_orthogonal_11(A, eps)
        assert abs(ps - oracle) < 1e-7 * abs(oracle)


@pytest.mark.parametrize("kind,p,q", [("orthogonal", 1, 1), ("unitary", 1, 1)])
def test_ps_identity_for_three_draws(kind, p, q):
    d = decomposition(kind, p, q)
    for seed in (1, 2, 3):
        rep = verify_ps_identity(d, sample_A(d, seed=seed))
        assert rep.status == "pass", (rep.lhs, rep.rhs, rep.notes)


def test_scaling_law():
    d = decomposition("orthogonal", 1, 1)
    A = sample_A(d, seed=4)
    r1 = verify_ps_identity(d, A)
    r2 = verify_ps_identity(d, 1.2 * A)
    expected = math.exp(-(1.2 ** 2 - 1) * np.real(trace_form(A, A)))
    ratio = r2.lhs / r1.lhs
    assert abs(ratio - expected) < 0.05 * expected


def test_inconclusive_when_fit_orders_disagree():
    d = decomposition("unitary", 1, 1)
    rep = verify_ps_identity(d, sample_A(d, seed=1), fit_tol_rel=1e-6)
    assert rep.status == "inconclusive"


def test_sign_control_breaks_orthogonal_identity():
    d = decomposition("orthogonal", 1, 1)
    rep = verify_ps_identity(d, sample_A(d, seed=1), absolute=True)
    assert rep.status == "fail"
    assert rep.rel_dev > 5 * rep.tol_rel


def test_sw_b_independence():
    d = decomposition("orthogonal", 1, 1)
    A = sample_A(d, seed=1)
    spec = MCSpec(samples=100_000)
    reps = [verify_sw(d, A, b, spec) for b in (0.5, 1.0, 2.0)]
    for r in reps:
        assert r.status == "pass"
    for i in range(3):
        for j in range(i + 1, 3):
            diff = abs(reps[i].lhs - reps[j].lhs)
            assert diff <= 3 * math.hypot(reps[i].stderr, reps[j].stderr)


def test_sw_quadrature_is_exact():
    d = decomposition("unitary", 1, 1)
    A = sample_A(d, seed=3)
    rep = verify_sw(d, A, 1.0, backend="quadrature", tol_rel=1e-8)
    assert rep.status == "pass"


# ---------------------------------------------------------------------------
# polar form
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind,p,q", [("unitary", 2, 1), ("orthogonal", 2, 1), ("symplectic", 1, 2)])
def test_haar_K_elements(kind, p, q):
    d = decomposition(kind, p, q)
    ks = haar_K(d, 2000, np.random.default_rng(0))
    eye = np.eye(d.n)
    assert np.abs(ks @ np.conj(np.swapaxes(ks, 1, 2)) - eye).max() < 1e-12
    assert np.abs(ks @ d.s - d.s @ ks).max() < 1e-12
    for tau in d.cls.taus:
        # group elements fixed by the involution: tau_G(k) = M k^{-T} M^{-1}
        kinvT = np.swapaxes(np.linalg.inv(ks), 1, 2)
        assert np.abs(tau.matrix @ kinvT @ np.linalg.inv(tau.matrix) - ks).max() < 1e-10
    if kind != "orthogonal":
        # Haar moments of the first block: E[k_11] = 0, E|k_11|^2 = 1/(block size)
        m = 2 * p if kind == "symplectic" else p
        k11 = ks[:, 0, 0]
        assert abs(k11.mean()) < 0.05
        assert abs(np.mean(np.abs(k11) ** 2) - 1 / m) < 0.05
    else:
        assert np.allclose(np.linalg.det(ks[:, :p, :p]), 1.0)


@pytest.mark.parametrize("kind,p,q", [("orthogonal", 1, 1), ("orthogonal", 2, 1), ("unitary", 2, 1),
                                      ("symplectic", 1, 1)])
def test_haar_density_matches_finite_differences(kind, p, q):
    d = decomposition(kind, p, q)
    rng = np.random.default_rng(8)
    y = 0.7 * rng.standard_normal((3, d.p.dim))
    got = haar_density_p(d, y)
    want = [haar_density_oracle(d, yy) for yy in y]
    assert np.allclose(got, want, rtol=1e-6)


def test_polynomial_jprime_detection():
    assert jprime_is_polynomial(polar_data(decomposition("unitary", 2, 1)))
    assert jprime_is_polynomial(polar_data(decomposition("orthogonal", 1, 1)))
    assert not jprime_is_polynomial(polar_data(decomposition("orthogonal", 1, 2)))


@pytest.mark.parametrize("kind,p,q", [("orthogonal", 1, 1), ("unitary", 1, 1)])
def test_polar_form_constant_is_A_independent(kind, p, q):
    d = decomposition(kind, p, q)
    As = [sample_A(d, seed=s) for s in (1, 2, 3, 4)]
    reps = verify_polar_form(d, polar_data(d), As, spec=MCSpec(samples=100_000))
    assert reps[0].status == "reference"
    assert all(r.status == "pass" for r in reps[1:]), [r.rel_dev for r in reps]


def test_rhs_value():
    d = decomposition("unitary", 1, 1)
    A = sample_A(d, seed=1)
    assert rhs_value(d, A) == pytest.approx(ps_constant(d) * math.exp(-np.real(trace_form(A, A))))
