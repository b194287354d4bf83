"""Integration domains as explicit maps with signed Jacobians.

Coordinates on Q (and on its complexification) are complex-linear, taken
with respect to the stored basis of Q (Q+ first, then Q-). Because that
basis is orthogonal, coordinate k of W is Tr(B_k^dagger W) / |B_k|^2.
Parameter spaces are ordered with the p-type factor (or Q-) first, then Q+.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .algebra_core import MatrixSubspace, SpaceDecomposition, comm, trace_form
from .chamber_geometry import E_direction, T_function, TriangulatedChamber
from .root_system import ChamberData, phi


# ---------------------------------------------------------------------------
# linear algebra kernels (batched over leading axes)
# ---------------------------------------------------------------------------

def dagger(X: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(X, -1, -2))


def herm_eig(Y: np.ndarray):
    """Eigen-decomposition of (batched) hermitian matrices."""
    return np.linalg.eigh((Y + dagger(Y)) / 2)


def exp_herm(Y: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """exp(scale * Y) for hermitian Y through its eigenbasis."""
    w, U = herm_eig(Y)
    return (U * np.exp(scale * w)[..., None, :]) @ dagger(U)


def conj_by_exp(w: np.ndarray, U: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Ad(e^Y) X with Y = U diag(w) U^dagger; leading axes broadcast."""
    Ud = dagger(U)
    fac = np.exp(w[..., :, None] - w[..., None, :])
    return U @ (fac * (Ud @ X @ U)) @ Ud


def dexp_right(w: np.ndarray, U: np.ndarray, P: np.ndarray) -> np.ndarray:
    """e^{-Y} d/dt e^{Y+tP} = ((1 - e^{-ad Y}) / ad Y) P in the eigenbasis of Y.

    ``P`` has shape (..., m, n, n) with m directions; returns the same shape.
    """
    diff = w[..., :, None] - w[..., None, :]
    small = np.abs(diff) < 1e-8
    safe = np.where(small, 1.0, diff)
    gam = np.where(small, 1.0 - diff / 2, -np.expm1(-safe) / safe)
    Ue, Ude = U[..., None, :, :], dagger(U)[..., None, :, :]
    return Ue @ (gam[..., None, :, :] * (Ude @ P @ Ue)) @ Ude


def q_coords(Qsp: MatrixSubspace, W: np.ndarray) -> np.ndarray:
    """Complex-linear coordinates of W in the orthogonal basis of ``Qsp``."""
    norms = Qsp.norms2()
    return np.einsum("kij,...ij->...k", Qsp.basis.conj(), W) / norms


def theta_odd(s: np.ndarray, X: np.ndarray) -> np.ndarray:
    return (X - s @ X @ s) / 2


# ---------------------------------------------------------------------------
# regulator and integrand
# ---------------------------------------------------------------------------

def regulator_chi(Q: np.ndarray, eps: float, s: np.ndarray) -> float:
    """exp((eps/4) Tr[Q - theta(Q)]^2) with theta(Q) = s Q s."""
    if eps <= 0:
        raise ValueError("the regulator needs eps > 0")
    D = Q - s @ Q @ s
    return float(np.real(np.exp(eps / 4 * np.trace(D @ D))))


def integrand_g(Q: np.ndarray, A: np.ndarray) -> complex:
    """exp(-Tr Q^2 - 2i Tr(QA))."""
    Q = np.asarray(Q)
    A = np.asarray(A)
    if Q.shape != A.shape:
        raise ValueError("Q and A must have equal shapes")
    return complex(np.exp(-trace_form(Q, Q) - 2j * trace_form(Q, A)))


# ---------------------------------------------------------------------------
# parametrizations
# ---------------------------------------------------------------------------

def ps_map(d: SpaceDecomposition, y, x) -> np.ndarray:
    """e^Y X e^{-Y} with Y = sum y_i P_i in p and X = sum x_j X_j in Q+."""
    Y = d.p.element(np.asarray(y, dtype=float))
    X = d.Qplus.element(np.asarray(x, dtype=float))
    w, U = herm_eig(Y)
    return conj_by_exp(w, U, X)


def sw_map(d: SpaceDecomposition, y, x, b: float) -> np.ndarray:
    """X - i b e^Y s e^{-Y}."""
    if not b > 0:
        raise ValueError("b must be positive")
    Y = d.p.element(np.asarray(y, dtype=float))
    X = d.Qplus.element(np.asarray(x, dtype=float))
    w, U = herm_eig(Y)
    return X - 1j * b * conj_by_exp(w, U, d.s)


def euclid_map(d: SpaceDecomposition, yt, x) -> np.ndarray:
    """X + i Y~ with Y~ in Q- and X in Q+."""
    return d.Qplus.element(np.asarray(x, dtype=float)) + 1j * d.Qminus.element(np.asarray(yt, dtype=float))


def _split_Qplus(cd: ChamberData, X: np.ndarray):
    rs = cd.q_roots
    X0 = rs.zero_space.project(X)
    parts = [a.plus_space.project(X) for a in rs.positive_roots]
    return X0, parts


def ps_rectified_map(d: SpaceDecomposition, cd: ChamberData, tc: TriangulatedChamber, c: int,
                     h, k: np.ndarray, x, check_cell: bool = True) -> np.ndarray:
    """Ad(k)(X_0 + sum_alpha (X_alpha + T_alpha,c(H) phi(X_alpha)))."""
    h = np.asarray(h, dtype=float)
    if check_cell and (np.any(h < -1e-12) or np.any(h > 1 + 1e-12)):
        raise ValueError("H lies outside the cell with L empty")
    X = d.Qplus.element(np.asarray(x, dtype=float))
    X0, parts = _split_Qplus(cd, X)
    out = X0.copy()
    for a_idx, (a, Xa) in enumerate(zip(cd.q_roots.positive_roots, parts)):
        T = T_function(tc.generators[list(tc.cones[c])] @ a.values, h)
        out = out + Xa + T * phi(cd.q_roots, a, Xa, cd.H_ref)
    return k @ out @ np.linalg.inv(k)


def eps_split(d: SpaceDecomposition, cd: ChamberData, tc: TriangulatedChamber, c: int, L,
              t: float, h, k: np.ndarray, x):
    """The two summands (Xi, Upsilon) of the homotopy EPS_{L,c} at time t."""
    h = np.asarray(h, dtype=float)
    I = list(tc.cones[c])
    L = set(L)
    for i in range(len(I)):
        if i in L and h[i] < 1 - 1e-12:
            raise ValueError("h^i must be >= 1 on L")
        if i not in L and (h[i] < -1e-12 or h[i] > 1 + 1e-12):
            raise ValueError("h^i must lie in [0,1] off L")
    X = d.Qplus.element(np.asarray(x, dtype=float))
    X0, parts = _split_Qplus(cd, X)
    kinv = np.linalg.inv(k)
    inner = X0.copy()
    for a, Xa in zip(cd.q_roots.positive_roots, parts):
        T = T_function(tc.generators[I] @ a.values, h)
        inner = inner + Xa + (1 - t) * T * phi(cd.q_roots, a, Xa, cd.H_ref)
    Xi = k @ inner @ kinv
    Ups = np.zeros_like(Xi)
    for i in sorted(L):
        j = I[i]
        Ej = E_direction(j, tc, cd).matrix
        Hj = cd.a.element(tc.generators[j])
        Ups = Ups + (h[i] - 1) * ((1 - t) * Ej + 2 * t * comm(Hj, d.s))
    Ups = -1j * (k @ Ups @ kinv)
    return Xi, Ups


def eps_map(d, cd, tc, c, L, t, h, k, x) -> np.ndarray:
    Xi, Ups = eps_split(d, cd, tc, c, L, t, h, k, x)
    return Xi + Ups


def esw_map(d: SpaceDecomposition, cd: ChamberData, t: float, H_coords, k: np.ndarray, x,
            b: float) -> np.ndarray:
    """Homotopy from SW (t=0) to X - i b [k H k^{-1}, s] (t=1)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if not b > 0:
        raise ValueError("b must be positive")
    H_coords = np.asarray(H_coords, dtype=float)
    X = d.Qplus.element(np.asarray(x, dtype=float))
    sd = cd.s_dec
    inner = (1 - t) * sd.s0
    for a, s_a in zip(cd.q_roots.positive_roots, sd.parts):
        aH = float(a.values @ H_coords)
        u = (1 - t) * aH
        ratio = np.sinh(u) / (1 - t) if t < 1 else aH
        inner = inner + (np.cosh(u) - t) * s_a + ratio * phi(cd.q_roots, a, s_a, cd.H_ref)
    return X - 1j * b * (k @ inner @ np.linalg.inv(k))


# ---------------------------------------------------------------------------
# domain maps and Jacobians
# ---------------------------------------------------------------------------

@dataclass
class DomainMap:
    name: str
    parameter_space: list
    fn: Callable[[np.ndarray], np.ndarray]
    target: MatrixSubspace
    analytic_jacobian: Optional[Callable[[np.ndarray], float]] = None

    @property
    def dim(self) -> int:
        return sum(sp.dim for sp in self.parameter_space)

    def __call__(self, point) -> np.ndarray:
        return self.fn(np.asarray(point, dtype=float))


def _splitter(d1: int):
    return lambda v: (v[:d1], v[d1:])


def ps_domain(d: SpaceDecomposition) -> DomainMap:
    sp = _splitter(d.p.dim)
    return DomainMap("PS", [d.p, d.Qplus], lambda v: ps_map(d, *sp(v)), d.Q,
                     lambda v: ps_jacobian_analytic(d, *sp(v)))


def sw_domain(d: SpaceDecomposition, b: float) -> DomainMap:
    sp = _splitter(d.p.dim)
    return DomainMap(f"SW({b})", [d.p, d.Qplus], lambda v: sw_map(d, *sp(v), b), d.Q,
                     lambda v: sw_jacobian_analytic(d, sp(v)[0], b))


def euclid_domain(d: SpaceDecomposition) -> DomainMap:
    sp = _splitter(d.Qminus.dim)
    return DomainMap("Euclid", [d.Qminus, d.Qplus], lambda v: euclid_map(d, *sp(v)), d.Q,
                     lambda v: euclid_orientation(d))


def signed_jacobian(dmap: DomainMap, point, step: float = 1e-5) -> complex:
    """Determinant of the differential in the stored oriented coordinates.

    Central differences with one Richardson refinement (steps h and h/2).
    The value is complex for maps into the complexification of Q.
    """
    point = np.asarray(point, dtype=float)
    m = dmap.dim
    if m != dmap.target.dim:
        raise ValueError("domain and target dimensions differ")

    def diff(hh):
        cols = []
        for i in range(m):
            e = np.zeros(m)
            e[i] = hh
            cols.append((q_coords(dmap.target, dmap(point + e)) - q_coords(dmap.target, dmap(point - e))) / (2 * hh))
        return np.array(cols).T

    D1, D2 = diff(step), diff(step / 2)
    D = (4 * D2 - D1) / 3
    if not np.all(np.isfinite(D)):
        raise FloatingPointError("non-finite Jacobian entries")
    det = complex(np.linalg.det(D)) if m else 1.0 + 0j
    return det


def ps_jacobian_columns(d: SpaceDecomposition, y):
    """Matrices L_i (dim Q x dim Q+) with d/dy_i coords(PS) = L_i x, and the x-columns."""
    Y = d.p.element(np.asarray(y, dtype=float))
    w, U = herm_eig(Y)
    Psi = dexp_right(w, U, d.p.basis)  # (dp, n, n)
    Xb = d.Qplus.basis
    brk = Psi[:, None] @ Xb[None] - Xb[None] @ Psi[:, None]  # (dp, d+, n, n)
    Ls = q_coords(d.Q, conj_by_exp(w, U, brk))  # (dp, d+, dimQ)
    V = conj_by_exp(w, U, Xb)  # (d+, n, n)
    return np.swapaxes(Ls, -1, -2), q_coords(d.Q, V).T


def ps_jacobian_analytic(d: SpaceDecomposition, y, x) -> float:
    Ls, Vc = ps_jacobian_columns(d, y)
    x = np.asarray(x, dtype=float)
    M = np.hstack([np.array([L @ x for L in Ls]).T.reshape(d.Q.dim, d.p.dim), Vc])
    return float(np.real(np.linalg.det(M)))


def sw_jacobian_analytic(d: SpaceDecomposition, y, b: float) -> complex:
    Y = d.p.element(np.asarray(y, dtype=float))
    w, U = herm_eig(Y)
    Psi = dexp_right(w, U, d.p.basis)
    brk = Psi @ d.s - d.s @ Psi
    ycols = -1j * b * q_coords(d.Q, conj_by_exp(w, U, brk))  # (dp, dimQ)
    xcols = q_coords(d.Q, d.Qplus.basis)
    M = np.vstack([ycols, xcols]).T
    return complex(np.linalg.det(M))


def euclid_orientation(d: SpaceDecomposition) -> complex:
    """Determinant of (Y~, X) -> (X, iY~) in Q coordinates: (-1)^{m d+} i^m."""
    m, dp = d.Qminus.dim, d.Qplus.dim
    return complex((-1) ** (m * dp) * 1j ** m)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def xi_form_bound(eps: float, T) -> tuple:
    """(eps(2-eps), 1-(1-eps)^2 T^2): the second lies in [first, 1] for |T| <= 1."""
    T = np.asarray(T, dtype=float)
    return eps * (2 - eps), 1 - (1 - eps) ** 2 * T ** 2


def cauchy_riemann_residual(A: np.ndarray, Q: np.ndarray, V: np.ndarray, h: float = 1e-6) -> float:
    """|d/dz g(Q + zV) along real minus (1/i) along imaginary direction| / |g|."""
    f = lambda z: integrand_g(Q + z * V, A)
    dre = (f(h) - f(-h)) / (2 * h)
    dim = (f(1j * h) - f(-1j * h)) / (2j * h)
    return abs(dre - dim) / max(abs(f(0)), 1e-300)


@dataclass
class CodimReport:
    applicable: bool
    face_deficiencies: list
    interior_deficiencies: list
    ok: bool
    note: str = ""


def _rectified_differential(d, cd, tc, c, h, k0, x, step=1e-6):
    """Real differential of (h, kappa, x) -> coords of ps_rectified_map with k = k0 exp(kappa)."""
    from scipy.linalg import expm

    r, dk, dq = cd.a.dim, d.k.dim, d.Qplus.dim
    m = r + dk + dq

    def f(v):
        hh = v[:r]
        kap = d.k.element(v[r:r + dk]) if dk else np.zeros((d.n, d.n))
        k = k0 @ expm(kap)
        return np.real(q_coords(d.Q, ps_rectified_map(d, cd, tc, c, hh, k, v[r + dk:], check_cell=False)))

    base = np.concatenate([h, np.zeros(dk), x])
    cols = []
    for i in range(m):
        e = np.zeros(m)
        e[i] = step
        cols.append((f(base + e) - f(base - e)) / (2 * step))
    return np.array(cols).T


def boundary_codim_check(d: SpaceDecomposition, cd: ChamberData, tc: TriangulatedChamber,
                         n_points: int = 10, seed: int = 0, rel_tol: float = 1e-7) -> CodimReport:
    """Rank deficiency of the rectified PS map restricted to walls of the Weyl chamber.

    On a face the normal coordinate is dropped and the deficiency is
    dim Q minus the numerical rank of the restricted differential; at
    interior points the full differential is used.
    """
    if cd.a.dim < 2:
        return CodimReport(False, [], [], True, "not applicable: rank of a is below 2")
    from .chamber_geometry import random_k_elements

    rng = np.random.default_rng(seed)
    walls = cd.g_roots.root_values() if cd.g_roots.positive_roots else np.zeros((0, cd.a.dim))
    face_pts = []
    for c, I in enumerate(tc.cones):
        for pos, gi in enumerate(I):
            # face of cone c opposite to generator gi lies in a chamber wall if every
            # other generator of the cone is annihilated by some positive g-root
            others = [g for g in I if g != gi]
            G = tc.generators[others]
            if any(np.all(np.abs(G @ beta) < 1e-9) for beta in walls):
                face_pts.append((c, pos))
    if not face_pts:
        return CodimReport(False, [], [], True, "no chamber walls among cone faces")
    face_def, int_def = [], []
    ks = random_k_elements(d, 2 * n_points, seed + 1)
    for i in range(n_points):
        c, pos = face_pts[i % len(face_pts)]
        # stay away from h -> 1 where the tanh profiles saturate numerically
        h = rng.uniform(0.1, 0.6, cd.a.dim)
        h[pos] = 0.0
        x = rng.standard_normal(d.Qplus.dim)
        # restrict to the face: drop the coordinate normal to it
        D = np.delete(_rectified_differential(d, cd, tc, c, h, ks[i], x), pos, axis=1)
        sv = np.linalg.svd(D, compute_uv=False)
        face_def.append(int(d.Q.dim - np.sum(sv > rel_tol * sv.max())))
        h2 = rng.uniform(0.1, 0.6, cd.a.dim)
        D2 = _rectified_differential(d, cd, tc, c, h2, ks[n_points + i], x)
        sv2 = np.linalg.svd(D2, compute_uv=False)
        int_def.append(int(d.Q.dim - np.sum(sv2 > rel_tol * sv2.max())))
    ok = min(face_def) >= 2 and max(int_def) == 0
    return CodimReport(True, face_def, int_def, ok)
