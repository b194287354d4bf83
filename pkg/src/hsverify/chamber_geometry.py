"""Weyl chamber, its subdivision by root kernels, a face-to-face triangulation,
the rectified tanh profiles and the isotropic limit directions E_j.

Cones live in the coordinate space of an orthonormal basis of a maximal
Abelian subalgebra ``a``; a root is the row vector of its values on that basis.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .algebra_core import SpaceDecomposition, StructureError, comm, trace_form
from .root_system import ChamberData, RootSystem, phi

GEOM_TOL = 1e-9


def _rank(M: np.ndarray, tol: float = GEOM_TOL) -> int:
    M = np.atleast_2d(M)
    if M.size == 0:
        return 0
    return int(np.linalg.matrix_rank(M, tol=tol * max(1.0, np.abs(M).max())))


@dataclass
class Cone:
    """A polyhedral cone {x : A x >= 0} in R^dim, with lazily computed generators."""

    dim: int
    halfspaces: np.ndarray
    generators: Optional[np.ndarray] = None
    lineality_split: bool = False

    def __post_init__(self):
        self.halfspaces = np.asarray(self.halfspaces, dtype=float).reshape(-1, self.dim)

    @property
    def pointed(self) -> bool:
        return _rank(self.halfspaces) == self.dim

    def contains(self, x, tol: float = GEOM_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(self.halfspaces @ x >= -tol * max(1.0, np.linalg.norm(x))))

    def get_generators(self) -> np.ndarray:
        if self.generators is None:
            self.generators = generators_from_halfspaces(self)
        return self.generators


def weyl_chamber(g_roots: RootSystem) -> list:
    """The chamber {beta(H) >= 0 for positive g-roots} as a list of pointed cones.

    When the positive roots do not span the dual of ``a`` (Abelian or reductive
    g), the lineality space is split into coordinate orthants so that every
    returned cone is pointed; each such cone has ``lineality_split`` set.
    """
    r = g_roots.subalgebra.dim
    rows = g_roots.root_values() if g_roots.positive_roots else np.zeros((0, r))
    if _rank(rows) == r:
        return [Cone(r, rows)]
    if rows.size:
        _, sv, vt = np.linalg.svd(rows)
        k = _rank(rows)
        lin = vt[k:]
    else:
        lin = np.eye(r)
    cones = []
    for signs in itertools.product((1.0, -1.0), repeat=len(lin)):
        extra = np.array(signs)[:, None] * lin
        cones.append(Cone(r, np.vstack([rows, extra]), lineality_split=True))
    return cones


def _dedupe_rows(V: np.ndarray, tol: float = GEOM_TOL) -> np.ndarray:
    out = []
    for v in V:
        if not any(np.linalg.norm(v - w) < 1e-7 for w in out):
            out.append(v)
    return np.array(out).reshape(-1, V.shape[1])


def _sort_rows(V: np.ndarray) -> np.ndarray:
    if len(V) == 0:
        return V
    keys = np.round(V, 9)
    order = np.lexsort(tuple((-keys[:, k]) for k in range(V.shape[1] - 1, -1, -1)))
    return V[order]


def generators_from_halfspaces(cone: Cone) -> np.ndarray:
    """Extreme rays of a pointed cone by the double description method.

    Rays are unit vectors in a deterministic order. Adjacency of two rays is
    decided algebraically: the constraints tight on both must have rank dim-2.
    """
    A = cone.halfspaces
    d = cone.dim
    if d == 0:
        return np.zeros((0, 0))
    if _rank(A) < d:
        raise StructureError("cone is not pointed")
    scale = np.linalg.norm(A, axis=1, keepdims=True)
    A = A / np.where(scale > 0, scale, 1.0)
    # initial simplicial cone from d independent rows, chosen greedily in order
    basis_rows: list = []
    for i in range(len(A)):
        if _rank(A[basis_rows + [i]]) == len(basis_rows) + 1:
            basis_rows.append(i)
        if len(basis_rows) == d:
            break
    R = np.linalg.inv(A[basis_rows]).T  # rows r_k with A_b r_k = e_k
    rays = [r / np.linalg.norm(r) for r in R]
    processed = list(basis_rows)
    for i in range(len(A)):
        if i in basis_rows:
            continue
        a = A[i]
        vals = np.array([a @ r for r in rays])
        pos = [k for k, v in enumerate(vals) if v > GEOM_TOL]
        neg = [k for k, v in enumerate(vals) if v < -GEOM_TOL]
        zero = [k for k, v in enumerate(vals) if abs(v) <= GEOM_TOL]
        Ap = A[processed]
        tight = [np.abs(Ap @ r) <= GEOM_TOL for r in rays]
        new = []
        for p_ in pos:
            for n_ in neg:
                common = tight[p_] & tight[n_]
                if (_rank(Ap[common]) if common.any() else 0) != d - 2:
                    continue
                w = vals[p_] * rays[n_] - vals[n_] * rays[p_]
                new.append(w / np.linalg.norm(w))
        rays = [rays[k] for k in pos + zero] + new
        processed.append(i)
        if not rays:
            break
    V = _dedupe_rows(np.array(rays).reshape(-1, d))
    if _rank(V) < d:
        raise StructureError("cone has empty interior")
    return _sort_rows(V)


def extreme_rays_bruteforce(A: np.ndarray) -> np.ndarray:
    """Oracle: intersect every (d-1)-subset of facets and keep feasible rays."""
    A = np.asarray(A, dtype=float)
    d = A.shape[1]
    out = []
    for rows in itertools.combinations(range(len(A)), d - 1):
        M = A[list(rows)]
        if _rank(M) != d - 1:
            continue
        _, _, vt = np.linalg.svd(M)
        r = vt[-1]
        for cand in (r, -r):
            if np.all(A @ cand >= -GEOM_TOL):
                out.append(cand / np.linalg.norm(cand))
    return _sort_rows(_dedupe_rows(np.array(out).reshape(-1, d)))


def subdivide_by_root_kernels(chamber: Sequence[Cone], roots: np.ndarray) -> list:
    """Split each chamber cone by every root kernel that meets its interior."""
    cells = list(chamber)
    for alpha in np.atleast_2d(roots):
        if alpha.size == 0:
            continue
        nxt = []
        for cell in cells:
            G = cell.get_generators()
            v = G @ alpha
            if v.max() > GEOM_TOL and v.min() < -GEOM_TOL:
                for sgn in (1.0, -1.0):
                    c = Cone(cell.dim, np.vstack([cell.halfspaces, sgn * alpha]),
                             lineality_split=cell.lineality_split)
                    c.get_generators()
                    nxt.append(c)
            else:
                nxt.append(cell)
        cells = nxt
    return cells


# ---------------------------------------------------------------------------
# triangulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegionCell:
    c: int
    L: frozenset

    def contains(self, h, tol: float = 1e-12) -> bool:
        h = np.asarray(h, dtype=float)
        for i, hi in enumerate(h):
            if i in self.L:
                if hi < 1 - tol:
                    return False
            elif hi < -tol or hi > 1 + tol:
                return False
        return True


@dataclass
class TriangulatedChamber:
    dim: int
    chamber: list
    cells: list
    generators: np.ndarray  # M x dim, unit vectors
    cones: list  # sorted tuples of generator indices
    roots: np.ndarray  # positive Q-root values used for the sign table
    sign_table: np.ndarray = field(default=None)  # (n_roots, n_cones)
    generator_scale: str = "unit Euclidean length in orthonormal a-coordinates"

    def cone_matrix(self, c: int) -> np.ndarray:
        """Columns are the generators of cone c."""
        return self.generators[list(self.cones[c])].T

    def coefficients(self, c: int, x) -> np.ndarray:
        return np.linalg.solve(self.cone_matrix(c), np.asarray(x, dtype=float))

    def locate(self, x, tol: float = 1e-10) -> list:
        out = []
        for c in range(len(self.cones)):
            h = self.coefficients(c, x)
            if np.all(h >= -tol * max(1.0, np.linalg.norm(x))):
                out.append(c)
        return out

    def point(self, c: int, h) -> np.ndarray:
        return self.cone_matrix(c) @ np.asarray(h, dtype=float)

    def region_cells(self) -> list:
        out = []
        for c, I in enumerate(self.cones):
            for k in range(len(I) + 1):
                for L in itertools.combinations(range(len(I)), k):
                    out.append(RegionCell(c, frozenset(L)))
        return out


def _faces_tight(A: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Boolean incidence matrix: constraint k tight at generator i."""
    An = A / np.maximum(np.linalg.norm(A, axis=1, keepdims=True), 1e-300)
    return np.abs(G @ An.T) <= 1e-8


def _pull(face: tuple, gens: np.ndarray, incid: np.ndarray) -> list:
    """Pulling triangulation of the face spanned by global generator indices ``face``."""
    k = _rank(gens[list(face)])
    if len(face) == k:
        return [tuple(sorted(face))]
    v = min(face)
    facets = set()
    for row in range(incid.shape[1]):
        sub = tuple(i for i in face if incid[i, row])
        if len(sub) < k - 1 or v in sub:
            continue
        if _rank(gens[list(sub)]) == k - 1:
            facets.add(sub)
    # keep only maximal facets
    facets = [f for f in facets if not any(set(f) < set(g) for g in facets)]
    out = []
    for f in sorted(facets):
        for simplex in _pull(f, gens, incid):
            out.append(tuple(sorted((v,) + simplex)))
    return sorted(set(out))


def triangulate(cells: Sequence[Cone], roots: Optional[np.ndarray] = None) -> TriangulatedChamber:
    """Pulling triangulation of every cell with one global generator order.

    Using the same order on every cell makes the triangulations agree on
    shared faces, so the result is face-to-face without new generators.
    """
    dim = cells[0].dim
    allg = np.vstack([c.get_generators() for c in cells])
    gens = _sort_rows(_dedupe_rows(allg))
    cones = []
    for cell in cells:
        G = cell.get_generators()
        idx = tuple(sorted(int(np.argmin(np.linalg.norm(gens - g, axis=1))) for g in G))
        # the incidence must be computed on all global generators that lie in the cell
        incid = np.zeros((len(gens), len(cell.halfspaces)), dtype=bool)
        incid[list(idx)] = _faces_tight(cell.halfspaces, gens[list(idx)])
        cones.extend(_pull(idx, gens, incid))
    roots = np.zeros((0, dim)) if roots is None else np.atleast_2d(np.asarray(roots, dtype=float))
    tc = TriangulatedChamber(dim, list(cells), list(cells), gens, cones, roots)
    tc.sign_table = compute_sign_table(tc)
    return tc


def compute_sign_table(tc: TriangulatedChamber) -> np.ndarray:
    table = np.zeros((len(tc.roots), len(tc.cones)), dtype=int)
    for a, alpha in enumerate(tc.roots):
        for c, I in enumerate(tc.cones):
            vals = tc.generators[list(I)] @ alpha
            nz = np.sign(vals[np.abs(vals) > GEOM_TOL])
            if len(nz) and not np.all(nz == nz[0]):
                raise StructureError(f"root {a} changes sign on cone {c}")
            table[a, c] = int(nz[0]) if len(nz) else 0
    return table


def triangulated_chamber(cd: ChamberData) -> TriangulatedChamber:
    chamber = weyl_chamber(cd.g_roots)
    qroots = cd.q_roots.root_values() if cd.q_roots.positive_roots else np.zeros((0, cd.a.dim))
    cells = subdivide_by_root_kernels(chamber, qroots)
    return triangulate(cells, qroots)


# ---------------------------------------------------------------------------
# triangulation diagnostics
# ---------------------------------------------------------------------------

def covering_check(tc: TriangulatedChamber, n_samples: int = 4000, seed: int = 0) -> dict:
    """Monte Carlo check that almost every chamber point lies in exactly one cone."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n_samples, tc.dim))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    X *= rng.uniform(0, 1, (n_samples, 1)) ** (1.0 / tc.dim)
    in_chamber = np.array([any(c.contains(x, 0.0) for c in tc.chamber) for x in X])
    invs = [np.linalg.inv(tc.cone_matrix(c)) for c in range(len(tc.cones))]
    counts = np.zeros(n_samples, dtype=int)
    for Minv in invs:
        H = X @ Minv.T
        counts += np.all(H > 1e-12, axis=1)
    return {
        "chamber_fraction": float(in_chamber.mean()),
        "cone_fraction_sum": float(counts.sum() / n_samples),
        "multiply_covered": int(np.sum(counts > 1)),
        "uncovered_in_chamber": int(np.sum(in_chamber & (counts == 0))),
        "outside_covered": int(np.sum(~in_chamber & (counts > 0))),
    }


def face_to_face_check(tc: TriangulatedChamber, n_probe: int = 5, seed: int = 0) -> float:
    """Max distance of sampled common points of two cones from the span of shared generators."""
    from scipy.optimize import linprog

    rng = np.random.default_rng(seed)
    worst = 0.0
    for c1, c2 in itertools.combinations(range(len(tc.cones)), 2):
        G1, G2 = tc.cone_matrix(c1), tc.cone_matrix(c2)
        d = tc.dim
        common = sorted(set(tc.cones[c1]) & set(tc.cones[c2]))
        S = tc.generators[common].T if common else np.zeros((d, 0))
        # variables (u, v) >= 0 with G1 u = G2 v and sum u <= 1
        A_eq = np.hstack([G1, -G2])
        A_ub = np.hstack([np.ones((1, d)), np.zeros((1, d))])
        for _ in range(n_probe):
            obj = -rng.uniform(0, 1, 2 * d)
            res = linprog(obj, A_ub=A_ub, b_ub=[1.0], A_eq=A_eq, b_eq=np.zeros(d),
                          bounds=[(0, None)] * (2 * d), method="highs")
            if res.status != 0:
                continue
            x = G1 @ res.x[:d]
            if S.shape[1]:
                coef, *_ = np.linalg.lstsq(S, x, rcond=None)
                dist = np.linalg.norm(S @ coef - x)
            else:
                dist = np.linalg.norm(x)
            worst = max(worst, float(dist))
    return worst


def sign_constancy_check(tc: TriangulatedChamber, n_samples: int = 100, seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    for c in range(len(tc.cones)):
        H = rng.uniform(0.01, 1.0, (n_samples, tc.dim)) @ tc.cone_matrix(c).T
        for a, alpha in enumerate(tc.roots):
            s = np.sign(H @ alpha)
            if not (np.all(s == s[0]) and s[0] == tc.sign_table[a, c]):
                return False
    return True


# ---------------------------------------------------------------------------
# rectified profiles
# ---------------------------------------------------------------------------

def T_function(alpha_on_gens, h) -> float:
    """tanh(sum h^i/(1-h^i) alpha(H_i)), or sgn(alpha(H_j)) once some h^j >= 1 with alpha(H_j) != 0.

    ``alpha_on_gens`` are the values alpha(H_i) on the generators of one cone.
    """
    av = np.asarray(alpha_on_gens, dtype=float)
    h = np.asarray(h, dtype=float)
    active = np.abs(av) > GEOM_TOL
    sat = active & (h >= 1.0)
    if sat.any():
        return float(np.sign(av[sat][0]))
    arg = np.sum(np.where(active, h / (1.0 - np.where(active, h, 0.0)) * av, 0.0))
    return float(np.tanh(arg))


def T_function_cone(tc: TriangulatedChamber, a: int, c: int, h) -> float:
    return T_function(tc.generators[list(tc.cones[c])] @ tc.roots[a], h)


# ---------------------------------------------------------------------------
# E directions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EDirection:
    j: int
    matrix: np.ndarray
    coefficients: tuple  # e_j^alpha over the positive Q-roots


def E_direction(j: int, tc: TriangulatedChamber, cd: ChamberData, tol: float = 1e-9) -> EDirection:
    """sum over top roots at H_j of s_alpha + sgn(alpha(H_j)) phi(s_alpha)."""
    Hj = tc.generators[j]
    rs = cd.q_roots
    vals = np.array([a.values @ Hj for a in rs.positive_roots])
    top = np.abs(vals).max() if len(vals) else 0.0
    E = np.zeros_like(cd.s_dec.s0)
    coeffs = []
    for a, v, s_a in zip(rs.positive_roots, vals, cd.s_dec.parts):
        e = int(abs(v) > GEOM_TOL and abs(abs(v) - top) <= tol * max(1.0, top))
        coeffs.append(e)
        if e:
            E = E + s_a + np.sign(v) * phi(rs, a, s_a, cd.H_ref)
    if np.linalg.norm(E) < 1e-10:
        raise StructureError(f"E_{j} vanishes")
    return EDirection(j, E, tuple(coeffs))


def adjoint_exp(H: np.ndarray, X: np.ndarray, t: float, shift: float = 0.0) -> np.ndarray:
    """e^{-t shift} Ad(e^{tH}) X for hermitian H, computed in the eigenbasis of H."""
    d, U = np.linalg.eigh(H)
    Xt = U.conj().T @ X @ U
    expo = t * (d[:, None] - d[None, :]) - t * shift
    return U @ (np.exp(np.minimum(expo, 700.0)) * Xt) @ U.conj().T


def E_limit(j: int, tc: TriangulatedChamber, cd: ChamberData, t: Optional[float] = None,
            target: float = 1e-9) -> np.ndarray:
    """Numerical limit 2 Ad(e^{tH_j}) s / max_alpha e^{|alpha(tH_j)|}.

    The horizon is max(10, log(1/target)/gap) where gap separates the top
    |alpha(H_j)| from the next value, so the subleading terms are below ``target``.
    """
    Hj_coords = tc.generators[j]
    H = cd.a.element(Hj_coords)
    vals = np.sort(np.abs([a.values @ Hj_coords for a in cd.q_roots.positive_roots]))[::-1]
    top = vals[0]
    if t is None:
        lower = vals[vals < top - 1e-9]
        gap = top - (lower[0] if len(lower) else 0.0)
        t = max(10.0, np.log(1.0 / target) / gap)
    return 2.0 * adjoint_exp(H, cd.s_dec.reconstruct(), t, shift=top)


@dataclass
class EDirectionReport:
    min_trace: float
    n_samples: int
    gram_residual: float
    coefficients_binary: bool
    sign_fact_offdiag_min: float
    sign_fact_diag_min: float
    ok: bool


def random_k_elements(d: SpaceDecomposition, n: int, seed: int, scale: float = np.pi) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if d.k.dim == 0:
        return np.broadcast_to(np.eye(d.n, dtype=complex), (n, d.n, d.n)).copy()
    coords = rng.standard_normal((n, d.k.dim)) * scale
    return np.array([expm(d.k.element(c)) for c in coords])


def check_E_directions(d: SpaceDecomposition, cd: ChamberData, tc: TriangulatedChamber, A: np.ndarray,
                       k_samples: int = 100, seed: int = 0) -> EDirectionReport:
    """Positivity of Tr(E_i Ad(k)^{-1} A), isotropy within cones and the boundary sign facts."""
    As = A @ d.s
    if np.abs(As - As.conj().T).max() > 1e-10 or np.linalg.eigvalsh((As + As.conj().T) / 2).min() <= 0:
        raise ValueError("As must be hermitian positive definite")
    Es = [E_direction(j, tc, cd) for j in range(len(tc.generators))]
    ks = random_k_elements(d, k_samples, seed)
    mins = np.inf
    for k in ks:
        Ak = np.linalg.inv(k) @ A @ k
        for E in Es:
            mins = min(mins, float(np.real(trace_form(E.matrix, Ak))))
    gram = 0.0
    off = np.inf
    diag = np.inf
    s = d.s
    for I in tc.cones:
        for i in I:
            Hi = cd.a.element(tc.generators[i])
            diag = min(diag, float(np.real(trace_form(-comm(Hi, s), Es[i].matrix))))
            for j in I:
                gram = max(gram, abs(trace_form(Es[i].matrix, Es[j].matrix)))
                if i != j:
                    Hj = cd.a.element(tc.generators[j])
                    off = min(off, float(np.real(trace_form(-comm(Hj, s), Es[i].matrix))))
    binary = all(c in (0, 1) for E in Es for c in E.coefficients)
    off = off if np.isfinite(off) else 0.0
    ok = mins > 0 and gram < 1e-10 and binary and off >= -1e-10 and diag > 0
    return EDirectionReport(mins, len(ks), gram, binary, off, diag, ok)
