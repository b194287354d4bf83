"""Maximal Abelian subalgebras, root space decompositions and the polar Jacobian."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .algebra_core import (
    MatrixSubspace,
    SpaceDecomposition,
    StructureError,
    comm,
    orthogonal_basis,
    realify,
    trace_form,
)

CLUSTER_REL_GAP = 1e-6
ROOT_EQ_TOL = 1e-8
EIG_RESIDUAL_TOL = 1e-9


@dataclass(frozen=True)
class AbelianSubalgebra:
    ambient: MatrixSubspace
    basis: MatrixSubspace
    contains_s: bool = False

    @property
    def dim(self) -> int:
        return self.basis.dim

    def element(self, coords) -> np.ndarray:
        return self.basis.element(coords)

    def coords(self, H) -> np.ndarray:
        return self.basis.coords(H)


def _null_space(A: np.ndarray, rel_tol: float = 1e-9) -> np.ndarray:
    if A.size == 0:
        return np.eye(A.shape[1])
    u, sv, vt = np.linalg.svd(A)
    smax = sv.max() if sv.size else 0.0
    rank = int(np.sum(sv > rel_tol * max(smax, 1.0)))
    return vt[rank:].T


def centralizer(ambient: MatrixSubspace, elements: Sequence[np.ndarray]) -> np.ndarray:
    """Coefficient vectors (columns) spanning the centralizer of ``elements`` inside ``ambient``."""
    if not len(elements):
        return np.eye(ambient.dim)
    rows = []
    for H in elements:
        rows.append(realify(np.array([comm(B, H) for B in ambient.basis])).T)
    return _null_space(np.vstack(rows))


def maximal_abelian(ambient: MatrixSubspace, must_contain: Optional[np.ndarray] = None,
                    prefer: Optional[Sequence[np.ndarray]] = None, seed: int = 0,
                    normalize: str = "frobenius") -> AbelianSubalgebra:
    """Greedy construction of a maximal Abelian subalgebra of ``ambient``.

    The subalgebra is seeded with ``must_contain`` (when given) and then
    extended by elements of the current centralizer. Candidates from
    ``prefer`` are tried first, then the ambient basis, then random
    centralizer elements drawn from a seeded generator.

    ``normalize`` is ``"frobenius"`` (orthonormal basis under Re Tr(X^dagger Y))
    or ``"none"`` (keep the chosen elements as they are).
    """
    n = ambient.n
    rng = np.random.default_rng(seed)
    chosen: list = []
    if must_contain is not None:
        must_contain = np.asarray(must_contain, dtype=complex)
        if not ambient.contains(must_contain):
            raise StructureError("must_contain is not in the ambient space")
        chosen.append(ambient.project(must_contain))
    candidates = [np.asarray(c, dtype=complex) for c in (prefer or [])] + list(ambient.basis)

    def independent(X):
        if not chosen:
            return np.linalg.norm(X) > 1e-9
        span = MatrixSubspace(n, np.array(chosen))
        return span.residual(X) > 1e-9 * max(1.0, np.linalg.norm(X))

    for _ in range(ambient.dim + 1):
        C = centralizer(ambient, chosen)
        if C.shape[1] <= len(chosen):
            break
        cent = MatrixSubspace(n, np.array([ambient.element(c) for c in C.T]))
        pick = None
        for X in candidates:
            if ambient.contains(X) and cent.contains(X) and independent(X):
                pick = X
                break
        if pick is None:
            for _attempt in range(20):
                X = cent.element(rng.standard_normal(cent.dim))
                if chosen:
                    X = X - MatrixSubspace(n, np.array(chosen)).project(X)
                if independent(X):
                    pick = X
                    break
        if pick is None:
            break
        chosen.append(pick)
    if normalize == "frobenius":
        basis = orthogonal_basis(np.array(chosen), n, normalize="frobenius") if chosen else \
            np.zeros((0, n, n), dtype=complex)
    else:
        basis = np.array(chosen) if chosen else np.zeros((0, n, n), dtype=complex)
    sub = MatrixSubspace(n, basis, 1, "abelian")
    return AbelianSubalgebra(ambient, sub, must_contain is not None)


def is_maximal(sub: AbelianSubalgebra) -> bool:
    C = centralizer(sub.ambient, list(sub.basis.basis))
    return C.shape[1] == sub.dim


def commutator_residual(sub: AbelianSubalgebra) -> float:
    worst = 0.0
    b = sub.basis.basis
    for i in range(len(b)):
        for j in range(i + 1, len(b)):
            worst = max(worst, float(np.abs(comm(b[i], b[j])).max()))
    return worst


# ---------------------------------------------------------------------------
# roots
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Root:
    """A root: its values on the subalgebra basis and its (real) root space."""

    values: np.ndarray
    multiplicity: int
    root_space: MatrixSubspace
    classification: str
    plus_space: Optional[MatrixSubspace] = None
    minus_space: Optional[MatrixSubspace] = None

    def __call__(self, coords) -> np.ndarray:
        return np.asarray(coords) @ self.values

    def matches(self, values, tol: float = ROOT_EQ_TOL) -> bool:
        return float(np.linalg.norm(self.values - np.asarray(values))) < tol


@dataclass(frozen=True)
class RootSystem:
    subalgebra: AbelianSubalgebra
    module: MatrixSubspace
    roots: tuple
    zero_space: MatrixSubspace
    positive_roots: tuple = ()
    positivity_rule: dict = field(default_factory=dict)
    classification: str = ""

    def root_values(self, positive_only: bool = True) -> np.ndarray:
        rs = self.positive_roots if positive_only else self.roots
        r = self.subalgebra.dim
        return np.array([a.values for a in rs]).reshape(len(rs), r)

    def multiplicities(self, positive_only: bool = True) -> list:
        rs = self.positive_roots if positive_only else self.roots
        return [a.multiplicity for a in rs]

    def completeness_defect(self) -> int:
        return self.module.dim - self.zero_space.dim - sum(a.multiplicity for a in self.roots)


def _orthonormal_coords(module: MatrixSubspace) -> np.ndarray:
    """Cholesky factor L with Gram = L L^T, used to symmetrize ad matrices."""
    return np.linalg.cholesky(module.gram())


def ad_matrix(H: np.ndarray, module: MatrixSubspace) -> np.ndarray:
    """Matrix of ad(H) on ``module`` in its stored coordinates (columns are images)."""
    return np.array([module.coords(comm(H, B)) for B in module.basis]).T.reshape(module.dim, module.dim)


def root_decomposition(sub: AbelianSubalgebra, module: MatrixSubspace, classification: str = "",
                       seed: int = 0, max_retries: int = 8, theta_s: Optional[np.ndarray] = None
                       ) -> RootSystem:
    """Simultaneous eigenspace decomposition of ``module`` under ad(sub).

    When ``theta_s`` (the matrix s) is given, each root also carries the
    theta-even and theta-odd parts of the sum of the alpha and -alpha spaces.
    """
    n = module.n
    r = sub.dim
    if module.dim == 0:
        return RootSystem(sub, module, (), MatrixSubspace(n, np.zeros((0, n, n))), (), {}, classification)
    for H in sub.basis.basis:
        for B in module.basis:
            if module.residual(comm(H, B)) > 1e-9 * max(1.0, np.linalg.norm(H) * np.linalg.norm(B)):
                raise StructureError("ad(subalgebra) does not preserve the module")
    L = _orthonormal_coords(module)
    Linv = np.linalg.inv(L)
    # symmetric representatives: S = L^T M L^{-T}
    sym = [L.T @ ad_matrix(H, module) @ Linv.T for H in sub.basis.basis]
    sym = [(S + S.T) / 2 for S in sym]
    rng = np.random.default_rng(seed)
    for _attempt in range(max_retries):
        w = rng.uniform(0.5, 1.5, size=r) if r else np.zeros(0)
        S_gen = sum(wk * Sk for wk, Sk in zip(w, sym)) if r else np.zeros((module.dim,) * 2)
        evals, evecs = np.linalg.eigh(S_gen)
        scale = max(1.0, np.abs(evals).max())
        groups = [[0]]
        for i in range(1, len(evals)):
            if evals[i] - evals[i - 1] > CLUSTER_REL_GAP * scale:
                groups.append([i])
            else:
                groups[-1].append(i)
        clusters = []
        ok = True
        for g in groups:
            V = evecs[:, g]
            vals = np.zeros(r)
            for k, Sk in enumerate(sym):
                blk = V.T @ Sk @ V
                vals[k] = np.trace(blk) / len(g)
                if np.abs(blk - vals[k] * np.eye(len(g))).max() > EIG_RESIDUAL_TOL * scale:
                    ok = False
            clusters.append((vals, V))
        if ok:
            break
    else:
        raise StructureError("could not find a generic element separating the roots")

    zero_vecs = []
    roots = []
    for vals, V in clusters:
        C = Linv.T @ V  # back to stored coordinates
        mats = np.array([module.element(c) for c in C.T])
        if np.linalg.norm(vals) < ROOT_EQ_TOL * max(1.0, scale):
            zero_vecs.extend(mats)
            continue
        space = MatrixSubspace(n, orthogonal_basis(mats, n), 1, "root")
        roots.append((vals, space))
    zero = MatrixSubspace(n, orthogonal_basis(np.array(zero_vecs), n) if zero_vecs
                          else np.zeros((0, n, n)), 1, "zero")
    out = []
    for vals, space in roots:
        plus = minus = None
        if theta_s is not None:
            neg = [sp for v, sp in roots if np.linalg.norm(v + vals) < ROOT_EQ_TOL * max(1.0, scale)]
            if not neg:
                raise StructureError("root without a negative partner")
            both = space.direct_sum(neg[0])
            s = theta_s
            plus = MatrixSubspace(n, orthogonal_basis((both.basis + s @ both.basis @ s) / 2, n), 1, "plus")
            minus = MatrixSubspace(n, orthogonal_basis((both.basis - s @ both.basis @ s) / 2, n), 1, "minus")
        out.append(Root(np.round(vals, 13) + 0.0, space.dim, space, classification, plus, minus))
    return RootSystem(sub, module, tuple(out), zero, (), {}, classification)


def positive_system(rs: RootSystem, rule: str = "generic-functional",
                    s_coords: Optional[np.ndarray] = None) -> RootSystem:
    """Mark exactly one of each pair {alpha, -alpha} as positive.

    ``generic-functional`` uses v = (pi^-1, pi^-2, ...) and declares alpha
    positive when v . alpha > 0. ``beta-of-s`` declares alpha positive when
    alpha(s) > 0 and needs the coordinates of s in the subalgebra basis.
    """
    r = rs.subalgebra.dim
    if rule == "generic-functional":
        v = np.pi ** -np.arange(1, r + 1)
    elif rule == "beta-of-s":
        if s_coords is None:
            raise ValueError("beta-of-s rule needs the coordinates of s")
        v = np.asarray(s_coords, dtype=float)
    else:
        raise ValueError(f"unknown positivity rule {rule!r}")
    pos = []
    for a in rs.roots:
        val = float(a.values @ v)
        if abs(val) < 1e-10 * max(1.0, np.linalg.norm(a.values)):
            if rule == "beta-of-s":
                raise StructureError(f"root {a.values.tolist()} vanishes on s")
            raise StructureError("generic functional is orthogonal to a root")
        if val > 0:
            pos.append(a)
    record = {"rule": rule, "functional": [float(x) for x in v]}
    return RootSystem(rs.subalgebra, rs.module, rs.roots, rs.zero_space, tuple(pos), record,
                      rs.classification)


# ---------------------------------------------------------------------------
# phi and the decomposition of s
# ---------------------------------------------------------------------------

def reference_element(rs: RootSystem, seed: int = 0, min_abs: float = 1e-4) -> np.ndarray:
    """Random integer combination H of the subalgebra basis with all |alpha(H)| > min_abs."""
    rng = np.random.default_rng(seed)
    r = rs.subalgebra.dim
    vals = rs.root_values(positive_only=False)
    for _ in range(1000):
        c = rng.integers(-5, 6, size=r).astype(float)
        if len(vals) == 0 or np.abs(vals @ c).min() > min_abs:
            return c
    raise StructureError("no generic reference element found")


def phi(rs: RootSystem, alpha: Root, Z: np.ndarray, H_coords: Optional[np.ndarray] = None) -> np.ndarray:
    """alpha(H)^{-1} [H, Z]: swaps the theta-even and theta-odd parts of a root pair."""
    if H_coords is None:
        H_coords = reference_element(rs)
    aH = float(alpha.values @ H_coords)
    if abs(aH) < 1e-12:
        raise StructureError("alpha vanishes on the reference element")
    H = rs.subalgebra.element(H_coords)
    return comm(H, Z) / aH


@dataclass(frozen=True)
class SDecomposition:
    s0: np.ndarray
    parts: tuple  # one matrix per positive root, same order as rs.positive_roots

    def reconstruct(self) -> np.ndarray:
        return self.s0 + sum(self.parts, np.zeros_like(self.s0))


def decompose_s(rs: RootSystem, s: np.ndarray) -> SDecomposition:
    """s = s0 + sum of its projections onto the theta-even root parts."""
    s0 = rs.zero_space.project(s)
    parts = []
    for a in rs.positive_roots:
        if a.plus_space is None:
            raise StructureError("root system lacks theta-split root spaces")
        parts.append(a.plus_space.project(s))
    return SDecomposition(s0, tuple(parts))


# ---------------------------------------------------------------------------
# Cartan data for the polar decomposition
# ---------------------------------------------------------------------------

def preset_h_candidates(d: SpaceDecomposition) -> Optional[list]:
    cls = d.cls
    if cls.preset is None:
        return None
    m = cls.p + cls.q
    out = []
    for i in range(m):
        e = np.zeros((m, m))
        e[i, i] = 1.0
        out.append(np.kron(e, np.eye(2)) if cls.preset == "symplectic" else e.astype(complex))
    return [np.asarray(x, dtype=complex) for x in out]


@dataclass(frozen=True)
class PolarData:
    """Roots of k+Q+ and of p+Q- under a maximal Abelian h in Q+ containing s."""

    h: AbelianSubalgebra
    compact: RootSystem
    noncompact: RootSystem
    s_coords: np.ndarray


def polar_data(d: SpaceDecomposition, seed: int = 0) -> PolarData:
    cands = preset_h_candidates(d)
    if cands is not None:
        h = maximal_abelian(d.Qplus, None, prefer=cands, seed=seed, normalize="none")
        h = AbelianSubalgebra(h.ambient, h.basis, h.basis.contains(d.s))
    else:
        h = maximal_abelian(d.Qplus, d.s, seed=seed, normalize="frobenius")
    if not h.basis.contains(d.s):
        raise StructureError("h does not contain s")
    kq = d.k.direct_sum(d.Qplus, "k+Q+")
    pq = d.p.direct_sum(d.Qminus, "p+Q-")
    s_coords = h.coords(d.s)
    compact = positive_system(root_decomposition(h, kq, "k+Q+ root", seed), "generic-functional")
    noncompact = positive_system(root_decomposition(h, pq, "p+Q- root", seed), "beta-of-s", s_coords)
    return PolarData(h, compact, noncompact, s_coords)


@dataclass
class JacobianValue:
    value: float
    factors: list  # (classification, root values, multiplicity, factor)


def jacobian_Jprime(pd: PolarData, lam) -> JacobianValue:
    """Product of |alpha(lam)|^d over compact positive roots and alpha(lam)^d over non-compact ones."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (pd.h.dim,):
        raise ValueError(f"lambda must have length {pd.h.dim}, got {lam.shape}")
    value = 1.0
    factors = []
    for a in pd.compact.positive_roots:
        f = abs(float(a.values @ lam)) ** a.multiplicity
        factors.append(("k+Q+", a.values.tolist(), a.multiplicity, f))
        value *= f
    for a in pd.noncompact.positive_roots:
        f = float(a.values @ lam) ** a.multiplicity
        factors.append(("p+Q-", a.values.tolist(), a.multiplicity, f))
        value *= f
    return JacobianValue(value, factors)


def jacobian_Jprime_batch(pd: PolarData, lams: np.ndarray) -> np.ndarray:
    lams = np.atleast_2d(np.asarray(lams, dtype=float))
    out = np.ones(len(lams))
    for a in pd.compact.positive_roots:
        out *= np.abs(lams @ a.values) ** a.multiplicity
    for a in pd.noncompact.positive_roots:
        out *= (lams @ a.values) ** a.multiplicity
    return out


def weyl_generators(p: int, q: int) -> list:
    """Adjacent transpositions generating S_p x S_q acting on entry indices."""
    gens = []
    for i in range(p - 1):
        perm = list(range(p + q))
        perm[i], perm[i + 1] = perm[i + 1], perm[i]
        gens.append(perm)
    for i in range(p, p + q - 1):
        perm = list(range(p + q))
        perm[i], perm[i + 1] = perm[i + 1], perm[i]
        gens.append(perm)
    return gens


@dataclass
class WeylReport:
    max_rel_dev: float
    checked: int
    ok: bool


def weyl_invariance_check(d: SpaceDecomposition, lams, pd: Optional[PolarData] = None,
                          tol: float = 1e-10) -> WeylReport:
    """J'(w lam) = J'(lam) for block permutations w (preset classes only)."""
    cls = d.cls
    if cls.preset is None:
        raise ValueError("Weyl action is realized for preset classes only")
    pd = pd or polar_data(d)
    lams = np.atleast_2d(np.asarray(lams, dtype=float))
    base = jacobian_Jprime_batch(pd, lams)
    worst = 0.0
    count = 0
    for perm in [list(range(cls.p + cls.q))] + weyl_generators(cls.p, cls.q):
        moved = jacobian_Jprime_batch(pd, lams[:, perm])
        dev = np.abs(moved - base) / np.maximum(np.abs(base), 1e-300)
        dev[(base == 0) & (moved == 0)] = 0.0
        worst = max(worst, float(dev.max()))
        count += len(lams)
    return WeylReport(worst, count, worst <= tol)


# ---------------------------------------------------------------------------
# restricted roots of g and Q over a maximal Abelian a in p
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChamberData:
    """Roots of g and of Q under a maximal Abelian a in p, with the decomposition of s."""

    a: AbelianSubalgebra
    g_roots: RootSystem
    q_roots: RootSystem
    s_dec: SDecomposition
    H_ref: np.ndarray


def chamber_data(d: SpaceDecomposition, seed: int = 0) -> ChamberData:
    a = maximal_abelian(d.p, None, seed=seed, normalize="frobenius")
    g_rs = positive_system(root_decomposition(a, d.g, "g-root", seed), "generic-functional")
    q_rs = positive_system(root_decomposition(a, d.Q, "Q-root", seed, theta_s=d.s), "generic-functional")
    sdec = decompose_s(q_rs, d.s)
    H_ref = reference_element(q_rs, seed) if q_rs.roots else np.zeros(a.dim)
    return ChamberData(a, g_rs, q_rs, sdec, H_ref)


def orthogonality_residuals(rs: RootSystem, H_coords=None) -> dict:
    """Residuals of B(X_a,X_b)=delta B(X_a,X_a), B(X,X')=-B(phi X, phi X'), B(phi X, X')=0."""
    if H_coords is None:
        H_coords = reference_element(rs)
    r1 = r2 = r3 = 0.0
    pos = rs.positive_roots
    for i, a in enumerate(pos):
        for j, b in enumerate(pos):
            if i == j:
                continue
            for X in a.plus_space.basis:
                for Y in b.plus_space.basis:
                    r1 = max(r1, abs(trace_form(X, Y)))
        for X in a.plus_space.basis:
            for Y in a.plus_space.basis:
                pX, pY = phi(rs, a, X, H_coords), phi(rs, a, Y, H_coords)
                r2 = max(r2, abs(trace_form(X, Y) + trace_form(pX, pY)))
                r3 = max(r3, abs(trace_form(pX, Y)))
    return {"orth_roots": r1, "phi_antiisometry": r2, "phi_orth": r3}
