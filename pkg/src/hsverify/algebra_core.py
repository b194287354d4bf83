"""Matrix Lie algebra setting: involutions, symmetry classes and fixed-point spaces.

Everything lives inside gl(n, C). Real-linear maps on gl(n, C) are handled
through the realification ``X -> (Re X, Im X)`` flattened row-major, so that
the Euclidean inner product of realified vectors is ``Re Tr(X^dagger Y)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

NULL_TOL = 1e-9
STRUCT_TOL = 1e-10

INVOLUTION_KINDS = (
    "conjugate-by-s",
    "minus-dagger-conjugate-by-s",
    "minus-transpose-conjugate-by-M",
    "custom",
)


class StructureError(ValueError):
    """The algebraic data violates a structural requirement of the setting."""


# ---------------------------------------------------------------------------
# realification helpers
# ---------------------------------------------------------------------------

def realify(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=complex)
    return np.concatenate([X.real.ravel(), X.imag.ravel()], axis=-1) if X.ndim == 2 else \
        np.concatenate([X.real.reshape(X.shape[0], -1), X.imag.reshape(X.shape[0], -1)], axis=1)


def complexify(v: np.ndarray, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    half = n * n
    return (v[..., :half] + 1j * v[..., half:]).reshape(v.shape[:-1] + (n, n))


def real_basis(n: int) -> np.ndarray:
    """Real basis of gl(n, C): E_ij (row-major), then i E_ij."""
    out = np.zeros((2 * n * n, n, n), dtype=complex)
    for k in range(n * n):
        out[k].flat[k] = 1.0
        out[n * n + k].flat[k] = 1.0j
    return out


def comm(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return X @ Y - Y @ X


def trace_form(X: np.ndarray, Y: np.ndarray) -> complex:
    """B(X, Y) = Tr(XY)."""
    X = np.asarray(X)
    Y = np.asarray(Y)
    if X.shape != Y.shape or X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError(f"trace_form needs equal square matrices, got {X.shape} and {Y.shape}")
    return complex(np.einsum("ij,ji->", X, Y))


def inner(X: np.ndarray, Y: np.ndarray) -> float:
    """Real inner product Re Tr(X^dagger Y)."""
    return float(np.real(np.vdot(X, Y)))


def _check_square(X: np.ndarray, n: int) -> np.ndarray:
    X = np.asarray(X, dtype=complex)
    if X.shape != (n, n):
        raise ValueError(f"expected a {n}x{n} matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("matrix has non-finite entries")
    return X


# ---------------------------------------------------------------------------
# involutions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InvolutionSpec:
    """An involutive automorphism of gl(n, C) together with the sign eta."""

    kind: str
    matrix: np.ndarray
    eta: int = 1
    func: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    label: str = ""

    def __post_init__(self):
        if self.kind not in INVOLUTION_KINDS:
            raise ValueError(f"unknown involution kind {self.kind!r}")
        if self.eta not in (1, -1):
            raise ValueError("eta must be +1 or -1")
        if self.kind == "custom" and self.func is None:
            raise ValueError("custom involutions need a callable")
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=complex))
        object.__setattr__(self, "_inv", np.linalg.inv(self.matrix))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        M, Minv = self.matrix, self._inv
        if self.kind == "conjugate-by-s":
            return M @ X @ Minv
        if self.kind == "minus-dagger-conjugate-by-s":
            return -M @ np.conj(np.swapaxes(X, -1, -2)) @ Minv
        if self.kind == "minus-transpose-conjugate-by-M":
            return -M @ np.swapaxes(X, -1, -2) @ Minv
        return self.func(X)

    def real_matrix(self) -> np.ndarray:
        """Matrix of the involution acting on realified vectors."""
        basis = real_basis(self.n)
        return realify(np.array([self(E) for E in basis])).T


def apply_involution(inv: InvolutionSpec, X: np.ndarray) -> np.ndarray:
    X = _check_square(X, inv.n)
    return inv(X)


def theta_of(s: np.ndarray) -> InvolutionSpec:
    return InvolutionSpec("conjugate-by-s", s, 1, label="theta")


def gamma_of(s: np.ndarray) -> InvolutionSpec:
    return InvolutionSpec("minus-dagger-conjugate-by-s", s, 1, label="gamma")


# ---------------------------------------------------------------------------
# symmetry classes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SymmetryClass:
    n: int
    s: np.ndarray
    taus: tuple = ()
    name: str = ""
    preset: Optional[str] = None
    p: Optional[int] = None
    q: Optional[int] = None

    @property
    def theta(self) -> InvolutionSpec:
        return theta_of(self.s)

    @property
    def gamma(self) -> InvolutionSpec:
        return gamma_of(self.s)

    def validate(self) -> None:
        s = self.s
        if s.shape != (self.n, self.n):
            raise StructureError("s has the wrong size")
        if np.abs(s - s.conj().T).max() > 1e-12:
            raise StructureError("s is not hermitian")
        if np.abs(s @ s - np.eye(self.n)).max() > 1e-12:
            raise StructureError("s^2 != 1")
        invs = [self.theta, self.gamma] + list(self.taus)
        mats = [inv.real_matrix() for inv in invs]
        eye = np.eye(2 * self.n * self.n)
        for inv, M in zip(invs, mats):
            if np.abs(M @ M - eye).max() > 1e-12:
                raise StructureError(f"{inv.label or inv.kind} is not an involution")
        for i in range(len(invs)):
            for j in range(i + 1, len(invs)):
                if np.abs(mats[i] @ mats[j] - mats[j] @ mats[i]).max() > 1e-12:
                    raise StructureError(
                        f"involutions {invs[i].label or i} and {invs[j].label or j} do not commute")
        for tau in self.taus:
            if np.abs(tau.eta * tau(s) - s).max() > 1e-12:
                raise StructureError(f"s is not in the eta={tau.eta} eigenspace of {tau.label}")

    def to_config(self) -> dict:
        if self.preset is not None:
            return {"preset": self.preset, "p": self.p, "q": self.q, "name": self.name}
        taus = []
        for t in self.taus:
            if t.kind == "custom":
                raise ValueError("custom involutions cannot be serialized")
            taus.append({"kind": t.kind, "eta": t.eta, "matrix": matrix_to_pairs(t.matrix)})
        return {"raw": {"s": matrix_to_pairs(self.s), "taus": taus}, "name": self.name}


def matrix_to_pairs(X: np.ndarray) -> list:
    X = np.asarray(X, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in X]


def pairs_to_matrix(rows: Sequence) -> np.ndarray:
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError("matrices are nested arrays of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def _signature(p: int, q: int) -> np.ndarray:
    return np.diag([1.0] * p + [-1.0] * q).astype(complex)


def build_class(preset: Optional[str] = None, p: Optional[int] = None, q: Optional[int] = None,
                *, s=None, taus=(), name: str = "", n: Optional[int] = None) -> SymmetryClass:
    """Build and validate a symmetry class from a preset or from raw fields."""
    if preset is not None:
        if p is None or q is None or p < 1 or q < 1:
            raise ValueError("presets need p >= 1 and q >= 1")
        preset = {"U": "unitary", "O": "orthogonal", "Sp": "symplectic"}.get(preset, preset)
        if preset == "unitary":
            sig = _signature(p, q)
            cls = SymmetryClass(p + q, sig, (), name or f"U({p},{q})", "unitary", p, q)
        elif preset == "orthogonal":
            sig = _signature(p, q)
            tau = InvolutionSpec("minus-transpose-conjugate-by-M", sig, -1, label="tau1")
            cls = SymmetryClass(p + q, sig, (tau,), name or f"O({p},{q})", "orthogonal", p, q)
        elif preset == "symplectic":
            s0 = np.eye(2)
            s2 = np.array([[0, -1j], [1j, 0]])
            sig = np.kron(_signature(p, q), s0)
            omega = np.kron(_signature(p, q), s2)
            tau = InvolutionSpec("minus-transpose-conjugate-by-M", omega, -1, label="tau1")
            cls = SymmetryClass(2 * (p + q), sig, (tau,), name or f"Sp({2 * p},{2 * q})",
                                "symplectic", p, q)
        else:
            raise ValueError(f"unknown preset {preset!r}")
    else:
        if s is None:
            raise ValueError("raw classes need s")
        s = np.asarray(s, dtype=complex)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError("s must be square")
        if n is not None and n != s.shape[0]:
            raise ValueError(f"signature size {s.shape[0]} does not match n={n}")
        if p is not None and q is not None and p + q != s.shape[0]:
            raise ValueError(f"invalid signature: p+q={p + q} but n={s.shape[0]}")
        cls = SymmetryClass(s.shape[0], s, tuple(taus), name or "custom")
    cls.validate()
    return cls


def class_from_config(cfg: dict) -> SymmetryClass:
    if "preset" in cfg:
        return build_class(cfg["preset"], int(cfg["p"]), int(cfg["q"]), name=cfg.get("name", ""))
    raw = cfg.get("raw")
    if raw is None:
        raise ValueError("class config needs 'preset' or 'raw'")
    s = pairs_to_matrix(raw["s"])
    taus = [InvolutionSpec(t["kind"], pairs_to_matrix(t["matrix"]), int(t.get("eta", 1)),
                           label=f"tau{i + 1}") for i, t in enumerate(raw.get("taus", []))]
    return build_class(s=s, taus=taus, name=cfg.get("name", ""), p=raw.get("p"), q=raw.get("q"))


def dump_class(cls: SymmetryClass) -> str:
    return json.dumps(cls.to_config(), sort_keys=True)


# ---------------------------------------------------------------------------
# subspaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatrixSubspace:
    """An ordered real basis of matrices spanning a subspace of gl(n, C).

    The basis is linearly independent over R; it need not be orthonormal.
    Coordinates are taken with respect to the stored order, and
    ``orientation`` records whether that order is positively oriented.
    """

    n: int
    basis: np.ndarray
    orientation: int = 1
    label: str = ""

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=complex).reshape(-1, self.n, self.n)
        object.__setattr__(self, "basis", b)
        if len(b):
            G = self.gram()
            if np.linalg.matrix_rank(G, tol=NULL_TOL * max(1.0, np.abs(G).max())) < len(b):
                raise StructureError(f"basis of {self.label or 'subspace'} is not independent")
            object.__setattr__(self, "_ginv", np.linalg.inv(G))
        else:
            object.__setattr__(self, "_ginv", np.zeros((0, 0)))

    @property
    def dim(self) -> int:
        return len(self.basis)

    def __len__(self) -> int:
        return self.dim

    def __iter__(self):
        return iter(self.basis)

    def gram(self) -> np.ndarray:
        R = realify(self.basis) if self.dim else np.zeros((0, 2 * self.n * self.n))
        return R @ R.T

    def norms2(self) -> np.ndarray:
        return np.real(np.einsum("kij,kij->k", self.basis.conj(), self.basis))

    def element(self, coords) -> np.ndarray:
        coords = np.asarray(coords)
        return np.tensordot(coords, self.basis, axes=([-1], [0]))

    def coords(self, X: np.ndarray) -> np.ndarray:
        """Real coordinates of the orthogonal projection of X onto the span."""
        if self.dim == 0:
            return np.zeros(np.shape(X)[:-2] + (0,))
        rhs = np.real(np.einsum("kij,...ij->...k", self.basis.conj(), X))
        return rhs @ self._ginv.T

    def project(self, X: np.ndarray) -> np.ndarray:
        if self.dim == 0:
            return np.zeros_like(np.asarray(X, dtype=complex))
        return self.element(self.coords(X))

    def residual(self, X: np.ndarray) -> float:
        X = np.asarray(X, dtype=complex)
        return float(np.linalg.norm(X - self.project(X)))

    def contains(self, X: np.ndarray, tol: float = 1e-10) -> bool:
        return self.residual(X) <= tol * max(1.0, float(np.linalg.norm(X)))

    def direct_sum(self, other: "MatrixSubspace", label: str = "") -> "MatrixSubspace":
        return MatrixSubspace(self.n, np.concatenate([self.basis, other.basis]), 1,
                              label or f"{self.label}+{other.label}")

    def with_basis(self, basis, label: Optional[str] = None) -> "MatrixSubspace":
        return MatrixSubspace(self.n, basis, self.orientation, self.label if label is None else label)


def orthogonal_basis(vectors: np.ndarray, n: int, tol: float = NULL_TOL,
                     normalize: str = "max-entry") -> np.ndarray:
    """Deterministic Gram-Schmidt on a list of matrices.

    Vectors whose residual falls below ``tol`` times the largest input norm are
    dropped. ``normalize`` is ``"max-entry"`` (largest entry modulus 1, the
    default for stored bases) or ``"frobenius"``.
    """
    vecs = realify(np.asarray(vectors, dtype=complex).reshape(-1, n, n))
    scale = max(1.0, np.linalg.norm(vecs, axis=1).max()) if len(vecs) else 1.0
    kept: list = []
    for v in vecs:
        w = v.copy()
        for _ in range(2):
            for u in kept:
                w -= (u @ w) / (u @ u) * u
        if np.linalg.norm(w) > tol * scale:
            kept.append(w)
    if not kept:
        return np.zeros((0, n, n), dtype=complex)
    mats = complexify(np.array(kept), n)
    out = []
    for M in mats:
        if normalize == "frobenius":
            out.append(M / np.linalg.norm(M))
        else:
            out.append(M / np.abs(M).max())
    return np.array(out)


def _fix_projector(mats_signs) -> np.ndarray:
    """Projector onto the joint fixed space of commuting real involutions."""
    dim = mats_signs[0][0].shape[0]
    P = np.eye(dim)
    for M, sign in mats_signs:
        P = P @ (np.eye(dim) + sign * M) / 2
    return P


def nullspace_dim(mats_signs, tol: float = NULL_TOL) -> int:
    """Dimension of {v : sign*M v = v for all pairs} via an SVD of the stacked system."""
    dim = mats_signs[0][0].shape[0]
    A = np.vstack([sign * M - np.eye(dim) for M, sign in mats_signs])
    sv = np.linalg.svd(A, compute_uv=False)
    smax = sv.max() if sv.size else 1.0
    return int(dim - np.sum(sv > tol * max(smax, 1.0)))


def fixed_space(cls: SymmetryClass, constraints, label: str = "") -> MatrixSubspace:
    """Subspace {X : sign * iota(X) = X for every (iota, sign) in constraints}."""
    pairs = [(inv.real_matrix(), sign) for inv, sign in constraints]
    P = _fix_projector(pairs)
    images = complexify(P.T, cls.n)  # projected standard basis vectors
    return MatrixSubspace(cls.n, orthogonal_basis(images, cls.n), 1, label)


@dataclass(frozen=True)
class SpaceDecomposition:
    cls: SymmetryClass
    g: MatrixSubspace
    k: MatrixSubspace
    p: MatrixSubspace
    Q: MatrixSubspace
    Qplus: MatrixSubspace
    Qminus: MatrixSubspace

    @property
    def s(self) -> np.ndarray:
        return self.cls.s

    @property
    def n(self) -> int:
        return self.cls.n

    def dims(self) -> dict:
        return {name: getattr(self, name).dim for name in ("g", "k", "p", "Q", "Qplus", "Qminus")}

    def ad_s_matrix(self) -> np.ndarray:
        """Matrix of ad(s): p -> Q_minus in the stored bases."""
        s = self.s
        return np.array([self.Qminus.coords(comm(s, Y)) for Y in self.p.basis]).T.reshape(
            self.Qminus.dim, self.p.dim)

    def theta_part(self, X: np.ndarray, sign: int = 1) -> np.ndarray:
        s = self.s
        return (X + sign * (s @ X @ s)) / 2


def fixed_point_spaces(cls: SymmetryClass) -> SpaceDecomposition:
    th, ga = cls.theta, cls.gamma
    g_cons = [(ga, 1)] + [(t, 1) for t in cls.taus]
    q_cons = [(ga, -1)] + [(t, t.eta) for t in cls.taus]
    k = fixed_space(cls, g_cons + [(th, 1)], "k")
    p = fixed_space(cls, g_cons + [(th, -1)], "p")
    Qp = fixed_space(cls, q_cons + [(th, 1)], "Q+")
    Qm = fixed_space(cls, q_cons + [(th, -1)], "Q-")
    g = k.direct_sum(p, "g")
    Q = Qp.direct_sum(Qm, "Q")
    return SpaceDecomposition(cls, g, k, p, Q, Qp, Qm)


def independent_dims(cls: SymmetryClass) -> dict:
    """Dimensions of g and Q from the full stacked fixed-point systems (no theta split)."""
    ga = cls.gamma.real_matrix()
    taus = [(t.real_matrix(), t) for t in cls.taus]
    g = nullspace_dim([(ga, 1)] + [(M, 1) for M, _ in taus])
    Q = nullspace_dim([(ga, -1)] + [(M, t.eta) for M, t in taus])
    return {"g": g, "Q": Q}


# ---------------------------------------------------------------------------
# structure checks
# ---------------------------------------------------------------------------

BRACKET_TABLE = (
    ("[k,k] in k", "k", "k", "k"),
    ("[k,p] in p", "k", "p", "p"),
    ("[p,p] in k", "p", "p", "k"),
    ("[Q+,Q-] in p", "Qplus", "Qminus", "p"),
    ("[Q+,Q+] in k", "Qplus", "Qplus", "k"),
    ("[Q-,Q-] in k", "Qminus", "Qminus", "k"),
    ("[k,Q+] in Q+", "k", "Qplus", "Qplus"),
    ("[k,Q-] in Q-", "k", "Qminus", "Qminus"),
    ("[p,Q+] in Q-", "p", "Qplus", "Qminus"),
    ("[p,Q-] in Q+", "p", "Qminus", "Qplus"),
)


@dataclass
class StructureReport:
    residuals: dict
    max_residual: float
    failures: list
    ad_s_det: float
    ad_s_cond: float

    @property
    def ok(self) -> bool:
        return not self.failures


def check_structure(d: SpaceDecomposition, tol: float = STRUCT_TOL) -> StructureReport:
    """Verify the commutation table and the (anti)hermiticity of each piece."""
    residuals: dict = {}
    failures: list = []
    for name, a, b, target in BRACKET_TABLE:
        A, Bsp, T = getattr(d, a), getattr(d, b), getattr(d, target)
        worst, witness = 0.0, None
        for i, X in enumerate(A.basis):
            for j, Y in enumerate(Bsp.basis):
                Z = comm(X, Y)
                r = T.residual(Z) / max(1.0, np.linalg.norm(X) * np.linalg.norm(Y))
                if r > worst:
                    worst, witness = r, (i, j)
        residuals[name] = worst
        if worst > tol:
            failures.append({"relation": name, "witness": witness, "residual": worst})
    for name, sign in (("k", -1), ("p", 1), ("Qplus", 1), ("Qminus", -1)):
        sp = getattr(d, name)
        worst = 0.0
        for X in sp.basis:
            worst = max(worst, float(np.abs(X.conj().T - sign * X).max()))
        key = f"{name} {'hermitian' if sign == 1 else 'antihermitian'}"
        residuals[key] = worst
        if worst > tol:
            failures.append({"relation": key, "witness": None, "residual": worst})
    if d.p.dim != d.Qminus.dim:
        failures.append({"relation": "ad(s): p -> Q- square", "witness": None, "residual": np.inf})
        det, cond = 0.0, np.inf
    else:
        M = d.ad_s_matrix()
        det = float(np.linalg.det(M)) if M.size else 1.0
        cond = float(np.linalg.cond(M)) if M.size else 1.0
        if not np.isfinite(cond) or cond > 1e8:
            failures.append({"relation": "ad(s): p -> Q- bijective", "witness": None,
                             "residual": cond})
    if not d.Qplus.contains(d.s):
        failures.append({"relation": "s in Q+", "witness": None, "residual": d.Qplus.residual(d.s)})
    return StructureReport(residuals, max(residuals.values(), default=0.0), failures, det, cond)
