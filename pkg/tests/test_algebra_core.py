import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hsverify.algebra_core import (InvolutionSpec, MatrixSubspace, StructureError, build_class, check_structure,
                                   class_from_config, comm, dump_class, fixed_point_spaces, independent_dims,
                                   matrix_to_pairs, orthogonal_basis, pairs_to_matrix, trace_form)

from conftest import PRESETS, decomposition

floats = st.floats(-3, 3, allow_nan=False)


def random_complex(rng, n):
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


def test_dims_orthogonal_11():
    assert decomposition("orthogonal", 1, 1).dims() == {"g": 1, "k": 0, "p": 1, "Q": 3, "Qplus": 2, "Qminus": 1}


def test_dims_unitary_11():
    assert decomposition("unitary", 1, 1).dims() == {"g": 4, "k": 2, "p": 2, "Q": 4, "Qplus": 2, "Qminus": 2}


def closed_form_dims(kind, p, q):
    """Dimensions from the block structure of the classical groups."""
    if kind == "unitary":
        k, pp, qp = p * p + q * q, 2 * p * q, p * p + q * q
    elif kind == "orthogonal":
        k, pp, qp = (p * (p - 1) + q * (q - 1)) // 2, p * q, (p * (p + 1) + q * (q + 1)) // 2
    else:
        k, pp, qp = p * (2 * p + 1) + q * (2 * q + 1), 4 * p * q, p * (2 * p - 1) + q * (2 * q - 1)
    return {"g": k + pp, "k": k, "p": pp, "Q": qp + pp, "Qplus": qp, "Qminus": pp}


@pytest.mark.parametrize("kind,p,q", PRESETS)
def test_dims_match_block_structure(kind, p, q):
    d = decomposition(kind, p, q)
    assert d.dims() == closed_form_dims(kind, p, q)
    ind = independent_dims(d.cls)
    assert ind == {"g": d.g.dim, "Q": d.Q.dim}


def test_structure_residuals(preset_decomposition):
    rep = check_structure(preset_decomposition)
    assert rep.ok, rep.failures
    assert rep.max_residual < 1e-10
    assert abs(rep.ad_s_det) > 1e-8


def test_s_in_Qplus(preset_decomposition):
    d = preset_decomposition
    assert d.Qplus.contains(d.s)


def test_bases_orthogonal_and_max_entry_normalized(preset_decomposition):
    d = preset_decomposition
    for sp in (d.k, d.p, d.Qplus, d.Qminus):
        if sp.dim == 0:
            continue
        G = sp.gram()
        assert np.allclose(G, np.diag(np.diag(G)), atol=1e-12)
        assert np.allclose(np.abs(sp.basis).reshape(sp.dim, -1).max(axis=1), 1.0)


def test_non_involution_is_named():
    sig = np.diag([1.0, -1.0])
    bad = InvolutionSpec("minus-transpose-conjugate-by-M", np.array([[1.0, 1.0], [0.0, 1.0]]), -1, label="tau1")
    with pytest.raises(StructureError, match="tau1 is not an involution"):
        build_class(s=sig, taus=[bad], name="broken")


def test_wrong_eta_is_named():
    sig = np.diag([1.0, -1.0])
    bad = InvolutionSpec("minus-transpose-conjugate-by-M", np.array([[0.0, 1.0], [1.0, 0.0]]), -1, label="tau1")
    with pytest.raises(StructureError, match="eta"):
        build_class(s=sig, taus=[bad], name="broken")


def test_s_must_square_to_one():
    with pytest.raises(StructureError, match="s\\^2"):
        build_class(s=np.diag([1.0, -2.0]), name="broken")


@pytest.mark.parametrize("kind,p,q", PRESETS)
def test_class_config_round_trip(kind, p, q):
    cls = build_class(kind, p, q)
    again = class_from_config(json.loads(dump_class(cls)))
    assert dump_class(again) == dump_class(cls)
    assert np.array_equal(again.s, cls.s)


def test_raw_class_round_trip_matches_preset():
    pre = build_class("orthogonal", 2, 1)
    raw = {"raw": {"s": matrix_to_pairs(pre.s),
                   "taus": [{"kind": t.kind, "eta": t.eta, "matrix": matrix_to_pairs(t.matrix)} for t in pre.taus]},
           "name": "raw O(2,1)"}
    d_raw = fixed_point_spaces(class_from_config(raw))
    assert d_raw.dims() == decomposition("orthogonal", 2, 1).dims()
    assert class_from_config(json.loads(dump_class(d_raw.cls))).to_config() == d_raw.cls.to_config()


@given(arrays(np.float64, (3, 3, 2), elements=floats))
def test_matrix_pairs_round_trip(a):
    X = a[..., 0] + 1j * a[..., 1]
    assert np.array_equal(pairs_to_matrix(matrix_to_pairs(X)), X)


@given(st.integers(0, 10_000))
def test_involutions_square_to_identity_and_commute(seed):
    rng = np.random.default_rng(seed)
    for kind, p, q in (("orthogonal", 1, 2), ("symplectic", 1, 1), ("unitary", 2, 1)):
        cls = build_class(kind, p, q)
        X = random_complex(rng, cls.n)
        invs = [cls.theta, cls.gamma] + list(cls.taus)
        for a in invs:
            assert np.allclose(a(a(X)), X, atol=1e-12)
            for b in invs:
                assert np.allclose(a(b(X)), b(a(X)), atol=1e-12)


@given(st.integers(0, 10_000))
def test_coords_element_round_trip(seed):
    rng = np.random.default_rng(seed)
    d = decomposition("unitary", 2, 1)
    for sp in (d.p, d.Q, d.k):
        c = rng.standard_normal(sp.dim)
        assert np.allclose(sp.coords(sp.element(c)), c, atol=1e-12)


@given(st.integers(0, 10_000))
def test_projection_is_idempotent_and_orthogonal(seed):
    rng = np.random.default_rng(seed)
    d = decomposition("orthogonal", 2, 1)
    X = random_complex(rng, d.n)
    P = d.Q.project(X)
    assert np.allclose(d.Q.project(P), P, atol=1e-12)
    for B in d.Q.basis:
        assert abs(np.real(np.vdot(B, X - P))) < 1e-10


@given(st.integers(0, 10_000))
def test_trace_form_relations(seed):
    rng = np.random.default_rng(seed)
    d = decomposition("symplectic", 1, 1)
    Y, Z = d.p.element(rng.standard_normal(d.p.dim)), d.Qplus.element(rng.standard_normal(d.Qplus.dim))
    # ad-invariance of the trace form
    W = d.Qminus.element(rng.standard_normal(d.Qminus.dim))
    assert abs(trace_form(comm(Y, Z), W) + trace_form(Z, comm(Y, W))) < 1e-10
    # p and Q+ are hermitian, so Tr of their squares is nonnegative
    assert np.real(trace_form(Y, Y)) >= 0 and np.real(trace_form(Z, Z)) >= 0


def test_orthogonal_basis_drops_dependent_vectors():
    rng = np.random.default_rng(1)
    X = random_complex(rng, 2)
    out = orthogonal_basis(np.array([X, 2 * X, -3j * X]), 2)
    assert out.shape == (2, 2, 2)  # X and iX are independent over R


@given(st.integers(0, 10_000))
def test_orthogonal_basis_is_orthogonal(seed):
    rng = np.random.default_rng(seed)
    out = orthogonal_basis(np.array([random_complex(rng, 3) for _ in range(5)]), 3)
    G = np.real(np.einsum("aij,bij->ab", out.conj(), out))
    assert out.shape[0] == 5
    assert np.allclose(G, np.diag(np.diag(G)), atol=1e-10)
    assert np.allclose(np.abs(out).reshape(5, -1).max(axis=1), 1.0)


def test_direct_sum_dimension(preset_decomposition):
    d = preset_decomposition
    assert d.p.direct_sum(d.k, "g").dim == d.g.dim
    assert isinstance(d.Q, MatrixSubspace)
