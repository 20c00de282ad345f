import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptotr.exceptions import CorruptInputError, DimensionError
from ptotr.tensor import (
    CpTensor,
    cp_reconstruct,
    dematricize,
    khatri_rao,
    matricize,
    normalize_cp,
    partial_contract,
    random_cp,
    unvec,
    vec,
)


def loop_matricize(t, mode):
    """Index-map oracle: explicit column formula over every multi-index."""
    dims = t.shape
    p = mode - 1
    ncols = int(np.prod([d for k, d in enumerate(dims) if k != p]))
    out = np.zeros((dims[p], ncols))
    for idx in itertools.product(*[range(d) for d in dims]):
        col, stride = 0, 1
        for k, d in enumerate(dims):
            if k == p:
                continue
            col += idx[k] * stride
            stride *= d
        out[idx[p], col] = t[idx]
    return out


def loop_cp(c):
    """Elementwise oracle: sum_r lambda_r prod_k A_k[i_k, r]."""
    out = np.zeros(c.shape)
    for idx in itertools.product(*[range(d) for d in c.shape]):
        s = 0.0
        for r in range(c.rank):
            term = c.weights[r]
            for k, f in enumerate(c.factors):
                term *= f[idx[k], r]
            s += term
        out[idx] = s
    return out


def loop_contract(x, b):
    trail = b.shape[x.ndim:]
    out = np.zeros(trail)
    for m in itertools.product(*[range(d) for d in trail]):
        for n in itertools.product(*[range(d) for d in x.shape]):
            out[m] += x[n] * b[n + m]
    return out


def test_matricize_identity_for_matrix():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matricize(a, 1), a)


def test_matricize_mode2_matches_index_map():
    t = unvec(np.arange(1.0, 25.0), (2, 3, 4))
    m = matricize(t, 2)
    assert m.shape == (3, 8)
    np.testing.assert_array_equal(m, loop_matricize(t, 2))
    # frozen from the oracle: first row holds m_2 = 1 for (m_1, m_3) in column-major order
    np.testing.assert_array_equal(m[0], [1, 2, 7, 8, 13, 14, 19, 20])


@pytest.mark.parametrize("mode", [1, 2, 3, 4])
def test_matricize_every_mode_matches_oracle(mode):
    t = np.random.default_rng(mode).random((2, 3, 2, 3))
    np.testing.assert_array_equal(matricize(t, mode), loop_matricize(t, mode))


def test_matricize_roundtrip_random():
    rng = np.random.default_rng(0)
    for _ in range(50):
        order = int(rng.integers(1, 5))
        dims = tuple(int(d) for d in rng.integers(1, 5, order))
        t = rng.random(dims)
        mode = int(rng.integers(1, order + 1))
        np.testing.assert_array_equal(dematricize(matricize(t, mode), mode, dims), t)


def test_matricize_mode_out_of_range():
    with pytest.raises(DimensionError):
        matricize(np.zeros((2, 2)), 3)
    with pytest.raises(DimensionError):
        matricize(np.zeros((2, 2)), 0)


def test_khatri_rao_small():
    np.testing.assert_array_equal(khatri_rao([np.array([[1.0], [2.0]]), np.array([[3.0], [4.0]])]),
                                  [[3.0], [4.0], [6.0], [8.0]])
    a = np.random.default_rng(1).random((3, 2))
    np.testing.assert_array_equal(khatri_rao([a]), a)


def test_khatri_rao_columns_are_kronecker():
    rng = np.random.default_rng(2)
    mats = [rng.random((d, 3)) for d in (2, 4, 3)]
    kr = khatri_rao(mats)
    for r in range(3):
        np.testing.assert_allclose(kr[:, r], np.kron(np.kron(mats[0][:, r], mats[1][:, r]), mats[2][:, r]))


def test_khatri_rao_mismatch():
    with pytest.raises(DimensionError):
        khatri_rao([np.ones((2, 2)), np.ones((2, 3))])


def test_cp_reconstruct_uniform_rank1():
    c = CpTensor([6.0], (), (np.full((2, 1), 0.5), np.full((3, 1), 1 / 3)))
    np.testing.assert_allclose(cp_reconstruct(c), np.ones((2, 3)), rtol=1e-15)


def test_cp_reconstruct_matches_loop_and_scales():
    rng = np.random.default_rng(3)
    c = CpTensor(rng.random(2) + 0.5, (rng.random((2, 2)),), (rng.random((2, 2)), rng.random((2, 2))))
    full = cp_reconstruct(c)
    assert full.shape == (2, 2, 2)
    np.testing.assert_allclose(full, loop_cp(c), rtol=0, atol=1e-12)
    doubled = CpTensor(2 * c.weights, c.covariate_factors, c.response_factors)
    np.testing.assert_allclose(cp_reconstruct(doubled), 2 * full, rtol=1e-14)


def test_matricized_cp_identity_pins_kr_order():
    rng = np.random.default_rng(4)
    for _ in range(20):
        dims = tuple(int(d) for d in rng.integers(1, 5, 3))
        c = random_cp((), dims, 2, rng)
        full = cp_reconstruct(c)
        for p in range(1, 4):
            others = [c.response_factors[s] for s in range(3) if s != p - 1]
            expected = c.response_factors[p - 1] @ np.diag(c.weights) @ khatri_rao(others[::-1]).T
            np.testing.assert_allclose(matricize(full, p), expected, rtol=0, atol=1e-12)


def test_partial_contract_small_dense():
    x = np.array([1.0, 2.0])
    b = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
    np.testing.assert_allclose(partial_contract(x, b), [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(partial_contract(np.zeros(2), b), np.zeros(3))


def test_partial_contract_dense_matches_loop():
    rng = np.random.default_rng(5)
    x = rng.random((2, 3))
    b = rng.random((2, 3, 2, 2))
    np.testing.assert_allclose(partial_contract(x, b), loop_contract(x, b), rtol=1e-13)


def test_partial_contract_cp_matches_dense():
    rng = np.random.default_rng(6)
    for _ in range(30):
        q = int(rng.integers(1, 4))
        p = int(rng.integers(1, 4))
        ndims = tuple(int(d) for d in rng.integers(1, 4, q))
        mdims = tuple(int(d) for d in rng.integers(1, 4, p))
        c = random_cp(ndims, mdims, int(rng.integers(1, 4)), rng, weight_scale=10.0)
        x = rng.random(ndims)
        dense = partial_contract(x, cp_reconstruct(c))
        fact = partial_contract(x, c)
        assert np.max(np.abs(fact - dense) / np.abs(dense)) <= 1e-10


def test_partial_contract_dimension_mismatch():
    c = random_cp((2,), (3,), 1, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        partial_contract(np.ones(3), c)
    with pytest.raises(DimensionError):
        partial_contract(np.ones(3), np.ones((2, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_partial_contract_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    c = random_cp((2, 3), (2,), 2, rng)
    x1, x2 = rng.random((2, 3)), rng.random((2, 3))
    lhs = partial_contract(a * x1 + b * x2, c)
    rhs = a * partial_contract(x1, c) + b * partial_contract(x2, c)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_normalize_single_factor():
    c = normalize_cp(CpTensor([1.0], (), (np.array([[2.0], [2.0]]),)))
    np.testing.assert_allclose(c.response_factors[0], [[0.5], [0.5]])
    np.testing.assert_allclose(c.weights, [4.0])


def test_normalize_idempotent():
    c = random_cp((3,), (2, 4), 3, np.random.default_rng(7), weight_scale=5.0)
    n = normalize_cp(c)
    np.testing.assert_allclose(n.weights, c.weights, rtol=1e-15)
    for f, g in zip(n.factors, c.factors):
        np.testing.assert_allclose(f, g, rtol=1e-15)


def test_normalize_preserves_reconstruction_and_sorts():
    rng = np.random.default_rng(8)
    for _ in range(30):
        c = CpTensor(rng.random(3) + 0.1, (rng.random((2, 3)) + 0.01,),
                     (rng.random((3, 3)) + 0.01, rng.random((2, 3)) + 0.01))
        n = normalize_cp(c)
        assert n.is_normalized()
        np.testing.assert_allclose(cp_reconstruct(n), cp_reconstruct(c), rtol=1e-12, atol=1e-12)


def test_normalize_stable_ties():
    u = np.array([[0.5, 0.25], [0.5, 0.75]])
    n = normalize_cp(CpTensor([1.0, 1.0], (), (u,)))
    np.testing.assert_array_equal(n.response_factors[0], u)


def test_normalize_rejects_zero_column():
    with pytest.raises(CorruptInputError):
        normalize_cp(CpTensor([1.0], (), (np.zeros((2, 1)),)))


def test_vec_is_column_major():
    t = np.array([[1, 3], [2, 4]])
    np.testing.assert_array_equal(vec(t), [1, 2, 3, 4])
    np.testing.assert_array_equal(unvec(vec(t), (2, 2)), t)
