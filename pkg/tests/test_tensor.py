import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from genpod.tensor import (
    cycle,
    kron,
    kron_all,
    matricize_mode1,
    mode_product,
    tensor_from_json,
    tensor_to_json,
    unmatricize_mode1,
    unvec,
    vec,
)

shapes = st.lists(st.integers(1, 4), min_size=1, max_size=4).map(tuple)
int_tensors = shapes.flatmap(
    lambda s: arrays(np.int64, s, elements=st.integers(-9, 9))
)


def flat_index(k, dims):
    # dimension 0 fastest
    j, stride = 0, 1
    for ki, di in zip(k, dims):
        j += ki * stride
        stride *= di
    return j


# vec ---------------------------------------------------------------------
def test_vec_2x2():
    np.testing.assert_array_equal(vec([[1, 2], [3, 4]]), [1, 3, 2, 4])


def test_vec_scalar_tensor():
    np.testing.assert_array_equal(vec([[7.5]]), [7.5])


def test_vec_2x3_ordering():
    t = np.array([[10 * (k1 + 1) + (k2 + 1) for k2 in range(3)] for k1 in range(2)])
    np.testing.assert_array_equal(vec(t), [11, 21, 12, 22, 13, 23])


@given(int_tensors)
def test_vec_matches_index_formula(t):
    v = vec(t)
    assert v.size == t.size
    for k in itertools.product(*[range(d) for d in t.shape]):
        assert v[flat_index(k, t.shape)] == t[k]
    np.testing.assert_array_equal(unvec(v, t.shape), t)


def test_unvec_length_mismatch():
    with pytest.raises(ValueError):
        unvec(np.arange(5), (2, 3))


# matricize ---------------------------------------------------------------
def test_matricize_vector_is_column():
    m = matricize_mode1(np.arange(4.0))
    assert m.shape == (4, 1)


def test_matricize_matrix_identity():
    a = np.array([[1, 2], [3, 4]])
    np.testing.assert_array_equal(matricize_mode1(a), a)


def test_matricize_2x2x2_column_order():
    t = np.zeros((2, 2, 2))
    for k in itertools.product(range(2), repeat=3):
        t[k] = 100 * (k[0] + 1) + 10 * (k[1] + 1) + (k[2] + 1)
    m = matricize_mode1(t)
    # columns (k2, k3) = (1,1), (2,1), (1,2), (2,2)
    expected = np.array([[111, 121, 112, 122], [211, 221, 212, 222]])
    np.testing.assert_array_equal(m, expected)
    np.testing.assert_array_equal(unmatricize_mode1(m, t.shape), t)


# cycle -------------------------------------------------------------------
def test_cycle_matrix_is_transpose():
    a = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(cycle(a), a.T)


def test_cycle_2x2x2_entrywise():
    t = np.arange(8.0).reshape(2, 2, 2)
    c = cycle(t)
    for k1, k2, k3 in itertools.product(range(2), repeat=3):
        assert c[k2, k3, k1] == t[k1, k2, k3]
    np.testing.assert_array_equal(cycle(cycle(cycle(t))), t)


@given(int_tensors)
def test_cycle_n_times_is_identity(t):
    c = t
    for _ in range(t.ndim):
        c = cycle(c)
    assert c.shape == t.shape
    np.testing.assert_array_equal(c, t)
    np.testing.assert_array_equal(cycle(t, t.ndim), t)


def test_cycle_dims():
    t = np.zeros((2, 3, 4, 5))
    assert cycle(t).shape == (3, 4, 5, 2)
    assert cycle(t, 2).shape == (4, 5, 2, 3)


@given(int_tensors)
def test_cycled_matricization_is_mode_unfolding(t):
    n = t.ndim
    for i in range(n):
        m = matricize_mode1(cycle(t, i))
        assert m.shape[0] == t.shape[i]
        # remaining dims in cyclic order i+1, ..., N-1, 0, ..., i-1
        rest = [(i + j) % n for j in range(1, n)]
        rest_dims = [t.shape[r] for r in rest]
        for k in itertools.product(*[range(d) for d in t.shape]):
            col = flat_index([k[r] for r in rest], rest_dims)
            assert m[k[i], col] == t[k]


# mode_product ------------------------------------------------------------
def test_mode_product_identity(rng):
    t = rng.standard_normal((2, 3, 4))
    for ax in range(3):
        np.testing.assert_array_equal(
            mode_product(t, np.eye(t.shape[ax]), ax), t
        )


def test_mode_product_ones_row_sums_fibers(rng):
    t = rng.standard_normal((2, 3, 4))
    for ax in range(3):
        s = mode_product(t, np.ones((1, t.shape[ax])), ax)
        expected = np.zeros(s.shape)
        for k in itertools.product(*[range(d) for d in t.shape]):
            kk = list(k)
            kk[ax] = 0
            expected[tuple(kk)] += t[k]
        np.testing.assert_allclose(s, expected, rtol=1e-14)


@given(int_tensors, st.data())
def test_mode_product_kron_identity(t, data):
    # exact on integers: vec(m o_i t) = (I ... (x) m (x) ... I) vec(t)
    ax = data.draw(st.integers(0, t.ndim - 1))
    m = data.draw(arrays(np.int64, (2, t.shape[ax]), elements=st.integers(-5, 5)))
    eyes = [np.eye(d) for d in t.shape]
    eyes[ax] = m
    K = kron_all(eyes[::-1])
    np.testing.assert_array_equal(vec(mode_product(t, m, ax)), K @ vec(t))


def test_mode_product_random_2x3x2(rng):
    t = rng.standard_normal((2, 3, 2))
    m = rng.standard_normal((4, 3))
    K = kron(np.eye(2), kron(m, np.eye(2)))
    np.testing.assert_allclose(vec(mode_product(t, m, 1)), K @ vec(t),
                               rtol=1e-13, atol=1e-14)


def test_mode_product_shape_mismatch(rng):
    with pytest.raises(ValueError, match="shape mismatch"):
        mode_product(np.zeros((2, 3)), np.zeros((2, 2)), 1)
    with pytest.raises(ValueError):
        mode_product(np.zeros((2, 3)), np.eye(2), 2)


# kron --------------------------------------------------------------------
def test_kron_identities():
    np.testing.assert_array_equal(kron(np.eye(2), np.eye(3)), np.eye(6))


def test_kron_scalar(rng):
    b = rng.standard_normal((3, 2))
    np.testing.assert_array_equal(kron([[2.0]], b), 2 * b)


def test_kron_vec_identity(rng):
    a, b, x = (rng.standard_normal((2, 2)) for _ in range(3))
    np.testing.assert_allclose(kron(a, b) @ vec(x), vec(b @ x @ a.T),
                               rtol=1e-13)


def test_kron_all_empty():
    np.testing.assert_array_equal(kron_all([]), [[1.0]])


# serialization -----------------------------------------------------------
@given(int_tensors)
@settings(max_examples=25)
def test_json_round_trip(t):
    np.testing.assert_array_equal(tensor_from_json(tensor_to_json(t)), t)
