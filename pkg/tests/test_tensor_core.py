import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from getd import tensor_core as tc
from getd.errors import CapacityError, DimensionError
from getd.expressiveness import cp_to_tr

from conftest import all_indices

shapes = st.lists(st.integers(1, 4), min_size=1, max_size=4)


def ring_strategy(max_k=4, max_rank=3, max_dim=3):
    @st.composite
    def build(draw):
        k = draw(st.integers(2, max_k))
        ranks = draw(st.lists(st.integers(1, max_rank), min_size=k, max_size=k))
        dims = draw(st.lists(st.integers(1, max_dim), min_size=k, max_size=k))
        seed = draw(st.integers(0, 2**32 - 1))
        rng = np.random.default_rng(seed)
        return tc.TensorRing(
            [rng.standard_normal((ranks[i], dims[i], ranks[(i + 1) % k])) for i in range(k)]
        )

    return build()


def cp_strategy(min_k=2, max_k=4, max_rank=4, max_dim=4):
    @st.composite
    def build(draw):
        k = draw(st.integers(min_k, max_k))
        rank = draw(st.integers(1, max_rank))
        dims = draw(st.lists(st.integers(1, max_dim), min_size=k, max_size=k))
        rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
        return tc.CpFactors([rng.standard_normal((n, rank)) for n in dims])

    return build()


# --- as_tensor / reshape ----------------------------------------------------


def test_as_tensor_row_major_layout():
    t = tc.as_tensor(np.arange(1, 7), [2, 3])
    assert t[1, 0] == 4
    assert t.dtype == np.float64 and t.flags.c_contiguous


@pytest.mark.parametrize("shape", [[0, 2], [2, -1]])
def test_as_tensor_rejects_empty_modes(shape):
    with pytest.raises(DimensionError):
        tc.as_tensor(np.zeros(4), shape)


def test_as_tensor_length_mismatch():
    with pytest.raises(DimensionError, match="does not match"):
        tc.as_tensor(np.arange(5), [2, 3])


def test_reshape_2x3_to_3x2_remaps_by_offset():
    t = tc.as_tensor(np.arange(6), [2, 3])
    r = tc.reshape(t, [3, 2])
    np.testing.assert_array_equal(r.reshape(-1), t.reshape(-1))
    for i, j in itertools.product(range(2), range(3)):
        off = i * 3 + j
        assert r[off // 2, off % 2] == t[i, j]


def test_reshape_cube_to_vector():
    t = tc.as_tensor(np.arange(1, 9), [2, 2, 2])
    np.testing.assert_array_equal(tc.reshape(t, [8]), np.arange(1, 9))


@given(shapes, st.randoms(use_true_random=False))
def test_reshape_round_trip_bit_exact(shape, r):
    rng = np.random.default_rng(r.randint(0, 2**31))
    t = rng.standard_normal(shape)
    flat = tc.reshape(t, [t.size])
    back = tc.reshape(flat, t.shape)
    assert back.tobytes() == t.tobytes()


def test_reshape_count_mismatch():
    with pytest.raises(DimensionError):
        tc.reshape(np.zeros((2, 3)), [4, 2])


# --- mode_product -----------------------------------------------------------


def test_mode_product_one_hot_selects_slice():
    t = tc.as_tensor([1, 2, 3, 4], [2, 2])
    np.testing.assert_array_equal(tc.mode_product(t, [1, 0], 1), [1, 3])


def test_mode_product_sums_slices():
    t = tc.as_tensor(np.arange(1, 9), [2, 2, 2])
    # explicit double loop over the two mode-0 slices
    expected = np.zeros((2, 2))
    for j in range(2):
        for a, b in itertools.product(range(2), range(2)):
            expected[a, b] += t[j, a, b]
    out = tc.mode_product(t, [1, 1], 0)
    np.testing.assert_array_equal(out, expected)
    np.testing.assert_array_equal(out.reshape(-1), [6, 8, 10, 12])


@given(shapes, st.data())
def test_mode_product_zero_vector(shape, data):
    mode = data.draw(st.integers(0, len(shape) - 1))
    t = np.random.default_rng(0).standard_normal(shape)
    out = tc.mode_product(t, np.zeros(shape[mode]), mode)
    assert out.shape == tuple(s for i, s in enumerate(shape) if i != mode)
    assert not out.any()


@given(st.lists(st.integers(1, 4), min_size=2, max_size=4), st.data())
def test_mode_products_commute(shape, data):
    p, q = data.draw(st.lists(st.integers(0, len(shape) - 1), min_size=2, max_size=2, unique=True))
    rng = np.random.default_rng(data.draw(st.integers(0, 1000)))
    t = rng.standard_normal(shape)
    u, v = rng.standard_normal(shape[p]), rng.standard_normal(shape[q])
    pq = tc.mode_product(tc.mode_product(t, u, p), v, q - (q > p))
    qp = tc.mode_product(tc.mode_product(t, v, q), u, p - (p > q))
    np.testing.assert_allclose(pq, qp, atol=1e-12)


def test_mode_product_inputs_unmodified():
    t = np.arange(6.0).reshape(2, 3)
    v = np.ones(3)
    tc.mode_product(t, v, 1)
    np.testing.assert_array_equal(t, np.arange(6.0).reshape(2, 3))


def test_mode_product_mismatch_names_mode_and_sizes():
    with pytest.raises(DimensionError, match=r"mode 1 has size 3.*\(2,\)"):
        tc.mode_product(np.zeros((2, 3)), np.zeros(2), 1)


def test_mode_product_bad_mode():
    with pytest.raises(DimensionError):
        tc.mode_product(np.zeros((2, 3)), np.zeros(2), 2)


# --- tucker_reconstruct -----------------------------------------------------


@given(shapes, st.integers(0, 1000))
def test_tucker_identity_factors(shape, seed):
    core = np.random.default_rng(seed).standard_normal(shape)
    out = tc.tucker_reconstruct(core, [np.eye(n) for n in shape])
    np.testing.assert_array_equal(out, core)


def test_tucker_all_ones_factors_sum_core():
    out = tc.tucker_reconstruct(np.eye(2), [np.ones((1, 2)), np.ones((1, 2))])
    assert out.shape == (1, 1) and out[0, 0] == 2.0


@pytest.mark.parametrize("i,j", [(0, 0), (1, 2), (0, 1)])
def test_tucker_one_hot_factors_select_entry(i, j):
    core = np.arange(6.0).reshape(2, 3)
    a = np.eye(2)[[i]]
    b = np.eye(3)[[j]]
    assert tc.tucker_reconstruct(core, [a, b])[0, 0] == core[i, j]


def test_tucker_matches_loop_oracle(rng):
    core = rng.standard_normal((2, 3, 2))
    factors = [rng.standard_normal((4, 2)), rng.standard_normal((2, 3)), rng.standard_normal((3, 2))]
    expected = np.zeros((4, 2, 3))
    for out_idx in itertools.product(range(4), range(2), range(3)):
        for idx in itertools.product(range(2), range(3), range(2)):
            expected[out_idx] += core[idx] * np.prod([factors[m][out_idx[m], idx[m]] for m in range(3)])
    np.testing.assert_allclose(tc.tucker_reconstruct(core, factors), expected, atol=1e-12)


def test_tucker_rank_mismatch():
    with pytest.raises(DimensionError):
        tc.tucker_reconstruct(np.zeros((2, 2)), [np.eye(2), np.eye(3)])
    with pytest.raises(DimensionError):
        tc.tucker_reconstruct(np.zeros((2, 2)), [np.eye(2)])


# --- multilinear_dot --------------------------------------------------------


def test_multilinear_dot_examples():
    assert tc.multilinear_dot([[1, 0], [1, 0]]) == 1
    assert tc.multilinear_dot([[1, 2], [3, 4], [5, 6]]) == 1 * 3 * 5 + 2 * 4 * 6 == 63


@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 100))
def test_multilinear_dot_zero_vector(length, count, seed):
    vs = list(np.random.default_rng(seed).standard_normal((count, length)))
    vs.insert(seed % (count + 1), np.zeros(length))
    assert tc.multilinear_dot(vs) == 0


def test_multilinear_dot_length_mismatch():
    with pytest.raises(DimensionError):
        tc.multilinear_dot([[1, 2], [1, 2, 3]])


# --- tensor rings -----------------------------------------------------------


@pytest.mark.parametrize(
    "shapes",
    [
        [(2, 3, 3), (2, 2, 2)],
        [(2, 3, 2)],
        [(2, 3, 1), (2, 2, 2)],
    ],
)
def test_tensor_ring_validation(shapes):
    with pytest.raises(DimensionError):
        tc.TensorRing([np.zeros(s) for s in shapes])


def test_tensor_ring_rejects_non_third_order():
    with pytest.raises(DimensionError, match="third-order"):
        tc.TensorRing([np.zeros((1, 2)), np.zeros((1, 2, 1))])


def test_tensor_ring_properties():
    ring = tc.TensorRing([np.zeros((2, 3, 4)), np.zeros((4, 5, 2))])
    assert ring.order == 2
    assert ring.ranks == (2, 4)
    assert ring.dims == (3, 5)
    assert ring.size == 24 + 40


def test_tr_element_rank_one_is_product(rng):
    cores = [rng.standard_normal((1, 3, 1)) for _ in range(4)]
    ring = tc.TensorRing(cores)
    idx = (2, 0, 1, 2)
    assert tc.tr_element(ring, idx) == pytest.approx(np.prod([c[0, i, 0] for c, i in zip(cores, idx)]), rel=1e-14)


def test_tr_element_two_cores_hand_trace(rng):
    z1, z2 = rng.standard_normal((2, 3, 2)), rng.standard_normal((2, 4, 2))
    ring = tc.TensorRing([z1, z2])
    for i, j in itertools.product(range(3), range(4)):
        a, b = z1[:, i, :], z2[:, j, :]
        expected = sum(a[p, q] * b[q, p] for p in range(2) for q in range(2))
        assert tc.tr_element(ring, (i, j)) == pytest.approx(expected, abs=1e-12)


def test_tr_element_zero_slice_annihilates(rng):
    cores = [rng.standard_normal((2, 3, 2)) for _ in range(3)]
    cores[1][:, 1, :] = 0
    assert tc.tr_element(tc.TensorRing(cores), (0, 1, 2)) == 0


@pytest.mark.parametrize("index", [(0, 3), (-1, 0), (0,)])
def test_tr_element_bounds(index):
    ring = tc.TensorRing([np.ones((1, 2, 1)), np.ones((1, 3, 1))])
    with pytest.raises((IndexError, DimensionError)):
        tc.tr_element(ring, index)


@given(ring_strategy())
def test_tr_element_agrees_with_reconstruction(ring):
    full = tc.tr_reconstruct(ring)
    assert full.shape == ring.dims
    for idx in all_indices(ring.dims):
        assert abs(full[tuple(idx)] - tc.tr_element(ring, idx)) <= 1e-12


def test_tr_reconstruct_zero_cores():
    ring = tc.TensorRing([np.zeros((2, 3, 2)), np.zeros((2, 2, 2))])
    assert not tc.tr_reconstruct(ring).any()


def test_tr_reconstruct_rank_one_two_cores_outer(rng):
    a, b = rng.standard_normal(3), rng.standard_normal(4)
    ring = tc.TensorRing([a.reshape(1, 3, 1), b.reshape(1, 4, 1)])
    np.testing.assert_allclose(tc.tr_reconstruct(ring), np.outer(a, b), atol=1e-15)


def test_tr_reconstruct_capacity_message():
    ring = tc.TensorRing([np.zeros((1, 10, 1))] * 3)
    with pytest.raises(CapacityError, match="1000 elements, cap allows 999"):
        tc.tr_reconstruct(ring, cap=999)
    assert tc.tr_reconstruct(ring, cap=1000).shape == (10, 10, 10)


def test_global_cap_round_trip():
    previous = tc.set_materialization_cap(5)
    try:
        with pytest.raises(CapacityError):
            tc.tr_reconstruct(tc.TensorRing([np.ones((1, 3, 1))] * 2))
    finally:
        tc.set_materialization_cap(previous)
    assert tc.get_materialization_cap() == previous == tc.DEFAULT_MATERIALIZATION_CAP


@given(ring_strategy(max_k=4, max_rank=3, max_dim=3))
def test_tr_reconstruct_backward_matches_finite_differences(ring):
    rng = np.random.default_rng(0)
    g = rng.standard_normal(ring.dims)
    grads = tc.tr_reconstruct_backward(ring, g)

    def f(cores):
        return float(np.sum(tc.tr_reconstruct(tc.TensorRing(cores)) * g))

    cores = [c.copy() for c in ring.cores]
    h = 1e-6
    for ci, c in enumerate(cores):
        for idx in all_indices(c.shape)[:6]:
            idx = tuple(idx)
            old = c[idx]
            c[idx] = old + h
            up = f(cores)
            c[idx] = old - h
            down = f(cores)
            c[idx] = old
            assert grads[ci][idx] == pytest.approx((up - down) / (2 * h), abs=1e-6, rel=1e-6)


def test_chain_merge_backward_single_core(rng):
    c = rng.standard_normal((2, 3, 2))
    g = rng.standard_normal((2, 3, 2))
    np.testing.assert_array_equal(tc.chain_merge_backward([c], g)[0], g)


# --- CP ---------------------------------------------------------------------


def test_cp_one_hot_outer_product():
    c = tc.CpFactors([np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]])])
    np.testing.assert_array_equal(tc.cp_reconstruct(c), [[0, 1], [0, 0]])


def test_cp_rank_zero_rejected_and_zero_vectors():
    with pytest.raises(DimensionError):
        tc.CpFactors([np.zeros((2, 0)), np.zeros((3, 0))])
    c = tc.CpFactors([np.zeros((2, 1)), np.zeros((3, 1))])
    assert not tc.cp_reconstruct(c).any()


def test_cp_inconsistent_factors():
    with pytest.raises(DimensionError):
        tc.CpFactors([np.zeros((2, 2)), np.zeros((3, 3))])
    with pytest.raises(DimensionError):
        tc.CpFactors([])


def test_cp_rank3_triple_loop(rng):
    c = tc.CpFactors([rng.standard_normal((n, 3)) for n in (2, 3, 2)])
    expected = np.zeros((2, 3, 2))
    for i, j, k in itertools.product(range(2), range(3), range(2)):
        for r in range(3):
            expected[i, j, k] += c.factors[0][i, r] * c.factors[1][j, r] * c.factors[2][k, r]
    np.testing.assert_allclose(tc.cp_reconstruct(c), expected, atol=1e-13)


@given(cp_strategy())
def test_cp_ring_identity(c):
    ring = cp_to_tr(c)
    assert ring.ranks == (c.rank,) * len(c.factors)
    np.testing.assert_allclose(tc.tr_reconstruct(ring), tc.cp_reconstruct(c), atol=1e-12)


def test_cp_capacity():
    c = tc.CpFactors([np.ones((10, 1))] * 3)
    with pytest.raises(CapacityError):
        tc.cp_reconstruct(c, cap=100)
