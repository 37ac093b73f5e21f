"""Primitive-level checks. The matmul oracle here is the load-bearing
one: everything downstream assumes the pinned accumulation order."""

import numpy as np
import pytest

from fusionbench import numerics as nm


def triple_loop_matmul(a, b):
    """Reference product: per-element sequential-k accumulation into a
    zero-initialized Python float. Deliberately scalar code."""
    m, k = a.shape
    k2, p = b.shape
    assert k == k2
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            acc = 0.0
            for kk in range(k):
                acc += a[i, kk] * b[kk, j]
            out[i, j] = acc
    return out


def test_matmul_bitwise_matches_triple_loop():
    rng = np.random.default_rng(7)
    for trial in range(20):
        m, k, p = rng.integers(1, 17, 3)
        scale = 10.0 ** float(rng.integers(-3, 4))
        a = rng.standard_normal((m, k)) * scale
        b = rng.standard_normal((k, p)) * scale
        got = nm.matmul(a, b)
        want = triple_loop_matmul(a, b)
        assert got.dtype == np.float64
        # bit-exact, not approximately equal
        assert np.array_equal(got, want), f"trial {trial} diverged"


def test_matmul_bitwise_under_threads():
    rng = np.random.default_rng(8)
    a = rng.standard_normal((130, 40))
    b = rng.standard_normal((40, 23))
    want = nm.matmul(a, b)
    try:
        nm.set_threads(4)  # clamped to the host maximum
        got = nm.matmul(a, b)
    finally:
        nm.set_threads(1)
    assert np.array_equal(got, want)


def test_matmul_shape_and_dtype_guards():
    with pytest.raises(ValueError):
        nm.matmul(np.zeros((2, 3)), np.zeros((4, 2)))
    with pytest.raises(TypeError):
        nm.matmul(np.zeros((2, 3), dtype=np.float32), np.zeros((3, 2)))


def test_matmul_empty_dims():
    a = np.zeros((0, 3))
    b = np.ones((3, 2))
    assert nm.matmul(a, b).shape == (0, 2)
    c = np.ones((2, 0))
    d = np.ones((0, 3))
    assert np.array_equal(nm.matmul(c, d), np.zeros((2, 3)))


def test_softmax_rows_matches_reference():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((6, 9)) * 30.0
    s = nm.softmax_rows(x)
    assert np.allclose(np.sum(s, axis=1), 1.0, atol=1e-12)
    # reference via mpmath-free exact recipe: same max-shift formula
    e = np.exp(x - x.max(axis=1, keepdims=True))
    assert np.array_equal(s, e / e.sum(axis=1, keepdims=True))
    # extreme logits stay finite
    y = np.array([[1e4, -1e4, 0.0]])
    sy = nm.softmax_rows(y)
    assert np.all(np.isfinite(sy)) and abs(sy.sum() - 1.0) < 1e-12


def test_softmax_cols_is_rows_transposed():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((5, 4))
    assert np.array_equal(nm.softmax_cols(x), nm.softmax_rows(x.T).T)


def test_sigmoid_stable_and_symmetric():
    x = np.array([-745.0, -30.0, 0.0, 30.0, 745.0])
    s = nm.sigmoid(x)
    assert np.all(np.isfinite(s))
    assert s[2] == 0.5
    assert np.all(np.diff(s) >= 0)
    assert np.allclose(s + nm.sigmoid(-x), 1.0, atol=1e-15)


def test_layernorm_moments_and_affine():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((7, 16)) * 5 + 3
    gamma = np.ones(16)
    beta = np.zeros(16)
    out, _ = nm.layernorm(x, gamma, beta)
    assert np.allclose(out.mean(axis=1), 0.0, atol=1e-12)
    assert np.allclose(out.std(axis=1), 1.0, atol=1e-3)  # eps bias only
    g = rng.standard_normal(16)
    b = rng.standard_normal(16)
    out2, _ = nm.layernorm(x, g, b)
    assert np.array_equal(out2, out * g + b)


def test_layernorm_backward_finite_diff():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((3, 8))
    g = rng.standard_normal(8)
    b = rng.standard_normal(8)
    dout = rng.standard_normal((3, 8))
    out, cache = nm.layernorm(x, g, b)
    dx, dg, db = nm.layernorm_backward(cache, dout)
    h = 1e-6
    for arr, grad in ((x, dx), (g, dg), (b, db)):
        it = np.nditer(arr, flags=["multi_index"])
        for _ in range(min(arr.size, 10)):
            ix = it.multi_index
            old = arr[ix]
            arr[ix] = old + h
            up, _ = nm.layernorm(x, g, b)
            arr[ix] = old - h
            dn, _ = nm.layernorm(x, g, b)
            arr[ix] = old
            num = np.sum((up - dn) * dout) / (2 * h)
            assert abs(num - grad[ix]) < 1e-5 * max(1.0, abs(num))
            it.iternext()


def test_flop_counter_charges_and_nests():
    a = np.ones((3, 4))
    b = np.ones((4, 5))
    with nm.FlopCounter() as outer:
        nm.matmul(a, b)
        with nm.FlopCounter() as inner:
            nm.softmax_rows(np.ones((2, 6)))
        assert inner.total == 3 * 12
    assert outer.total == 2 * 3 * 4 * 5 + 3 * 12
    # nothing charged outside a counter context
    before = outer.total
    nm.matmul(a, b)
    assert outer.total == before


def test_flop_convention_per_primitive():
    with nm.FlopCounter() as fc:
        nm.sigmoid(np.zeros(10))
    assert fc.total == 20
    with nm.FlopCounter() as fc:
        nm.layernorm(np.ones((4, 6)), np.ones(6), np.zeros(6))
    assert fc.total == 7 * 24 + 4 * 4
    with nm.FlopCounter() as fc:
        nm.relu(np.ones(50))
    assert fc.total == 0
    with nm.FlopCounter() as fc:
        nm.ew_add(np.ones((2, 3)), np.ones(3))
        nm.scale(np.ones(7), 2.0)
        nm.reduce_sum(np.ones((3, 3)))
    assert fc.total == 6 + 7 + 9


def test_rng_reproducible_and_streams_independent():
    a = nm.Rng(123).normal((4, 4))
    b = nm.Rng(123).normal((4, 4))
    assert np.array_equal(a, b)
    c1 = nm.Rng(123).child(0).normal(8)
    c2 = nm.Rng(123).child(1).normal(8)
    assert not np.array_equal(c1, c2)
    # child streams replay too
    assert np.array_equal(c1, nm.Rng(123).child(0).normal(8))
    # nested keys differ from flat ones
    assert not np.array_equal(
        nm.Rng(123).child(0).child(1).normal(4), nm.Rng(123).child(1).normal(4)
    )


def test_assert_finite_raises():
    nm.assert_finite(np.ones(3), "ok")
    with pytest.raises(FloatingPointError):
        nm.assert_finite(np.array([1.0, np.nan]), "bad")
