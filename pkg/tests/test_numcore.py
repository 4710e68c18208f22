import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rgbxtrack.errors import ConfigError, DimensionError, NumericError, UsageError
from rgbxtrack.numcore import (
    Tape,
    Tensor,
    backward,
    concat,
    exp,
    gather_rows,
    grad_check,
    layer_norm,
    log,
    matmul,
    maximum,
    no_grad,
    param,
    scaled_attention,
    softmax_rows,
    sqrt,
    tsum,
)


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def naive_attention(q, k, v):
    d = q.shape[1]
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        logits = [sum(q[i, t] * k[j, t] for t in range(d)) / math.sqrt(d) for j in range(k.shape[0])]
        top = max(logits)
        w = [math.exp(x - top) for x in logits]
        z = sum(w)
        for j in range(k.shape[0]):
            out[i] += w[j] / z * v[j]
    return out


# -- matmul --------------------------------------------------------------------------


def test_matmul_identity(rng):
    a = rng.normal(size=(2, 2))
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), Tensor(a)).data, a)


def test_matmul_hand_example():
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
    np.testing.assert_array_equal(out.data, [[17.0], [39.0]])


def test_matmul_zero(rng):
    out = matmul(Tensor(np.zeros((3, 4))), Tensor(rng.normal(size=(4, 2))))
    assert np.all(out.data == 0)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_matches_loop_oracle(rng):
    for _ in range(20):
        m, k, n = rng.integers(1, 17, 3)
        a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b),
                                   rtol=0, atol=1e-12)


def test_matmul_gradient_rule(rng):
    a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 2)))
    g = rng.normal(size=(3, 2))
    backward(matmul(a, b), seed=g)
    np.testing.assert_allclose(a.grad, g @ b.data.T)
    np.testing.assert_allclose(b.grad, a.data.T @ g)


def test_non_finite_output_raises():
    with pytest.raises(NumericError):
        log(Tensor([0.0]))
    with pytest.raises(NumericError):
        exp(Tensor([1000.0]))
    with pytest.raises(NumericError):
        Tensor([np.nan])


# -- softmax ---------------------------------------------------------------------------


def test_softmax_examples():
    np.testing.assert_allclose(softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    np.testing.assert_allclose(softmax_rows(Tensor([[0.0, math.log(3.0)]])).data, [[0.25, 0.75]],
                               atol=1e-15)
    np.testing.assert_array_equal(softmax_rows(Tensor([[1000.0, 1000.0]])).data, [[0.5, 0.5]])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)),
              elements=st.floats(-50, 50)),
       st.floats(-100, 100))
def test_softmax_rows_sum_to_one_and_shift_invariant(m, c):
    p = softmax_rows(Tensor(m)).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(softmax_rows(Tensor(m + c)).data, p, atol=1e-12)


# -- layer norm ----------------------------------------------------------------------------


def test_layer_norm_examples():
    one, zero = Tensor(np.ones(4)), Tensor(np.zeros(4))
    np.testing.assert_array_equal(layer_norm(Tensor([[3.0] * 4]), one, zero).data, np.zeros((1, 4)))
    out = layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
    np.testing.assert_allclose(out, [[1.0, -1.0]], atol=1e-4)
    shifted = layer_norm(Tensor([[1.0, 2.0, 4.0, 8.0]]), one, Tensor(np.full(4, 5.0))).data
    assert shifted.mean() == pytest.approx(5.0, abs=1e-12)


def test_layer_norm_gradients(rng):
    x = param(rng.normal(size=(3, 5)))
    gamma, beta = param(rng.normal(size=5)), param(rng.normal(size=5))
    probe = rng.normal(size=(3, 5))

    def f():
        return tsum(layer_norm(x, gamma, beta) * probe)
    for t in (x, gamma, beta):
        assert grad_check(f, t) < 1e-6


# -- attention -------------------------------------------------------------------------------


def test_attention_single_key(rng):
    q, k, v = rng.normal(size=(5, 4)), rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
    out = scaled_attention(q, k, v).data
    np.testing.assert_allclose(out, np.repeat(v, 5, axis=0), atol=1e-15)


def test_attention_identical_keys(rng):
    q, v = rng.normal(size=(3, 4)), rng.normal(size=(6, 4))
    k = np.repeat(rng.normal(size=(1, 4)), 6, axis=0)
    np.testing.assert_allclose(scaled_attention(q, k, v).data,
                               np.repeat(v.mean(axis=0, keepdims=True), 3, axis=0), atol=1e-12)


def test_attention_dominant_logit(rng):
    d = 4
    k = rng.normal(size=(3, d)) * 0.1
    q = np.zeros((1, d))
    q[0, 0] = 1.0
    k[1, 0] = 50.0 * math.sqrt(d) + k[1, 0]
    k[0, 0] = k[2, 0] = 0.0
    v = rng.normal(size=(3, d))
    out = scaled_attention(q, k, v).data
    np.testing.assert_allclose(out, naive_attention(q, k, v), atol=1e-12)
    np.testing.assert_allclose(out[0], v[1], atol=1e-9)


def test_attention_matches_loop_oracle(rng):
    q, k, v = rng.normal(size=(4, 8)), rng.normal(size=(6, 8)), rng.normal(size=(6, 8))
    np.testing.assert_allclose(scaled_attention(q, k, v).data, naive_attention(q, k, v), atol=1e-12)
    multi = scaled_attention(q, k, v, n_heads=2).data
    for h in range(2):
        sl = slice(4 * h, 4 * h + 4)
        np.testing.assert_allclose(multi[:, sl], naive_attention(q[:, sl], k[:, sl], v[:, sl]),
                                   atol=1e-12)


def test_attention_heads_must_divide_width(rng):
    x = rng.normal(size=(2, 6))
    with pytest.raises(ConfigError):
        scaled_attention(x, x, x, n_heads=4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_attention_output_is_convex_combination(seed):
    r = np.random.default_rng(seed)
    q, k, v = r.normal(size=(3, 4)) * 3, r.normal(size=(5, 4)) * 3, r.normal(size=(5, 4))
    out = scaled_attention(q, k, v, n_heads=2).data
    assert np.all(out >= v.min(axis=0) - 1e-12)
    assert np.all(out <= v.max(axis=0) + 1e-12)


# -- backward ---------------------------------------------------------------------------------------


def test_backward_sum():
    x = param([1.0, 2.0, 3.0])
    backward(tsum(x))
    np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])


def test_backward_square():
    x = param(3.0)
    backward(x * x)
    assert x.grad == 6.0


def test_backward_softmax_chain(rng):
    x, w = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 5)))
    probe = rng.normal(size=(3, 5))

    def f():
        return tsum(softmax_rows(matmul(x, w)) * probe)
    assert grad_check(f, x) < 1e-4
    assert grad_check(f, w) < 1e-4


def test_backward_non_scalar_raises():
    x = param([1.0, 2.0])
    with pytest.raises(UsageError):
        backward(x * 2.0)


def test_backward_accumulates_until_cleared():
    x = param([1.0, 2.0])
    backward(tsum(x * 3.0))
    backward(tsum(x * 3.0))
    np.testing.assert_array_equal(x.grad, [6.0, 6.0])
    x.zero_grad()
    backward(tsum(x * 3.0))
    np.testing.assert_array_equal(x.grad, [3.0, 3.0])


def test_shared_subexpression_counts_both_paths():
    x = param(2.0)
    y = x * x
    backward(y + y)
    assert x.grad == 8.0


def test_tape_is_topological(rng):
    a, b = param(rng.normal(size=(2, 2))), param(rng.normal(size=(2, 2)))
    c = matmul(a, b)
    loss = tsum(c * c + exp(a))
    tape = Tape.record(loss)
    pos = {id(n): i for i, n in enumerate(tape.nodes)}
    assert len(pos) == len(tape.nodes)
    for n in tape.nodes:
        for p in n._parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(n)]
    assert tape.nodes[-1] is loss


def test_no_grad_records_nothing():
    x = param([1.0, 2.0])
    with no_grad():
        y = tsum(x * x)
    assert not y.requires_grad
    with pytest.raises(UsageError):
        backward(y)


def test_maximum_and_sqrt_gradients(rng):
    x = param(rng.uniform(0.5, 2.0, size=6))
    y = param(rng.uniform(0.5, 2.0, size=6))

    def f():
        return tsum(sqrt(maximum(x, y)) * concat([x[:3], y[3:]], axis=0))
    assert grad_check(f, x) < 1e-6
    assert grad_check(f, y) < 1e-6


def test_gather_rows_zero_pads_and_backprops(rng):
    a = param(rng.normal(size=(4, 3)))
    idx = np.array([[0, -1], [3, 3]])
    out = gather_rows(a, idx)
    np.testing.assert_array_equal(out.data[0, 1], np.zeros(3))
    np.testing.assert_array_equal(out.data[1, 0], a.data[3])
    backward(tsum(out))
    np.testing.assert_array_equal(a.grad[3], np.full(3, 2.0))
    np.testing.assert_array_equal(a.grad[1], np.zeros(3))


# -- grad_check --------------------------------------------------------------------------


def test_grad_check_quadratic(rng):
    x = param(rng.normal(size=7))
    assert grad_check(lambda: tsum(x * x) * 0.5, x) < 1e-8


def test_grad_check_constant():
    x = param([1.0, 2.0])
    assert grad_check(lambda: Tensor(3.0), x) == 0.0


def test_grad_check_detects_wrong_gradient(rng):
    x = param(rng.normal(size=3))

    def f():
        # forward uses the data directly, so the tape sees a constant
        return tsum(x * 0.0) + Tensor(float(np.sum(x.data ** 2)))
    assert grad_check(f, x) > 0.1


def test_ops_are_deterministic(rng):
    a, b = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
    r1 = softmax_rows(matmul(Tensor(a), Tensor(b))).data
    r2 = softmax_rows(matmul(Tensor(a), Tensor(b))).data
    assert r1.tobytes() == r2.tobytes()
