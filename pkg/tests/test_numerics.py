import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mtlm.errors import ContractViolation, InvalidInputError
from mtlm.numerics import AdamState, LrSchedule, adam_step, lr_at
from mtlm.numerics import tensor as T
from mtlm.numerics.functional import log_softmax_rows, masked_cross_entropy, softmax_rows


def test_softmax_examples():
    np.testing.assert_allclose(softmax_rows([0.0, 0.0]), [0.5, 0.5], atol=0)
    np.testing.assert_allclose(softmax_rows([1000.0, 1000.0, 1000.0]), [1 / 3] * 3, rtol=1e-15)
    # frozen from an arbitrary-precision evaluation of e^x / sum e^x
    np.testing.assert_allclose(softmax_rows([1.0, 2.0, 3.0]), [0.09003057, 0.24472847, 0.66524096], atol=1e-5)


def test_softmax_matches_mpmath():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 40
    x = [1.0, 2.0, 3.0]
    z = sum(mpmath.e ** v for v in x)
    ref = [float(mpmath.e ** v / z) for v in x]
    np.testing.assert_allclose(softmax_rows(x), ref, rtol=1e-14)


def test_softmax_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        softmax_rows([0.0, np.nan])
    with pytest.raises(InvalidInputError):
        softmax_rows([np.inf, 0.0])


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-500, 500, allow_nan=False)))
def test_softmax_rows_are_distributions(x):
    p = softmax_rows(x)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)
    np.testing.assert_allclose(np.exp(log_softmax_rows(x)), p, atol=1e-12)


def test_masked_cross_entropy_examples():
    lp = np.full((3, 4), -math.log(4))
    assert masked_cross_entropy(lp, [0, 1, 2, 3], [0, 1, 2]) == pytest.approx(3 * math.log(4), abs=1e-12)
    assert masked_cross_entropy(lp, [0, 1, 2, 3], []) == 0.0
    table = np.array([[-0.1, -2.0, -3.0], [-1.5, -0.7, -4.0]])
    # row r predicts targets[r + 1]
    assert masked_cross_entropy(table, [0, 2, 0], [0, 1]) == pytest.approx(3.0 + 1.5, abs=1e-15)
    with pytest.raises(IndexError):
        masked_cross_entropy(table, [0, 2, 0], [2])


def test_backward_examples():
    w = T.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    g = T.backward(T.sum_all(w), [w])
    np.testing.assert_array_equal(g[0], np.ones((2, 3)))
    const = T.Tensor(np.ones(3)).sum()
    g = T.backward(const, {"w": w})
    np.testing.assert_array_equal(g["w"], np.zeros((2, 3)))
    with pytest.raises(ContractViolation):
        T.backward(w * 2.0, [w])


def _fd_check(f, x, h=1e-6):
    base = x.data.copy()
    num = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        for sign in (1, -1):
            x.data = base.copy()
            x.data[idx] += sign * h
            num[idx] += sign * float(f().data) / (2 * h)
    x.data = base
    ana = T.backward(f(), [x])[0]
    np.testing.assert_allclose(ana, num, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("op", ["gelu", "relu", "layer_norm", "softmax", "log_softmax", "matmul", "transpose",
                                "embedding", "gather"])
def test_op_gradients(op):
    rng = np.random.default_rng(1)
    x = T.Tensor(rng.normal(size=(2, 3, 4)) + 0.3, requires_grad=True)
    wts = rng.normal(size=(2, 3, 4))
    if op == "gelu":
        f = lambda: T.sum_all(T.gelu(x) * wts)
    elif op == "relu":
        f = lambda: T.sum_all(T.relu(x) * wts)
    elif op == "layer_norm":
        g, b = T.Tensor(rng.normal(size=4)), T.Tensor(rng.normal(size=4))
        f = lambda: T.sum_all(T.layer_norm(x, g, b) * wts)
    elif op == "softmax":
        f = lambda: T.sum_all(T.softmax(x) * wts)
    elif op == "log_softmax":
        f = lambda: T.sum_all(T.log_softmax(x) * wts)
    elif op == "matmul":
        m = T.Tensor(rng.normal(size=(4, 5)))
        w5 = rng.normal(size=(2, 3, 5))
        f = lambda: T.sum_all((x @ m) * w5)
    elif op == "transpose":
        r = T.Tensor(rng.normal(size=(3, 2)))
        f = lambda: T.sum_all(x.transpose(0, 2, 1) @ r)
    elif op == "embedding":
        ids = np.array([[0, 1, 1], [2, 0, 1]])
        table = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w3 = rng.normal(size=(2, 3, 4))
        _fd_check(lambda: T.sum_all(T.embedding(table, ids) * w3), table)
        return
    else:
        index = (np.array([0, 1, 1]), np.array([2, 0, 2]), np.array([3, 1, 0]))
        f = lambda: T.gather_sum(x, index)
    _fd_check(f, x)


def test_adam_examples():
    p = {"w": np.array([0.5])}
    st0 = AdamState.zeros_like(p)
    p1, st1 = adam_step(p, {"w": np.array([0.0])}, st0, 0.1)
    np.testing.assert_array_equal(p1["w"], p["w"])
    assert st1.step == 1
    p1, st1 = adam_step(p, {"w": np.array([1.0])}, st0, 0.1)
    assert p1["w"][0] - 0.5 == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)
    with pytest.raises(ContractViolation):
        adam_step(p, {"w": np.zeros(2)}, st0, 0.1)


def test_adam_two_steps_closed_form():
    b1, b2, eps, lr, g = 0.9, 0.999, 1e-8, 0.01, 0.3
    p = {"w": np.array([1.0])}
    st = AdamState.zeros_like(p)
    for _ in range(2):
        p, st = adam_step(p, {"w": np.array([g])}, st, lr)
    m1, v1 = (1 - b1) * g, (1 - b2) * g * g
    m2, v2 = b1 * m1 + (1 - b1) * g, b2 * v1 + (1 - b2) * g * g
    assert st.m["w"][0] == pytest.approx(m2, rel=1e-15)
    assert st.v["w"][0] == pytest.approx(v2, rel=1e-15)
    # each bias-corrected step is lr * g / (|g| + eps) for a constant gradient
    step1 = lr * (m1 / (1 - b1)) / (math.sqrt(v1 / (1 - b2)) + eps)
    step2 = lr * (m2 / (1 - b1 ** 2)) / (math.sqrt(v2 / (1 - b2 ** 2)) + eps)
    assert p["w"][0] == pytest.approx(1.0 - step1 - step2, abs=1e-15)


def test_lr_schedule_values():
    s = LrSchedule()
    assert (s.warmup_steps, s.peak_lr, s.min_lr) == (5000, 2e-4, 1e-6)
    assert lr_at(s, 0) == 0.0
    assert lr_at(s, s.warmup_steps) == pytest.approx(2e-4, abs=1e-18)
    assert lr_at(s, s.total_steps) == pytest.approx(1e-6, abs=1e-18)
    assert lr_at(s, s.total_steps + 12345) == pytest.approx(1e-6, abs=1e-18)
    w = s.warmup_steps
    assert abs(lr_at(s, w) - lr_at(s, w + 1e-9)) < 1e-12
    with pytest.raises(ContractViolation):
        LrSchedule(warmup_steps=0)
    with pytest.raises(ContractViolation):
        LrSchedule(min_lr=1e-3, peak_lr=1e-4)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 200000))
def test_lr_is_bounded_and_monotone_pieces(step):
    s = LrSchedule()
    lr = lr_at(s, step)
    assert 0.0 <= lr <= s.peak_lr
    if step < s.warmup_steps:
        assert lr <= lr_at(s, step + 1)
    elif step >= s.warmup_steps:
        assert lr >= lr_at(s, step + 1)
        assert lr >= s.min_lr
