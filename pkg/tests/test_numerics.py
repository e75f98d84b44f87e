import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vqg.numerics import (AdamState, LstmParams, LstmState, NumericError, ShapeError, Tensor, add, adam_step,
                          cross_entropy, embedding_lookup, finite_diff_check, lstm_step, matmul, mul, no_grad,
                          prelu, relative_error, reshape, sigmoid, softmax, tanh, total)

finite = st.floats(-30, 30, allow_nan=False, allow_infinity=False)


# -- softmax -----------------------------------------------------------------


def test_softmax_uniform_on_equal_logits():
    np.testing.assert_allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_softmax_log2_ratio():
    np.testing.assert_allclose(softmax(Tensor([0.0, math.log(2.0)])).data, [1 / 3, 2 / 3], atol=1e-15)


def test_softmax_large_logits_do_not_overflow():
    out = softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(1.0) and out[1] < 1e-300


def test_softmax_empty_raises():
    with pytest.raises(ShapeError):
        softmax(Tensor(np.zeros(0)))


@given(arrays(np.float64, st.integers(1, 12), elements=finite))
def test_softmax_is_a_positive_distribution(x):
    p = softmax(Tensor(x)).data
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.all(p > 0)


# -- prelu -------------------------------------------------------------------


def test_prelu_definition():
    np.testing.assert_array_equal(prelu(Tensor([2.0, -2.0]), Tensor([0.25])).data, [2.0, -0.5])


@given(arrays(np.float64, 6, elements=finite))
def test_prelu_reductions(x):
    np.testing.assert_array_equal(prelu(Tensor(x), Tensor([0.0])).data, np.maximum(x, 0.0))
    np.testing.assert_array_equal(prelu(Tensor(x), Tensor([1.0])).data, x)


def test_prelu_per_channel_slope_and_bad_shape():
    out = prelu(Tensor([-1.0, -1.0]), Tensor([0.1, 0.2])).data
    np.testing.assert_allclose(out, [-0.1, -0.2])
    with pytest.raises(ShapeError):
        prelu(Tensor([1.0, 2.0, 3.0]), Tensor([0.1, 0.2]))


# -- autodiff ----------------------------------------------------------------


def test_backward_of_simple_graph():
    a = Tensor([[1.0, 2.0]], True)
    b = Tensor([[3.0], [4.0]], True)
    y = matmul(a, b)  # 11
    y.backward()
    np.testing.assert_array_equal(a.grad, [[3.0, 4.0]])
    np.testing.assert_array_equal(b.grad, [[1.0], [2.0]])


def test_backward_requires_scalar():
    with pytest.raises(ShapeError):
        Tensor([1.0, 2.0], True).backward()


def test_shared_leaf_accumulates_gradient():
    x = Tensor([3.0], True)
    total([mul(x, x), x]).backward()  # d/dx (x^2 + x) = 2x + 1
    np.testing.assert_array_equal(x.grad, [7.0])


def test_no_grad_records_nothing():
    x = Tensor([1.0], True)
    with no_grad():
        y = mul(x, x)
    assert y._parents == ()


def test_embedding_lookup_scatters_repeated_ids():
    table = Tensor(np.arange(6.0).reshape(2, 3), True)
    out = embedding_lookup(table, [2, 2, 0])
    np.testing.assert_array_equal(out.data, [[2, 5], [2, 5], [0, 3]])
    matmul(reshape(out, (1, 6)), Tensor(np.ones((6, 1)))).backward()
    np.testing.assert_array_equal(table.grad, [[1, 0, 2], [1, 0, 2]])


def test_cross_entropy_matches_manual_value():
    logits = Tensor([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]], True)
    ce = cross_entropy(logits, [2, 0], [1.0, 0.5])
    lse = math.log(math.exp(1) + math.exp(2) + math.exp(3))
    assert ce.item() == pytest.approx((lse - 3.0) + 0.5 * math.log(3.0), abs=1e-14)


@pytest.mark.parametrize("op", [sigmoid, tanh, lambda t: prelu(t, Tensor([0.3]))])
def test_elementwise_gradients_match_finite_differences(op):
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(3, 4)), True)
    w = Tensor(rng.normal(size=(4, 1)))
    f = lambda: matmul(Tensor(np.ones((1, 3))), matmul(op(x), w))
    report = finite_diff_check(f, [x])
    assert report.passed, report


def test_sigmoid_is_stable_at_extremes():
    out = sigmoid(Tensor([-800.0, 800.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.0, 1.0], atol=1e-300)


# -- LSTM --------------------------------------------------------------------


def test_lstm_zero_parameters_give_zero_state():
    params = LstmParams.zeros(5, 4)
    state = LstmState(Tensor(np.full(4, 0.7)), Tensor(np.zeros(4)))
    out = lstm_step(params, Tensor(np.linspace(-1, 1, 5)), state)
    np.testing.assert_array_equal(out.hidden.data, np.zeros(4))
    np.testing.assert_array_equal(out.memory.data, np.zeros(4))


def _oracle_params():
    # same integer recipe as tests/oracles/lstm_oracle.py
    I, H = 3, 2
    val = lambda k: ((k * 7919) % 1000) / 1000.0 - 0.5
    W = [[val(r * 4 * H + c + 1) for c in range(4 * H)] for r in range(I + H)]
    b = [val(100 + c) for c in range(4 * H)]
    return LstmParams(Tensor(W), Tensor(b))


def test_lstm_step_matches_scalar_oracle():
    out = lstm_step(_oracle_params(), Tensor([0.3, -0.2, 0.9]),
                    LstmState(Tensor([0.1, -0.4]), Tensor([0.5, 0.25])))
    np.testing.assert_allclose(out.hidden.data, [-0.035601396699128963, -0.10226686711349238], rtol=0, atol=1e-14)
    np.testing.assert_allclose(out.memory.data, [-0.06964327389526281, -0.2759277777816983], rtol=0, atol=1e-14)


def test_lstm_batched_rows_equal_single_steps():
    rng = np.random.default_rng(0)
    params = LstmParams.init(3, 4, rng)
    xs = rng.normal(size=(2, 3))
    batch = lstm_step(params, Tensor(xs), LstmState.zeros(4, batch=2))
    for r in range(2):
        single = lstm_step(params, Tensor(xs[r]), LstmState.zeros(4))
        np.testing.assert_allclose(batch.hidden.data[r], single.hidden.data, atol=1e-15)


def test_lstm_memory_accumulates_over_identical_inputs():
    params = LstmParams.init(3, 4, np.random.default_rng(1), scale_=0.5)
    x = Tensor([0.5, -0.5, 1.0])
    s1 = lstm_step(params, x, LstmState.zeros(4))
    s2 = lstm_step(params, x, s1)
    assert not np.allclose(s1.memory.data, s2.memory.data)


def test_lstm_shape_errors_name_the_tensor():
    params = LstmParams.zeros(3, 4)
    with pytest.raises(ShapeError, match="input"):
        lstm_step(params, Tensor(np.zeros(2)), LstmState.zeros(4))
    with pytest.raises(ShapeError, match="hidden"):
        lstm_step(params, Tensor(np.zeros(3)), LstmState(Tensor(np.zeros(5)), Tensor(np.zeros(4))))


def test_lstm_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    params = LstmParams.init(3, 4, rng, scale_=0.5)
    x = Tensor(rng.normal(size=(2, 3)), True)

    def f():
        s = LstmState.zeros(4, batch=2)
        for _ in range(3):
            s = lstm_step(params, x, s)
        return matmul(matmul(Tensor(np.ones((1, 2))), s.hidden), Tensor(np.arange(1.0, 5.0).reshape(4, 1)))

    report = finite_diff_check(f, [params.weight, params.bias, x])
    assert report.passed, report


# -- Adam --------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params_unchanged():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    for _ in range(5):
        params, state = adam_step(params, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])
    assert state.step == 5


def test_adam_first_step_moves_by_lr():
    # oracle: tests/oracles/adam_oracle.py
    params, state = adam_step({"w": np.array([1.0])}, {"w": np.array([3.0])}, AdamState(), lr=1e-3)
    assert params["w"][0] == pytest.approx(0.9990000000033333, abs=1e-15)


def test_adam_on_quadratic_bowl_follows_oracle_and_converges():
    w, state, trace = np.array([1.0]), AdamState(), [1.0]
    for _ in range(200):
        out, state = adam_step({"w": w}, {"w": 2 * w}, state, lr=0.05)
        w = out["w"]
        trace.append(float(w[0]))
    assert trace[10] == pytest.approx(0.5122934202364287, abs=1e-12)
    assert trace[-1] == pytest.approx(2.8451333237271486e-05, abs=1e-12)
    # momentum overshoots zero, so |w| is not monotone step to step; its running envelope is
    envelope = [max(abs(v) for v in trace[i:i + 25]) for i in range(0, 200, 25)]
    assert all(a > b for a, b in zip(envelope, envelope[1:]))
    assert abs(trace[-1]) < 1e-4


def test_adam_is_pure_and_deterministic():
    params = {"w": np.array([0.3, 0.1])}
    grads = {"w": np.array([0.2, -0.4])}
    a, sa = adam_step(params, grads, AdamState())
    b, sb = adam_step(params, grads, AdamState())
    assert a["w"].tobytes() == b["w"].tobytes()
    assert params["w"].tolist() == [0.3, 0.1]


def test_adam_rejects_non_finite_gradient_by_name():
    with pytest.raises(NumericError, match="decoder.bias"):
        adam_step({"decoder.bias": np.zeros(2)}, {"decoder.bias": np.array([np.nan, 0.0])}, AdamState())


# -- finite differences ------------------------------------------------------


def test_finite_diff_sum_of_squares():
    w = Tensor(np.random.default_rng(0).normal(size=(3, 3)), True)
    f = lambda: total([matmul(Tensor(np.ones((1, 3))), matmul(mul(w, w), Tensor(np.ones((3, 1)))))])
    report = finite_diff_check(f, [w], h=1e-5)
    assert report.max_rel_error < 1e-7


def test_finite_diff_constant_function_is_below_tolerance():
    w = Tensor([1.0, 2.0], True)
    report = finite_diff_check(lambda: Tensor(np.array(5.0)), [w])
    assert report.max_rel_error < report.tol


def test_finite_diff_non_finite_function_raises():
    w = Tensor([1.0], True)
    with pytest.raises(NumericError):
        finite_diff_check(lambda: Tensor(np.array(np.inf)), [w])


def test_finite_diff_detects_a_wrong_gradient():
    from vqg.numerics import _result
    w = Tensor([0.5, 1.5], True)

    def bad_square(t):
        return _result(t.data ** 2, (t,), lambda g: (g * 3 * t.data,))  # should be 2x

    report = finite_diff_check(lambda: total([matmul(Tensor([[1.0, 1.0]]), _col(bad_square(w)))]), [w])
    assert not report.passed


def _col(t):
    return reshape(t, (t.shape[0], 1))


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-12, 2e-12) == pytest.approx(1e-4)
    assert relative_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)


@settings(max_examples=25)
@given(st.lists(finite, min_size=2, max_size=5))
def test_add_and_mul_gradients_are_exact(values):
    a = Tensor(np.array(values), True)
    b = Tensor(np.array(values[::-1]), True)
    ones = Tensor(np.ones((1, len(values))))
    out = matmul(ones, _col(add(mul(a, b), a)))
    out.backward()
    np.testing.assert_allclose(a.grad, np.array(values[::-1]) + 1.0)
    np.testing.assert_allclose(b.grad, np.array(values))
