import math

import numpy as np
import pytest

from evfusion import autodiff as ad
from evfusion.autodiff import Tensor, backward, finite_diff_check
from evfusion.errors import ContractError, DimensionError, NumericError


def test_matmul_identity():
    out = ad.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3, 4], [5, 6]]))
    assert np.array_equal(out.data, [[3, 4], [5, 6]])


def test_matmul_hand_computed():
    out = ad.matmul(Tensor([[1, 2]]), Tensor([[3], [4]]))
    assert np.array_equal(out.data, [[11.0]])


def test_matmul_against_triple_loop_oracle():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    expected = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                expected[i, j] += a[i, k] * b[k, j]
    out = ad.matmul(Tensor(a), Tensor(b))
    assert np.max(np.abs(out.data - expected)) < 1e-12


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_backward():
    a = Tensor([[1.0, 2.0]], requires_grad=True)
    b = Tensor([[3.0], [4.0]], requires_grad=True)
    backward(ad.matmul(a, b))
    assert np.array_equal(a.grad, [[3.0, 4.0]])
    assert np.array_equal(b.grad, [[1.0], [2.0]])


def test_softmax_symmetry():
    out = ad.softmax_rows(Tensor([[0.0, 0.0]]))
    assert np.array_equal(out.data, [[0.5, 0.5]])


def test_softmax_large_values_no_overflow():
    out = ad.softmax_rows(Tensor([[1000.0, 1000.0]]))
    assert np.all(np.isfinite(out.data))
    assert np.array_equal(out.data, [[0.5, 0.5]])


def test_softmax_direct_exponentiation_oracle():
    x = np.array([[1.0, 2.0, 3.0]])
    expected = np.exp(x) / np.exp(x).sum()
    out = ad.softmax_rows(Tensor(x))
    assert np.max(np.abs(out.data - expected)) < 1e-12


def test_softmax_nonfinite_input_raises():
    with pytest.raises(NumericError):
        ad.softmax_rows(Tensor([[1.0, np.nan]]))


def test_softmax_rows_sum_to_one_and_in_range():
    rng = np.random.default_rng(3)
    for _ in range(50):
        out = ad.softmax_rows(Tensor(rng.normal(scale=5, size=(4, 7)))).data
        assert np.all(out >= 0.0) and np.all(out <= 1.0)
        assert np.max(np.abs(out.sum(axis=1) - 1.0)) < 1e-9


def test_softmax_shift_invariance():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 5))
    for c in (-100.0, 0.37, 42.0):
        a = ad.softmax_rows(Tensor(x)).data
        b = ad.softmax_rows(Tensor(x + c)).data
        assert np.max(np.abs(a - b)) < 1e-12
        assert np.array_equal(np.argmax(a, axis=1), np.argmax(b, axis=1))


def test_attention_single_key_returns_value():
    q = Tensor([[1.0, 2.0]])
    k = Tensor([[1.0, 2.0]])
    v = Tensor([[7.0]])
    out = ad.scaled_dot_attention(q, k, v)
    assert np.allclose(out.data, [[7.0]])


def test_attention_identical_keys_average_values():
    q = Tensor([[0.3, -0.2]])
    k = Tensor([[1.0, 1.0], [1.0, 1.0]])
    v = Tensor([[1.0], [3.0]])
    out = ad.scaled_dot_attention(q, k, v)
    assert np.allclose(out.data, [[2.0]])


def test_attention_matches_composed_oracle():
    rng = np.random.default_rng(11)
    q = rng.normal(size=(2, 4))
    k = rng.normal(size=(3, 4))
    v = rng.normal(size=(3, 5))
    logits = q @ k.T / 2.0  # sqrt(4)
    w = np.exp(logits - logits.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    expected = w @ v
    out = ad.scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v))
    assert np.max(np.abs(out.data - expected)) < 1e-12


def test_attention_output_in_value_convex_envelope():
    rng = np.random.default_rng(12)
    for _ in range(100):
        q = Tensor(rng.normal(size=(3, 4)))
        k = Tensor(rng.normal(size=(5, 4)))
        v = rng.normal(size=(5, 6))
        out = ad.scaled_dot_attention(q, k, Tensor(v)).data
        assert np.all(out >= v.min(axis=0) - 1e-9)
        assert np.all(out <= v.max(axis=0) + 1e-9)


def test_concat_split_rows_inverse_bit_exact():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(4, 3))
    joined = ad.concat_rows(Tensor(a), Tensor(b))
    top, bottom = ad.split_rows(joined, 2)
    assert np.array_equal(top.data, a)
    assert np.array_equal(bottom.data, b)


def test_layer_norm_constant_row_gives_bias():
    gain = Tensor([[2.0, 2.0, 2.0]])
    bias = Tensor([[1.0, -1.0, 0.5]])
    out = ad.layer_norm(Tensor([[3.0, 3.0, 3.0]]), gain, bias)
    assert np.array_equal(out.data, bias.data)


def test_mean_rows_hand_computed():
    out = ad.mean_rows(Tensor([[1.0, 3.0], [5.0, 7.0]]))
    assert np.array_equal(out.data, [[3.0, 5.0]])


def test_backward_sum_gives_ones():
    x = Tensor(np.random.default_rng(1).normal(size=(3, 4)), requires_grad=True)
    backward(ad.sum_all(x))
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_elementwise_square():
    x = Tensor([[1.0, 2.0]], requires_grad=True)
    backward(ad.sum_all(ad.mul(x, x)))
    assert np.allclose(x.grad, [[2.0, 4.0]])


def test_backward_requires_scalar_loss():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        backward(ad.add(x, x))


def test_backward_accumulates_without_reset():
    x = Tensor([[1.0, 2.0]], requires_grad=True)
    loss = ad.sum_all(x)
    backward(loss)
    backward(loss)
    assert np.array_equal(x.grad, [[2.0, 2.0]])


def test_backward_shared_subexpression_counted_once_per_use():
    # y = x + x has gradient 2 per element
    x = Tensor([[3.0]], requires_grad=True)
    backward(ad.sum_all(ad.add(x, x)))
    assert np.array_equal(x.grad, [[2.0]])


def test_forward_determinism():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 4))

    def f(arr):
        return ad.softmax_rows(ad.matmul(Tensor(arr), Tensor(arr.T))).data

    assert np.array_equal(f(x), f(x))


def test_finite_diff_exact_for_quadratic():
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    a = Tensor(rng.normal(size=(3, 3)))

    def f():
        return ad.sum_all(ad.mul(ad.matmul(a, x), x))

    assert finite_diff_check(f, [x], eps=1e-5) < 1e-8


def test_finite_diff_detects_wrong_backward():
    rng = np.random.default_rng(10)
    a = Tensor(rng.normal(size=(3, 3)))
    b = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 3)))
    ad.set_backward_fault(True)
    try:
        err = finite_diff_check(
            lambda: ad.sum_all(ad.mul(ad.matmul(a, b), w)), [b], eps=1e-5)
    finally:
        ad.set_backward_fault(False)
    assert err > 1e-1


def test_finite_diff_rejects_nondeterministic_f():
    state = {"n": 0}

    def f():
        state["n"] += 1
        return Tensor([[float(state["n"])]])

    with pytest.raises(ContractError):
        finite_diff_check(f, [Tensor([[1.0]], requires_grad=True)], eps=1e-5)


def test_finite_diff_eps_contract():
    x = Tensor([[1.0]], requires_grad=True)
    with pytest.raises(ContractError):
        finite_diff_check(lambda: ad.sum_all(x), [x], eps=0.5)


def test_all_primitives_pass_finite_diff():
    from evfusion.gradcheck import primitive_checks, PRIMITIVE_TOL
    results = primitive_checks(seed=123)
    assert all(err < PRIMITIVE_TOL for err in results.values()), results


def test_gelu_matches_tanh_formula():
    x = np.linspace(-3, 3, 13)
    expected = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))
    out = ad.gelu(Tensor(x.reshape(1, -1)))
    assert np.allclose(out.data.reshape(-1), expected, atol=1e-15)
