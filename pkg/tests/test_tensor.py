import math

import numpy as np
import pytest

from tinierhar import functional as F
from tinierhar.errors import DataError, ShapeError, UsageError
from tinierhar.gradcheck import grad_check
from tinierhar.tensor import MacCounter, Tape, Tensor, concat, stack


def _backward(fn, *inputs):
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = fn(*inputs)
        tape.backward(loss)
    return loss


def test_linear_identity_and_bias():
    x = Tensor([1.0, 2.0])
    out = F.linear(x, Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([0.0, 0.0]))
    np.testing.assert_array_equal(out.data, [1.0, 2.0])
    out = F.linear(x, Tensor([[1.0, 1.0]]), Tensor([3.0]))
    np.testing.assert_array_equal(out.data, [6.0])


def test_linear_weight_gradient():
    x, w, b = Tensor([1.0, 2.0]), Tensor([[1.0, 1.0]]), Tensor([0.0])
    _backward(lambda x, w, b: (F.linear(x, w, b) * F.linear(x, w, b)).sum() * 0.5, x, w, b)
    np.testing.assert_allclose(w.grad, [[3.0, 6.0]])


def test_linear_shape_error_names_axes():
    with pytest.raises(ShapeError, match="axis"):
        F.linear(Tensor([1.0, 2.0, 3.0]), Tensor([[1.0, 1.0]]))


def test_sum_and_quadratic_gradients():
    x = Tensor([1.0, 2.0, 3.0])
    _backward(lambda x: x.sum(), x)
    np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])
    y = Tensor([3.0])
    _backward(lambda y: (y * y).sum() * 0.5, y)
    np.testing.assert_array_equal(y.grad, [3.0])


def test_non_scalar_loss_is_usage_error():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
        with pytest.raises(UsageError):
            tape.backward(y)


def test_gradients_accumulate_across_uses():
    x = Tensor([2.0])
    _backward(lambda x: (x + x + x).sum(), x)
    np.testing.assert_array_equal(x.grad, [3.0])


def test_repeated_backward_is_bit_identical():
    rng = np.random.default_rng(3)
    w = Tensor(rng.normal(size=(4, 3)))
    x = Tensor(rng.normal(size=(5, 3)))
    grads = []
    for _ in range(2):
        _backward(lambda w, x: F.tanh(F.linear(x, w)).sum(), w, x)
        grads.append(w.grad.copy())
    assert grads[0].tobytes() == grads[1].tobytes()


def test_activations():
    np.testing.assert_array_equal(F.relu(Tensor([-2.0, 3.0])).data, [0.0, 3.0])
    assert F.sigmoid(Tensor(0.0)).item() == 0.5
    assert F.tanh(Tensor(0.0)).item() == 0.0
    x = Tensor([0.0])
    _backward(lambda x: F.sigmoid(x).sum(), x)
    assert x.grad[0] == pytest.approx(0.25, abs=1e-12)


def test_sigmoid_is_stable_for_large_inputs():
    out = F.sigmoid(Tensor([-1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.0, 1.0])


def test_softmax_examples():
    np.testing.assert_allclose(F.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(F.softmax(Tensor([0.0, math.log(3)])).data, [0.25, 0.75], atol=1e-12)
    np.testing.assert_allclose(F.softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5], atol=1e-15)


def test_softmax_sums_to_one_and_is_shift_invariant():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(size=(3, 7)) * 10
        s = F.softmax(Tensor(x)).data
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
        np.testing.assert_allclose(F.softmax(Tensor(x + rng.normal() * 50)).data, s, atol=1e-12)


def test_cross_entropy_examples():
    assert F.cross_entropy(Tensor(np.zeros((1, 4))), [2]).item() == pytest.approx(math.log(4), abs=1e-12)
    loss = F.cross_entropy(Tensor([[10.0, -10.0]]), [0]).item()
    assert loss == pytest.approx(math.log1p(math.exp(-20)), rel=1e-9)
    assert loss == pytest.approx(2.06e-9, rel=1e-2)


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    rng = np.random.default_rng(1)
    logits = Tensor(rng.normal(size=(4, 3)))
    targets = [0, 2, 1, 1]
    _backward(lambda z: F.cross_entropy(z, targets), logits)
    expected = F.softmax(Tensor(logits.data)).data
    expected[np.arange(4), targets] -= 1.0
    np.testing.assert_allclose(logits.grad, expected / 4, atol=1e-15)


def test_cross_entropy_shift_invariance():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(6, 5))
    t = rng.integers(0, 5, size=6)
    a = F.cross_entropy(Tensor(z), t).item()
    b = F.cross_entropy(Tensor(z + 123.4), t).item()
    assert abs(a - b) < 1e-10


def test_cross_entropy_target_out_of_range_names_row():
    with pytest.raises(DataError, match="row 1"):
        F.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


def test_concat_stack_and_indexing_gradients():
    rng = np.random.default_rng(4)
    a = Tensor(rng.normal(size=(2, 3)))
    b = Tensor(rng.normal(size=(2, 2)))
    err = grad_check(lambda a, b: (concat([a, b], axis=1) * concat([b, a], axis=1)).sum(), [a, b])
    assert err < 1e-6
    c = Tensor(rng.normal(size=(3,)))
    err = grad_check(lambda a, c: (stack([a[0], c], 0) * stack([c, a[1]], 0)).sum(), [a, c])
    assert err < 1e-6


def test_grad_check_rejects_bad_eps():
    with pytest.raises(ValueError):
        grad_check(lambda x: x.sum(), [Tensor([1.0])], eps=1e-2)


def test_grad_check_linear_self_test():
    rng = np.random.default_rng(5)
    x, w, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(2, 4))), Tensor(rng.normal(size=2))
    assert grad_check(lambda x, w, b: (F.linear(x, w, b) * F.linear(x, w, b)).sum(), [x, w, b]) < 1e-6


def test_mac_counter_counts_linear():
    with MacCounter() as counter:
        F.linear(Tensor(np.ones(4)), Tensor(np.ones((2, 4))), Tensor(np.zeros(2)))
    assert counter.total == 8


def test_no_tape_means_no_recording():
    x = Tensor([1.0], requires_grad=True)
    y = x * 2.0
    assert y.data[0] == 2.0
    with Tape() as tape:
        pass
    assert len(tape) == 0
