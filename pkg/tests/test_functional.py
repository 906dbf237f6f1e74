import numpy as np
import pytest

from oracles import conv1d_naive, maxpool_naive
from tinierhar import functional as F
from tinierhar.errors import ConfigurationError, ShapeError
from tinierhar.gradcheck import grad_check
from tinierhar.tensor import MacCounter, Tape, Tensor


def test_conv1d_examples():
    out = F.conv1d(Tensor([[1.0, 2.0, 3.0]]), Tensor([[[1.0, 1.0, 1.0]]]), Tensor([0.0]), padding="same")
    np.testing.assert_array_equal(out.data, [[3.0, 6.0, 5.0]])
    out = F.conv1d(Tensor([[5.0, 7.0]]), Tensor([[[1.0]]]), Tensor([0.0]), padding="valid")
    np.testing.assert_array_equal(out.data, [[5.0, 7.0]])
    out = F.conv1d(
        Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]),
        Tensor([[[1.0, 0.0]], [[0.0, 1.0]]]),
        Tensor([0.0, 0.0]),
        padding="valid",
        groups=2,
    )
    np.testing.assert_array_equal(out.data, [[1.0, 2.0], [5.0, 6.0]])


def test_same_padding_preserves_length_and_splits_floor_left():
    assert F.resolve_padding("same", 4) == (1, 2)
    assert F.resolve_padding("same", 5) == (2, 2)
    assert F.resolve_padding("valid", 5) == (0, 0)
    x = Tensor(np.random.default_rng(0).normal(size=(2, 9)))
    assert F.conv1d(x, Tensor(np.ones((3, 2, 4))), padding="same").shape == (3, 9)


def test_conv1d_errors():
    with pytest.raises(ConfigurationError):
        F.conv1d(Tensor(np.ones((3, 5))), Tensor(np.ones((4, 1, 3))), groups=2)
    with pytest.raises(ConfigurationError):
        F.conv1d(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 1, 3))), padding="valid")
    with pytest.raises(ShapeError):
        F.conv1d(Tensor(np.ones((2, 5))), Tensor(np.ones((1, 3, 3))))


@pytest.mark.parametrize("groups_kind", ["full", "depthwise", "mid"])
def test_conv1d_matches_naive_oracle(groups_kind):
    rng = np.random.default_rng({"full": 1, "depthwise": 2, "mid": 3}[groups_kind])
    for _ in range(10):
        g = int(rng.integers(1, 4))
        c_in = g * int(rng.integers(1, 3))
        groups = {"full": 1, "depthwise": c_in, "mid": g}[groups_kind]
        c_out = groups * int(rng.integers(1, 3))
        k = int(rng.integers(1, 6))
        t = int(rng.integers(k, 14))
        stride = int(rng.integers(1, 4))
        padding = ["same", "valid"][int(rng.integers(0, 2))]
        x = rng.normal(size=(c_in, t))
        w = rng.normal(size=(c_out, c_in // groups, k))
        b = rng.normal(size=c_out)
        left, right = F.resolve_padding(padding, k)
        got = F.conv1d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding, groups=groups).data
        np.testing.assert_allclose(got, conv1d_naive(x, w, b, stride, left, right, groups), atol=1e-12, rtol=0)


def test_conv_output_length():
    assert F.conv_output_length(10, 5, 1, "same") == 10
    assert F.conv_output_length(10, 5, 2, "same") == 5
    assert F.conv_output_length(10, 5, 1, "valid") == 6


def test_conv1d_mac_count():
    with MacCounter() as counter:
        F.conv1d(Tensor(np.ones((4, 10))), Tensor(np.ones((4, 1, 5))), padding="same", groups=4)
    assert counter.total == 4 * 5 * 10


def test_maxpool_examples():
    np.testing.assert_array_equal(F.maxpool1d(Tensor([[7.0, 7.0]]), 2, 2).data, [[7.0]])
    np.testing.assert_array_equal(F.maxpool1d(Tensor([[1.0, 3.0, 2.0, 5.0]]), 2, 2).data, [[3.0, 5.0]])
    np.testing.assert_array_equal(F.maxpool1d(Tensor([[1.0, 3.0, 2.0, 5.0]]), 2, 1).data, [[3.0, 3.0, 5.0]])
    with pytest.raises(ConfigurationError):
        F.maxpool1d(Tensor([[1.0]]), 2, 2)


def test_maxpool_ties_route_to_first_and_conserve_gradient():
    x = Tensor([[7.0, 7.0, 1.0, 3.0, 3.0]], requires_grad=True)
    with Tape() as tape:
        y = F.maxpool1d(x, 2, 1)
        loss = (y * Tensor([[1.0, 2.0, 3.0, 4.0]])).sum()
        tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [[1.0, 2.0, 0.0, 3.0 + 4.0, 0.0]])
    assert x.grad.sum() == 10.0


def test_maxpool_matches_naive_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        k, stride = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x = rng.normal(size=(int(rng.integers(1, 4)), int(rng.integers(k, 15))))
        np.testing.assert_array_equal(F.maxpool1d(Tensor(x), k, stride).data, maxpool_naive(x, k, stride))


def test_batchnorm_examples():
    stats = F.RunningStats.fresh(1)
    out = F.batchnorm1d(Tensor(np.full((2, 1, 3), 4.0)), Tensor([1.0]), Tensor([0.5]), stats, training=True)
    np.testing.assert_allclose(out.data, 0.5)
    out = F.batchnorm1d(Tensor([[[-1.0, 1.0]]]), Tensor([1.0]), Tensor([0.0]), F.RunningStats.fresh(1), True)
    np.testing.assert_allclose(out.data, [[[-1.0, 1.0]]], atol=1e-4)
    out = F.batchnorm1d(Tensor([[[1.0]]]), Tensor([2.0]), Tensor([3.0]), F.RunningStats.fresh(1), False)
    assert out.data.item() == pytest.approx(5.0, abs=1e-4)


def test_batchnorm_running_stats_update():
    stats = F.RunningStats.fresh(1)
    F.batchnorm1d(Tensor([[[1.0, 3.0]]]), Tensor([1.0]), Tensor([0.0]), stats, True)
    assert stats.mean[0] == pytest.approx(0.1 * 2.0)
    assert stats.var[0] == pytest.approx(0.9 + 0.1 * 2.0)  # unbiased batch variance is 2


def test_batchnorm_needs_two_values_in_training():
    with pytest.raises(ConfigurationError):
        F.batchnorm1d(Tensor(np.ones((1, 2, 1))), Tensor([1.0, 1.0]), Tensor([0.0, 0.0]), F.RunningStats.fresh(2), True)


def test_activation_dispatch():
    np.testing.assert_array_equal(F.activation(Tensor([-1.0, 2.0]), "relu").data, [0.0, 2.0])
    assert F.activation(Tensor(0.0), "sigmoid").item() == 0.5
    assert F.activation(Tensor(0.0), "tanh").item() == 0.0


@pytest.mark.parametrize("stride,padding,groups", [(1, "same", 1), (2, "valid", 1), (1, "same", 4), (3, "same", 2)])
def test_conv1d_gradients(stride, padding, groups):
    rng = np.random.default_rng(stride * 10 + groups)
    x = Tensor(rng.normal(size=(2, 4, 9)))
    w = Tensor(rng.normal(size=(4, 4 // groups, 3)))
    b = Tensor(rng.normal(size=4))
    probe = rng.normal(size=F.conv1d(x, w, b, stride, padding, groups).shape)
    err = grad_check(lambda x, w, b: (F.conv1d(x, w, b, stride, padding, groups) * Tensor(probe)).sum(), [x, w, b])
    assert err < 1e-6


def test_batchnorm_gradients_both_modes():
    rng = np.random.default_rng(11)
    x = Tensor(rng.normal(size=(3, 2, 4)))
    g, b = Tensor(rng.normal(size=2)), Tensor(rng.normal(size=2))
    probe = Tensor(rng.normal(size=(3, 2, 4)))
    stats = F.RunningStats(rng.normal(size=2), rng.uniform(0.5, 2, size=2))
    for training in (True, False):
        frozen = F.RunningStats(stats.mean.copy(), stats.var.copy())

        def f(x, g, b):
            s = F.RunningStats(frozen.mean.copy(), frozen.var.copy())
            return (F.batchnorm1d(x, g, b, s, training) * probe).sum()

        assert grad_check(f, [x, g, b]) < 1e-5
