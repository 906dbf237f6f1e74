import math

import numpy as np
import pytest

from oracles import gru_cell_scalar, invariant_gradient_check, lstm_cell_scalar
from tinierhar import functional as F
from tinierhar import layers as L
from tinierhar.costs import dwsep_params, standard_conv_params
from tinierhar.errors import ShapeError
from tinierhar.gradcheck import grad_check
from tinierhar.tensor import Tensor


def _arrays(p) -> dict:
    return {name: t.data for name, t in p.named_parameters()}


def test_gru_zero_params_examples():
    p = L.GruParams.zeros(1, 1)
    np.testing.assert_array_equal(L.gru_cell(Tensor([0.0]), Tensor([4.0]), p).data, [2.0])
    np.testing.assert_array_equal(L.gru_cell(Tensor([0.0]), Tensor([0.0]), p).data, [0.0])


def test_gru_cell_matches_scalar_reference():
    rng = np.random.default_rng(0)
    for _ in range(10):
        i, h = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        p = L.GruParams.init(rng, i, h)
        x, h0 = rng.normal(size=i), rng.normal(size=h)
        got = L.gru_cell(Tensor(x), Tensor(h0), p).data
        np.testing.assert_allclose(got, gru_cell_scalar(x, h0, _arrays(p)), atol=1e-12, rtol=0)


def test_gru_sequence_equals_repeated_cell():
    rng = np.random.default_rng(1)
    p = L.GruParams.init(rng, 3, 4)
    seq = rng.normal(size=(6, 3))
    h = np.zeros(4)
    expected = []
    for t in range(6):
        h = gru_cell_scalar(seq[t], h, _arrays(p))
        expected.append(h)
    np.testing.assert_allclose(L.gru_sequence(Tensor(seq), p).data, np.array(expected), atol=1e-12)


def test_lstm_examples():
    p = L.LstmParams.zeros(1, 1)
    h, c = L.lstm_cell(Tensor([0.0]), (Tensor([0.0]), Tensor([0.0])), p)
    assert h.data[0] == 0.0 and c.data[0] == 0.0
    h, c = L.lstm_cell(Tensor([0.0]), (Tensor([0.0]), Tensor([4.0])), p)
    assert c.data[0] == 2.0
    assert h.data[0] == pytest.approx(0.5 * math.tanh(2.0), abs=1e-15)
    assert h.data[0] == pytest.approx(0.48201, abs=1e-5)


def test_lstm_cell_matches_scalar_reference():
    rng = np.random.default_rng(2)
    for _ in range(10):
        i, hs = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        p = L.LstmParams.init(rng, i, hs)
        x, h0, c0 = rng.normal(size=i), rng.normal(size=hs), rng.normal(size=hs)
        h, c = L.lstm_cell(Tensor(x), (Tensor(h0), Tensor(c0)), p)
        rh, rc = lstm_cell_scalar(x, h0, c0, _arrays(p))
        np.testing.assert_allclose(h.data, rh, atol=1e-12, rtol=0)
        np.testing.assert_allclose(c.data, rc, atol=1e-12, rtol=0)


def test_bigru_single_step():
    rng = np.random.default_rng(3)
    bi = L.BiGruParams.init(rng, 2, 3)
    x = rng.normal(size=(1, 2))
    out = bi(Tensor(x)).data
    zero = np.zeros(3)
    expected = np.concatenate([gru_cell_scalar(x[0], zero, _arrays(bi.fwd)), gru_cell_scalar(x[0], zero, _arrays(bi.bwd))])
    np.testing.assert_allclose(out[0], expected, atol=1e-12)


def test_bigru_reversal_symmetry():
    rng = np.random.default_rng(4)
    fwd, bwd = L.GruParams.init(rng, 2, 3), L.GruParams.init(rng, 2, 3)
    seq = rng.normal(size=(5, 2))
    out = L.bigru_forward(Tensor(seq), fwd, bwd).data
    rev = L.bigru_forward(Tensor(seq[::-1].copy()), bwd, fwd).data
    np.testing.assert_allclose(rev[::-1], np.concatenate([out[:, 3:], out[:, :3]], axis=1), atol=1e-12)


def test_bigru_zero_params_gives_zero():
    out = L.bigru_forward(Tensor(np.random.default_rng(5).normal(size=(4, 2))), L.GruParams.zeros(2, 3), L.GruParams.zeros(2, 3))
    np.testing.assert_array_equal(out.data, 0.0)


def test_attention_examples():
    rng = np.random.default_rng(6)
    seq = rng.normal(size=(5, 3))
    zero = L.AttnAggParams(Tensor(np.zeros((1, 3))), Tensor([0.0]))
    np.testing.assert_allclose(L.attention_aggregate(Tensor(seq), zero).data, seq.mean(axis=0), atol=1e-15)
    p = L.AttnAggParams.init(rng, 3)
    np.testing.assert_array_equal(L.attention_aggregate(Tensor(seq[:1]), p).data, seq[0])
    spiky = seq.copy()
    spiky[2, 0] = 40.0
    dom = L.AttnAggParams(Tensor([[1.0, 0.0, 0.0]]), Tensor([0.0]))
    np.testing.assert_allclose(L.attention_aggregate(Tensor(spiky), dom).data, spiky[2], atol=1e-9)


def test_attention_weights_are_a_distribution():
    rng = np.random.default_rng(7)
    for _ in range(20):
        p = L.AttnAggParams.init(rng, 4)
        alpha = L.attention_weights(Tensor(rng.normal(size=(3, 6, 4)) * 5), p).data
        assert np.all(alpha >= 0)
        np.testing.assert_allclose(alpha.sum(axis=-1), 1.0, atol=1e-12)


def test_dwsep_zero_main_path_is_identity():
    rng = np.random.default_rng(8)
    p = L.DwSepBlockParams.init(rng, 4, 4)
    for t in (p.depthwise, p.pointwise, p.pointwise_bias):
        t.data[...] = 0.0
    x = rng.normal(size=(4, 10))
    np.testing.assert_array_equal(L.dwsep_block_forward(Tensor(x), p, training=False).data, x)


def test_dwsep_pool_halves_time():
    p = L.DwSepBlockParams.init(np.random.default_rng(9), 3, 5, use_pool=True)
    assert L.dwsep_block_forward(Tensor(np.ones((3, 8))), p).shape == (5, 4)


def test_dwsep_projection_iff_channels_change():
    rng = np.random.default_rng(10)
    assert L.DwSepBlockParams.init(rng, 3, 5).projection is not None
    assert L.DwSepBlockParams.init(rng, 5, 5).projection is None
    assert L.DwSepBlockParams.init(rng, 3, 5, use_shortcut=False).projection is None
    p = L.DwSepBlockParams.init(rng, 3, 5)
    with pytest.raises(ShapeError):
        L.DwSepBlockParams(p.depthwise, p.pointwise, p.pointwise_bias, p.bn, None)


def test_dwsep_matches_hand_composition():
    rng = np.random.default_rng(11)
    p = L.DwSepBlockParams.init(rng, 3, 6, use_pool=True)
    p.bn.stats.mean[:] = rng.normal(size=6)
    p.projection.bn.stats.var[:] = rng.uniform(0.5, 2.0, size=6)
    x = Tensor(rng.normal(size=(2, 3, 12)))
    h = F.conv1d(x, p.depthwise, None, padding="same", groups=3)
    h = F.relu(F.batchnorm1d(F.conv1d(h, p.pointwise, p.pointwise_bias), p.bn.gamma, p.bn.beta, p.bn.stats, False))
    s = F.batchnorm1d(F.conv1d(x, p.projection.weight), p.projection.bn.gamma, p.projection.bn.beta, p.projection.bn.stats, False)
    expected = F.maxpool1d(h + s, 2, 2).data
    np.testing.assert_allclose(L.dwsep_block_forward(x, p, False).data, expected, atol=1e-12, rtol=0)


def test_separable_pair_is_cheaper_for_zoo_configs():
    for c_in in (1, 2, 3, 6, 9, 16, 22, 77):
        for f in (1, 2, 4, 8, 16, 32):
            if f > 5 / 4:
                assert dwsep_params(c_in, f, 5) < standard_conv_params(c_in, f, 5)


def _probe(shape, seed):
    return Tensor(np.random.default_rng(seed).normal(size=shape))


def test_layer_gradients():
    rng = np.random.default_rng(12)
    gru = L.GruParams.init(rng, 3, 2)
    lstm = L.LstmParams.init(rng, 3, 2)
    attn = L.AttnAggParams.init(rng, 3)
    sa = L.SelfAttentionParams.init(rng, 3)
    block = L.DwSepBlockParams.init(rng, 2, 3, use_pool=True)
    seq = Tensor(rng.normal(size=(2, 4, 3)))
    pr = _probe((2, 4, 2), 1)

    assert grad_check(lambda s, *ps: (L.gru_sequence(s, gru) * pr).sum(), [seq] + [t for _, t in gru.named_parameters()]) < 1e-4
    assert grad_check(lambda s, *ps: (L.lstm_sequence(s, lstm) * pr).sum(), [seq] + [t for _, t in lstm.named_parameters()]) < 1e-4
    pa = _probe((2, 3), 2)
    assert grad_check(lambda s, w: (L.attention_aggregate(s, L.AttnAggParams(w, attn.bias)) * pa).sum(), [seq, attn.weight]) < 1e-4
    ps = _probe((2, 4, 3), 3)
    named = {"s": seq, **{k.replace(".", "_"): t for k, t in sa.named_parameters()}}

    def f_sa(s, **kw):
        return (L.self_attention(s, sa) * ps).sum()

    err, zero = invariant_gradient_check(f_sa, named, invariant=["key_bias"])
    assert err < 1e-4 and zero < 1e-12
    x = Tensor(rng.normal(size=(2, 2, 8)))
    pb = _probe((2, 3, 4), 4)
    named = {"x": x, **{k.replace(".", "_"): t for k, t in block.named_parameters()}}

    def f_block(x, **kw):
        return (L.dwsep_block_forward(x, block, True) * pb).sum()

    err, zero = invariant_gradient_check(f_block, named, invariant=["pointwise_bias"])
    assert err < 1e-4 and zero < 1e-12


def test_named_parameters_and_buffers():
    block = L.DwSepBlockParams.init(np.random.default_rng(13), 2, 3)
    names = [n for n, _ in block.named_parameters()]
    assert names == ["depthwise", "pointwise", "pointwise_bias", "bn.gamma", "bn.beta", "projection.weight",
                     "projection.bn.gamma", "projection.bn.beta"]
    assert [n for n, _ in block.named_buffers()] == ["bn.stats", "projection.bn.stats"]


def test_attention_bias_gradient_is_zero():
    # softmax ignores a shared shift of the scores, so the score bias has no effect
    rng = np.random.default_rng(14)
    attn = L.AttnAggParams.init(rng, 3)
    seq = Tensor(rng.normal(size=(2, 4, 3)))
    pa = _probe((2, 3), 2)
    attn.bias.requires_grad = True
    from tinierhar.tensor import Tape

    with Tape() as tape:
        tape.backward((L.attention_aggregate(seq, attn) * pa).sum())
    assert abs(attn.bias.grad[0]) < 1e-12
