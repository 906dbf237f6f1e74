"""Composite layers: residual separable blocks, recurrent cells, aggregation.

Each layer is a plain dataclass of parameter tensors plus a free function
that runs it. Sequences are ``[T, D]`` or batched ``[B, T, D]``; the
convolutional block takes ``[C, T]`` or ``[B, C, T]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Iterator, Optional, Tuple

import numpy as np

from . import functional as F
from .errors import ShapeError
from .functional import RunningStats
from .tensor import Tensor, concat, getitem, matmul, reshape, stack, transpose


class ParamGroup:
    """Mixin that enumerates the tensors and buffers held in dataclass fields."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for f in fields(self):
            value = getattr(self, f.name)
            name = f"{prefix}{f.name}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, ParamGroup):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, ParamGroup):
                        yield from item.named_parameters(f"{name}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, RunningStats]]:
        for f in fields(self):
            value = getattr(self, f.name)
            name = f"{prefix}{f.name}"
            if isinstance(value, RunningStats):
                yield name, value
            elif isinstance(value, ParamGroup):
                yield from value.named_buffers(name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, ParamGroup):
                        yield from item.named_buffers(f"{name}.{i}.")


def _uniform(rng: np.random.Generator, bound: float, shape) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _param(values) -> Tensor:
    return Tensor(values, requires_grad=True)


# dense ----------------------------------------------------------------------

@dataclass
class LinearParams(ParamGroup):
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, fan_in: int, fan_out: int) -> "LinearParams":
        bound = 1.0 / math.sqrt(fan_in)
        return cls(_uniform(rng, bound, (fan_out, fan_in)), _uniform(rng, bound, (fan_out,)))

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


@dataclass
class BatchNormParams(ParamGroup):
    gamma: Tensor
    beta: Tensor
    stats: RunningStats

    @classmethod
    def init(cls, channels: int) -> "BatchNormParams":
        return cls(_param(np.ones(channels)), _param(np.zeros(channels)), RunningStats.fresh(channels))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return F.batchnorm1d(x, self.gamma, self.beta, self.stats, training)


# residual depthwise separable block ---------------------------------------

@dataclass
class ProjectionParams(ParamGroup):
    """1x1 convolution (no bias) followed by batch norm on the shortcut."""

    weight: Tensor
    bn: BatchNormParams


@dataclass
class DwSepBlockParams(ParamGroup):
    depthwise: Tensor  # [C_in, 1, K]
    pointwise: Tensor  # [C_out, C_in, 1]
    pointwise_bias: Tensor  # [C_out]
    bn: BatchNormParams
    projection: Optional[ProjectionParams] = None
    use_pool: bool = False
    use_shortcut: bool = True

    def __post_init__(self):
        c_in, c_out = self.in_channels, self.out_channels
        needs_projection = self.use_shortcut and c_in != c_out
        if needs_projection != (self.projection is not None):
            raise ShapeError(
                f"projection must exist iff the shortcut changes channels ({c_in} -> {c_out})"
            )
        if self.kernel_size % 2 == 0:
            raise ShapeError(f"depthwise kernel size must be odd, got {self.kernel_size}")

    @property
    def in_channels(self) -> int:
        return self.depthwise.shape[0]

    @property
    def out_channels(self) -> int:
        return self.pointwise.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.depthwise.shape[2]

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        c_in: int,
        c_out: int,
        kernel_size: int = 5,
        use_pool: bool = False,
        use_shortcut: bool = True,
    ) -> "DwSepBlockParams":
        depthwise = _uniform(rng, 1.0 / math.sqrt(kernel_size), (c_in, 1, kernel_size))
        bound = 1.0 / math.sqrt(c_in)
        pointwise = _uniform(rng, bound, (c_out, c_in, 1))
        pointwise_bias = _uniform(rng, bound, (c_out,))
        bn = BatchNormParams.init(c_out)
        projection = None
        if use_shortcut and c_in != c_out:
            projection = ProjectionParams(_uniform(rng, bound, (c_out, c_in, 1)), BatchNormParams.init(c_out))
        return cls(depthwise, pointwise, pointwise_bias, bn, projection, use_pool, use_shortcut)


def dwsep_block_forward(x: Tensor, p: DwSepBlockParams, training: bool = False) -> Tensor:
    """Depthwise -> pointwise -> BN -> ReLU, plus shortcut, then optional pooling.

    The residual sum is taken before the stride-2 max pool so both paths
    have the same length.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    h = F.conv1d(x, p.depthwise, None, padding="same", groups=p.in_channels)
    h = F.conv1d(h, p.pointwise, p.pointwise_bias)
    h = F.relu(p.bn(h, training))
    if p.use_shortcut:
        if p.projection is None:
            shortcut = x
        else:
            shortcut = p.projection.bn(F.conv1d(x, p.projection.weight), training)
        if shortcut.shape != h.shape:
            raise ShapeError(f"main path {h.shape} and shortcut {shortcut.shape} disagree")
        h = h + shortcut
    if p.use_pool:
        h = F.maxpool1d(h, 2, 2)
    return reshape(h, h.shape[1:]) if squeeze else h


# GRU ------------------------------------------------------------------------

_GRU_GATES = ("r", "z", "n")


@dataclass
class GruParams(ParamGroup):
    """Per-gate weights for reset (r), update (z) and candidate (n)."""

    W_r: Tensor
    W_z: Tensor
    W_n: Tensor
    U_r: Tensor
    U_z: Tensor
    U_n: Tensor
    b_ir: Tensor
    b_iz: Tensor
    b_in: Tensor
    b_hr: Tensor
    b_hz: Tensor
    b_hn: Tensor

    @property
    def input_size(self) -> int:
        return self.W_r.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.W_r.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, input_size: int, hidden_size: int) -> "GruParams":
        b = 1.0 / math.sqrt(hidden_size)
        h, i = hidden_size, input_size
        return cls(
            *(_uniform(rng, b, (h, i)) for _ in _GRU_GATES),
            *(_uniform(rng, b, (h, h)) for _ in _GRU_GATES),
            *(_uniform(rng, b, (h,)) for _ in range(6)),
        )

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "GruParams":
        h, i = hidden_size, input_size
        return cls(
            *(_param(np.zeros((h, i))) for _ in _GRU_GATES),
            *(_param(np.zeros((h, h))) for _ in _GRU_GATES),
            *(_param(np.zeros(h)) for _ in range(6)),
        )


def gru_cell(x_t: Tensor, h: Tensor, p: GruParams) -> Tensor:
    """One GRU step; the reset gate scales the recurrent candidate term."""
    r = F.sigmoid(F.linear(x_t, p.W_r, p.b_ir) + F.linear(h, p.U_r, p.b_hr))
    z = F.sigmoid(F.linear(x_t, p.W_z, p.b_iz) + F.linear(h, p.U_z, p.b_hz))
    n = F.tanh(F.linear(x_t, p.W_n, p.b_in) + r * F.linear(h, p.U_n, p.b_hn))
    return (1.0 - z) * n + z * h


def _as_batched_sequence(seq: Tensor) -> Tuple[Tensor, bool]:
    if seq.ndim == 2:
        return reshape(seq, (1,) + seq.shape), True
    if seq.ndim != 3:
        raise ShapeError(f"sequence must be [T, D] or [B, T, D], got {seq.shape}")
    return seq, False


def gru_sequence(seq: Tensor, p: GruParams, reverse: bool = False) -> Tensor:
    """Run a GRU over ``[B, T, D]`` from a zero state; returns ``[B, T, H]``."""
    seq, squeeze = _as_batched_sequence(seq)
    b, t, d = seq.shape
    if d != p.input_size:
        raise ShapeError(f"GRU expects input size {p.input_size}, sequence axis -1 is {d}")
    hs = p.hidden_size
    w_in = concat([p.W_r, p.W_z, p.W_n], axis=0)
    b_in = concat([p.b_ir, p.b_iz, p.b_in], axis=0)
    u_h = concat([p.U_r, p.U_z, p.U_n], axis=0)
    b_h = concat([p.b_hr, p.b_hz, p.b_hn], axis=0)
    projected = F.linear(seq, w_in, b_in)  # input projections for every step at once
    h = Tensor(np.zeros((b, hs)))
    outputs = [None] * t
    steps = range(t - 1, -1, -1) if reverse else range(t)
    for step in steps:
        xp = getitem(projected, (slice(None), step))
        hp = F.linear(h, u_h, b_h)
        r = F.sigmoid(getitem(xp, (slice(None), slice(0, hs))) + getitem(hp, (slice(None), slice(0, hs))))
        z = F.sigmoid(
            getitem(xp, (slice(None), slice(hs, 2 * hs))) + getitem(hp, (slice(None), slice(hs, 2 * hs)))
        )
        n = F.tanh(getitem(xp, (slice(None), slice(2 * hs, None))) + r * getitem(hp, (slice(None), slice(2 * hs, None))))
        h = n + z * (h - n)
        outputs[step] = h
    out = stack(outputs, axis=1)
    return reshape(out, out.shape[1:]) if squeeze else out


def bigru_forward(seq: Tensor, fwd: GruParams, bwd: GruParams) -> Tensor:
    """Concatenate per-step states of a left-to-right and a right-to-left GRU."""
    return concat([gru_sequence(seq, fwd), gru_sequence(seq, bwd, reverse=True)], axis=-1)


@dataclass
class BiGruParams(ParamGroup):
    fwd: GruParams
    bwd: GruParams

    @classmethod
    def init(cls, rng: np.random.Generator, input_size: int, hidden_size: int) -> "BiGruParams":
        return cls(GruParams.init(rng, input_size, hidden_size), GruParams.init(rng, input_size, hidden_size))

    def __call__(self, seq: Tensor) -> Tensor:
        return bigru_forward(seq, self.fwd, self.bwd)


# LSTM -----------------------------------------------------------------------

_LSTM_GATES = ("i", "f", "g", "o")


@dataclass
class LstmParams(ParamGroup):
    """Input (i), forget (f), cell (g) and output (o) gates, one bias each."""

    W_i: Tensor
    W_f: Tensor
    W_g: Tensor
    W_o: Tensor
    U_i: Tensor
    U_f: Tensor
    U_g: Tensor
    U_o: Tensor
    b_i: Tensor
    b_f: Tensor
    b_g: Tensor
    b_o: Tensor

    @property
    def input_size(self) -> int:
        return self.W_i.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.W_i.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, input_size: int, hidden_size: int) -> "LstmParams":
        b = 1.0 / math.sqrt(hidden_size)
        h, i = hidden_size, input_size
        return cls(
            *(_uniform(rng, b, (h, i)) for _ in _LSTM_GATES),
            *(_uniform(rng, b, (h, h)) for _ in _LSTM_GATES),
            *(_uniform(rng, b, (h,)) for _ in _LSTM_GATES),
        )

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmParams":
        h, i = hidden_size, input_size
        return cls(
            *(_param(np.zeros((h, i))) for _ in _LSTM_GATES),
            *(_param(np.zeros((h, h))) for _ in _LSTM_GATES),
            *(_param(np.zeros(h)) for _ in _LSTM_GATES),
        )


def lstm_cell(x_t: Tensor, state: Tuple[Tensor, Tensor], p: LstmParams) -> Tuple[Tensor, Tensor]:
    h, c = state
    i = F.sigmoid(F.linear(x_t, p.W_i, p.b_i) + F.linear(h, p.U_i))
    f = F.sigmoid(F.linear(x_t, p.W_f, p.b_f) + F.linear(h, p.U_f))
    g = F.tanh(F.linear(x_t, p.W_g, p.b_g) + F.linear(h, p.U_g))
    o = F.sigmoid(F.linear(x_t, p.W_o, p.b_o) + F.linear(h, p.U_o))
    c_new = f * c + i * g
    return o * F.tanh(c_new), c_new


def lstm_sequence(seq: Tensor, p: LstmParams) -> Tensor:
    """Run an LSTM over ``[B, T, D]`` from zero state; returns ``[B, T, H]``."""
    seq, squeeze = _as_batched_sequence(seq)
    b, t, d = seq.shape
    if d != p.input_size:
        raise ShapeError(f"LSTM expects input size {p.input_size}, sequence axis -1 is {d}")
    hs = p.hidden_size
    projected = F.linear(
        seq,
        concat([p.W_i, p.W_f, p.W_g, p.W_o], axis=0),
        concat([p.b_i, p.b_f, p.b_g, p.b_o], axis=0),
    )
    u_h = concat([p.U_i, p.U_f, p.U_g, p.U_o], axis=0)
    h = Tensor(np.zeros((b, hs)))
    c = Tensor(np.zeros((b, hs)))
    outputs = []
    for step in range(t):
        gates = getitem(projected, (slice(None), step)) + F.linear(h, u_h)
        i = F.sigmoid(getitem(gates, (slice(None), slice(0, hs))))
        f = F.sigmoid(getitem(gates, (slice(None), slice(hs, 2 * hs))))
        g = F.tanh(getitem(gates, (slice(None), slice(2 * hs, 3 * hs))))
        o = F.sigmoid(getitem(gates, (slice(None), slice(3 * hs, None))))
        c = f * c + i * g
        h = o * F.tanh(c)
        outputs.append(h)
    out = stack(outputs, axis=1)
    return reshape(out, out.shape[1:]) if squeeze else out


# attention aggregation ----------------------------------------------------

@dataclass
class AttnAggParams(ParamGroup):
    weight: Tensor  # [1, D]
    bias: Tensor  # [1]

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int) -> "AttnAggParams":
        bound = 1.0 / math.sqrt(dim)
        return cls(_uniform(rng, bound, (1, dim)), _uniform(rng, bound, (1,)))


def attention_weights(seq: Tensor, p: AttnAggParams) -> Tensor:
    """Softmax over time of the per-step scores; ``[B, T]``."""
    seq, _ = _as_batched_sequence(seq)
    if seq.shape[1] < 1:
        raise ShapeError("attention aggregation needs at least one time step")
    scores = F.linear(seq, p.weight, p.bias)  # [B, T, 1]
    return F.softmax(reshape(scores, scores.shape[:2]), axis=-1)


def attention_aggregate(seq: Tensor, p: AttnAggParams) -> Tensor:
    """Attention-weighted sum over time: ``[T, D] -> [D]`` or ``[B, T, D] -> [B, D]``."""
    squeeze = seq.ndim == 2
    seq_b, _ = _as_batched_sequence(seq)
    if seq_b.shape[2] != p.weight.shape[1]:
        raise ShapeError(
            f"aggregation weight expects dimension {p.weight.shape[1]}, sequence axis -1 is {seq_b.shape[2]}"
        )
    alpha = attention_weights(seq_b, p)
    b, t = alpha.shape
    out = matmul(reshape(alpha, (b, 1, t)), seq_b)  # [B, 1, D]
    out = reshape(out, (b, seq_b.shape[2]))
    return reshape(out, out.shape[1:]) if squeeze else out


# cross-channel self-attention (TinyHAR) ------------------------------------

@dataclass
class SelfAttentionParams(ParamGroup):
    query: LinearParams
    key: LinearParams
    value: LinearParams

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int) -> "SelfAttentionParams":
        return cls(*(LinearParams.init(rng, dim, dim) for _ in range(3)))


def self_attention_matrix(tokens: Tensor, p: SelfAttentionParams) -> Tensor:
    """Row-stochastic ``[N, L, L]`` attention over the token axis of ``[N, L, D]``."""
    d = tokens.shape[-1]
    q = p.query(tokens)
    k = p.key(tokens)
    scores = matmul(q, transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(d))
    return F.softmax(scores, axis=-1)


def self_attention(tokens: Tensor, p: SelfAttentionParams) -> Tensor:
    """Single-head scaled dot-product attention with a residual connection."""
    attn = self_attention_matrix(tokens, p)
    return tokens + matmul(attn, p.value(tokens))


@dataclass
class ConvBlockParams(ParamGroup):
    """Standard convolution + batch norm + ReLU used by the TinyHAR encoder."""

    weight: Tensor
    bias: Tensor
    bn: BatchNormParams
    stride: int = field(default=1)

    @classmethod
    def init(cls, rng, c_in: int, c_out: int, kernel_size: int, stride: int = 1) -> "ConvBlockParams":
        bound = 1.0 / math.sqrt(c_in * kernel_size)
        return cls(
            _uniform(rng, bound, (c_out, c_in, kernel_size)),
            _uniform(rng, bound, (c_out,)),
            BatchNormParams.init(c_out),
            stride,
        )

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = F.conv1d(x, self.weight, self.bias, stride=self.stride, padding="same")
        return F.relu(self.bn(h, training))


@dataclass
class ConvParams(ParamGroup):
    """Plain valid-padded convolution + ReLU (DeepConvLSTM)."""

    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng, c_in: int, c_out: int, kernel_size: int) -> "ConvParams":
        bound = 1.0 / math.sqrt(c_in * kernel_size)
        return cls(_uniform(rng, bound, (c_out, c_in, kernel_size)), _uniform(rng, bound, (c_out,)))

    def __call__(self, x: Tensor) -> Tensor:
        return F.relu(F.conv1d(x, self.weight, self.bias, padding="valid"))
