"""Neural-network kernels built on :mod:`tinierhar.tensor`.

Convolution and pooling accept either unbatched ``[C, T]`` or batched
``[B, C, T]`` input. Summation order in every kernel is fixed, so single
threaded runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, DataError, ShapeError
from .tensor import Tensor, as_tensor, count_macs, make_result

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

Padding = Union[str, int, Tuple[int, int]]


# activations ----------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so neither branch overflows
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_result(out, (x,), lambda g: (g * (1.0 - out * out),))


def activation(x: Tensor, kind: str) -> Tensor:
    """Apply ``relu``, ``sigmoid`` or ``tanh`` by name."""
    try:
        fn = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}[kind.lower()]
    except KeyError:
        raise ConfigurationError(f"unknown activation {kind!r}") from None
    return fn(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), backward)


def cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under ``softmax(logits)``."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [B, C], got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    n, c = logits.shape
    if targets.shape != (n,):
        raise ShapeError(f"expected {n} targets, got shape {targets.shape}")
    bad = np.flatnonzero((targets < 0) | (targets >= c))
    if bad.size:
        row = int(bad[0])
        raise DataError(f"target {int(targets[row])} at row {row} is outside [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -logp[rows, targets].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        return (grad * (g / n),)

    return make_result(np.asarray(loss), (logits,), backward)


# dense ------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``out[..., o] = sum_i x[..., i] * W[o, i] + b[o]``."""
    x = as_tensor(x)
    if weight.ndim != 2:
        raise ShapeError(f"weight must be [O, I], got {weight.shape}")
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(
            f"linear: input axis -1 has size {x.shape[-1]} but weight axis 1 has size {weight.shape[1]}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias shape {bias.shape} does not match weight axis 0 ({weight.shape[0]})")
    out = x.data @ weight.data.T
    count_macs(out.size * weight.shape[1])
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1]) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return make_result(out, parents, backward)


# convolution / pooling -----------------------------------------------------

def resolve_padding(padding: Padding, kernel_size: int) -> Tuple[int, int]:
    """Return ``(left, right)`` zero padding.

    ``"same"`` pads ``K - 1`` in total, floor on the left and ceil on the
    right, so stride 1 preserves the length. ``"valid"`` pads nothing.
    """
    if isinstance(padding, str):
        mode = padding.lower()
        if mode == "same":
            total = kernel_size - 1
            return total // 2, total - total // 2
        if mode == "valid":
            return 0, 0
        raise ConfigurationError(f"unknown padding mode {padding!r}")
    if isinstance(padding, int):
        return padding, padding
    left, right = padding
    return int(left), int(right)


def conv_output_length(length: int, kernel_size: int, stride: int, padding: Padding) -> int:
    left, right = resolve_padding(padding, kernel_size)
    return (length + left + right - kernel_size) // stride + 1


def _batched(x: Tensor, name: str) -> Tuple[Tensor, bool]:
    from .tensor import reshape

    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise ShapeError(f"{name} expects [C, T] or [B, C, T], got {x.shape}")
    return x, False


def conv1d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: Padding = "valid",
    groups: int = 1,
) -> Tensor:
    """Grouped 1-D cross-correlation along the time axis.

    ``weight`` is ``[C_out, C_in / groups, K]``. ``groups == C_in`` gives a
    depthwise convolution and ``K == 1`` a pointwise one.
    """
    from .tensor import reshape

    x = as_tensor(x)
    xb, squeeze = _batched(x, "conv1d")
    b, c_in, t = xb.shape
    if weight.ndim != 3:
        raise ShapeError(f"conv1d weight must be [C_out, C_in/groups, K], got {weight.shape}")
    c_out, cg_in, k = weight.shape
    if groups < 1 or c_in % groups or c_out % groups:
        raise ConfigurationError(
            f"groups={groups} must divide both C_in={c_in} and C_out={c_out}"
        )
    if cg_in != c_in // groups:
        raise ShapeError(
            f"conv1d weight axis 1 is {cg_in} but C_in/groups = {c_in}/{groups} = {c_in // groups}"
        )
    if stride < 1 or k < 1:
        raise ConfigurationError(f"stride and kernel size must be >= 1 (stride={stride}, K={k})")
    left, right = resolve_padding(padding, k)
    if k > t + left + right:
        raise ConfigurationError(f"kernel size {k} exceeds padded length {t + left + right}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv1d bias shape {bias.shape} does not match C_out={c_out}")

    t_out = (t + left + right - k) // stride + 1
    xp = np.pad(xb.data, ((0, 0), (0, 0), (left, right))) if left or right else xb.data
    # windows[b, c, s, j] = xp[b, c, s*stride + j]
    windows = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :][:, :, :t_out, :]
    cg_out = c_out // groups
    w = weight.data
    count_macs(b * c_out * cg_in * k * t_out)

    if groups == 1:
        cols = windows.transpose(0, 2, 1, 3).reshape(b, t_out, c_in * k)
        out = (cols @ w.reshape(c_out, c_in * k).T).transpose(0, 2, 1)
    elif cg_in == 1 and cg_out == 1:
        out = np.zeros((b, c_out, t_out))
        for j in range(k):
            out += windows[..., j] * w[:, 0, j][None, :, None]
    else:
        wg = windows.reshape(b, groups, cg_in, t_out, k)
        out = np.einsum("bgitk,goik->bgot", wg, w.reshape(groups, cg_out, cg_in, k)).reshape(
            b, c_out, t_out
        )
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        gx = gw = gb = None
        if weight.requires_grad:
            if groups == 1:
                gw = (g.transpose(1, 0, 2).reshape(c_out, b * t_out) @ cols.reshape(b * t_out, c_in * k)).reshape(
                    c_out, c_in, k
                )
            elif cg_in == 1 and cg_out == 1:
                gw = (g[..., None] * windows).sum(axis=(0, 2))[:, None, :]
            else:
                gw = np.einsum(
                    "bgot,bgitk->goik", g.reshape(b, groups, cg_out, t_out), wg
                ).reshape(c_out, cg_in, k)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        if xb.requires_grad:
            # gradient w.r.t. each window element, then scatter back
            if groups == 1:
                gwin = (g.transpose(0, 2, 1) @ w.reshape(c_out, c_in * k)).reshape(b, t_out, c_in, k)
                gwin = gwin.transpose(0, 2, 1, 3)
            elif cg_in == 1 and cg_out == 1:
                gwin = g[..., None] * w[:, 0, :][None, :, None, :]
            else:
                gwin = np.einsum(
                    "bgot,goik->bgitk",
                    g.reshape(b, groups, cg_out, t_out),
                    w.reshape(groups, cg_out, cg_in, k),
                ).reshape(b, c_in, t_out, k)
            gxp = np.zeros_like(xp)
            span = stride * (t_out - 1) + 1
            for j in range(k):
                gxp[:, :, j : j + span : stride] += gwin[..., j]
            gx = gxp[:, :, left : left + t]
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (xb, weight) if bias is None else (xb, weight, bias)
    out_t = make_result(out, parents, backward)
    return reshape(out_t, out_t.shape[1:]) if squeeze else out_t


def maxpool1d(x: Tensor, kernel_size: int = 2, stride: int | None = None) -> Tensor:
    """Max over sliding windows; ties route the gradient to the first maximum."""
    from .tensor import reshape

    stride = kernel_size if stride is None else stride
    if kernel_size < 1 or stride < 1:
        raise ConfigurationError(f"kernel size and stride must be >= 1 (k={kernel_size}, stride={stride})")
    x = as_tensor(x)
    xb, squeeze = _batched(x, "maxpool1d")
    b, c, t = xb.shape
    if t < kernel_size:
        raise ConfigurationError(f"maxpool1d: length {t} is shorter than kernel {kernel_size}")
    t_out = (t - kernel_size) // stride + 1
    windows = sliding_window_view(xb.data, kernel_size, axis=2)[:, :, ::stride, :][:, :, :t_out, :]
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(xb.data)
        span = stride * (t_out - 1) + 1
        for j in range(kernel_size):
            gx[:, :, j : j + span : stride] += np.where(arg == j, g, 0.0)
        return (gx,)

    out_t = make_result(np.ascontiguousarray(out), (xb,), backward)
    return reshape(out_t, out_t.shape[1:]) if squeeze else out_t


# batch normalisation ---------------------------------------------------------

@dataclass
class RunningStats:
    """Per-channel running mean/variance buffers (not trained)."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels: int) -> "RunningStats":
        return cls(np.zeros(channels), np.ones(channels))


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: RunningStats,
    training: bool,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """Normalise ``[B, C, T]`` per channel over batch and time.

    In training mode batch statistics are used and ``stats`` is updated in
    place by an exponential moving average (unbiased variance); in eval mode
    the stored statistics are used.
    """
    if x.ndim != 3:
        raise ShapeError(f"batchnorm1d expects [B, C, T], got {x.shape}")
    b, c, t = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm1d: gamma/beta must have shape ({c},)")
    g_ = gamma.data[None, :, None]
    if training:
        n = b * t
        if n < 2:
            raise ConfigurationError(f"training-mode batchnorm needs B*T >= 2, got {n}")
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        stats.mean[:] = (1 - momentum) * stats.mean + momentum * mu
        stats.var[:] = (1 - momentum) * stats.var + momentum * var * n / (n - 1)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu[None, :, None]) * inv[None, :, None]
        out = xhat * g_ + beta.data[None, :, None]

        def backward(g):
            dxhat = g * g_
            s1 = dxhat.sum(axis=(0, 2), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
            gx = inv[None, :, None] / n * (n * dxhat - s1 - xhat * s2)
            return gx, (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))

    else:
        inv = 1.0 / np.sqrt(stats.var + eps)
        xhat = (x.data - stats.mean[None, :, None]) * inv[None, :, None]
        out = xhat * g_ + beta.data[None, :, None]
        scale = g_ * inv[None, :, None]

        def backward(g):
            return g * scale, (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))

    return make_result(out, (x, gamma, beta), backward)
