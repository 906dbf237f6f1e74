"""Naive reference implementations used as test oracles."""

from __future__ import annotations

import math
from typing import List, Sequence, Tuple

import numpy as np


def sigmoid(v: float) -> float:
    return 1.0 / (1.0 + math.exp(-v))


def conv1d_naive(x, w, b, stride: int, pad_left: int, pad_right: int, groups: int) -> np.ndarray:
    """Loop-by-loop grouped cross-correlation of one ``[C_in, T]`` input."""
    c_in, t = x.shape
    c_out, cg, k = w.shape
    t_out = (t + pad_left + pad_right - k) // stride + 1
    out_per_group = c_out // groups
    out = np.zeros((c_out, t_out))
    for o in range(c_out):
        g = o // out_per_group
        for j in range(t_out):
            acc = 0.0
            for ci in range(cg):
                for kk in range(k):
                    pos = j * stride + kk - pad_left
                    if 0 <= pos < t:
                        acc += x[g * cg + ci, pos] * w[o, ci, kk]
            out[o, j] = acc + (b[o] if b is not None else 0.0)
    return out


def maxpool_naive(x, k: int, stride: int) -> np.ndarray:
    c, t = x.shape
    t_out = (t - k) // stride + 1
    out = np.empty((c, t_out))
    for ci in range(c):
        for j in range(t_out):
            out[ci, j] = max(x[ci, j * stride + kk] for kk in range(k))
    return out


def _matvec(m, v) -> List[float]:
    return [sum(m[i][j] * v[j] for j in range(len(v))) for i in range(len(m))]


def gru_cell_scalar(x, h, p: dict) -> np.ndarray:
    """``p`` maps W_r..b_hn to numpy arrays."""
    H = len(h)
    wr, wz, wn = _matvec(p["W_r"], x), _matvec(p["W_z"], x), _matvec(p["W_n"], x)
    ur, uz, un = _matvec(p["U_r"], h), _matvec(p["U_z"], h), _matvec(p["U_n"], h)
    out = []
    for i in range(H):
        r = sigmoid(wr[i] + p["b_ir"][i] + ur[i] + p["b_hr"][i])
        z = sigmoid(wz[i] + p["b_iz"][i] + uz[i] + p["b_hz"][i])
        n = math.tanh(wn[i] + p["b_in"][i] + r * (un[i] + p["b_hn"][i]))
        out.append((1 - z) * n + z * h[i])
    return np.array(out)


def lstm_cell_scalar(x, h, c, p: dict) -> Tuple[np.ndarray, np.ndarray]:
    H = len(h)
    pre = {g: [a + b + p[f"b_{g}"][i] for i, (a, b) in enumerate(zip(_matvec(p[f"W_{g}"], x), _matvec(p[f"U_{g}"], h)))]
           for g in "ifgo"}
    hs, cs = [], []
    for i in range(H):
        ig, fg, og = sigmoid(pre["i"][i]), sigmoid(pre["f"][i]), sigmoid(pre["o"][i])
        gg = math.tanh(pre["g"][i])
        cn = fg * c[i] + ig * gg
        cs.append(cn)
        hs.append(og * math.tanh(cn))
    return np.array(hs), np.array(cs)


def f1_brute(preds: Sequence[int], labels: Sequence[int], n_classes: int) -> float:
    total = 0.0
    for k in range(n_classes):
        tp = sum(1 for p, y in zip(preds, labels) if p == k and y == k)
        fp = sum(1 for p, y in zip(preds, labels) if p == k and y != k)
        fn = sum(1 for p, y in zip(preds, labels) if p != k and y == k)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        total += 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return total / n_classes


def plateau_reference(metrics: Sequence[float], lr: float, factor: float, patience: int) -> List[float]:
    """Learning rate after each epoch, written directly from the rule."""
    out, best, bad = [], -math.inf, 0
    for m in metrics:
        if m > best:
            best, bad = m, 0
        else:
            bad += 1
            if bad >= patience:
                lr *= factor
                bad = 0
        out.append(lr)
    return out


def early_stop_reference(metrics: Sequence[float], patience: int) -> int:
    """Index of the epoch at which training stops, or -1 if it never does."""
    best, bad = -math.inf, 0
    for i, m in enumerate(metrics):
        if m > best:
            best, bad = m, 0
        else:
            bad += 1
            if bad >= patience:
                return i
    return -1


def improvement_metrics(pattern: Sequence[bool]) -> List[float]:
    """Metric sequence in which True marks a strict improvement and False a stall."""
    value, out = 0.0, []
    for up in pattern:
        if up:
            value += 1.0
        out.append(value)
    return out


def invariant_gradient_check(f, named: dict, invariant: Sequence[str] = (), eps: float = 1e-6):
    """Finite-difference check of ``f(**named)`` over all non-invariant inputs.

    Inputs listed in ``invariant`` leave the loss unchanged by construction
    (e.g. a bias ahead of a shift-invariant softmax or training-mode batch
    norm); central differences there return pure roundoff, so their analytic
    gradient is instead required to vanish. Returns ``(max relative error,
    max |analytic gradient| over invariant inputs)``.
    """
    from tinierhar.gradcheck import grad_check
    from tinierhar.tensor import Tape

    names = list(named)
    checked = [n for n in names if n not in invariant]
    fixed = {n: named[n] for n in invariant}

    def wrapped(*tensors):
        return f(**dict(zip(checked, tensors)), **fixed)

    err = grad_check(wrapped, [named[n] for n in checked], eps=eps)
    zero = 0.0
    if invariant:
        for n in names:
            named[n].requires_grad = True
            named[n].grad = None
        with Tape() as tape:
            tape.backward(f(**named))
        zero = max(float(np.abs(named[n].grad).max()) if named[n].grad is not None else 0.0 for n in invariant)
    return err, zero


def gradient_pairs(f, named: dict, invariant: Sequence[str] = (), eps: float = 1e-6):
    """Analytic and central-difference values for every non-invariant element.

    Returns ``(analytic, numeric, max |analytic gradient| over invariant inputs)``
    as flat arrays, so callers can apply their own per-element criterion.
    """
    from tinierhar.tensor import Tape

    for t in named.values():
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        tape.backward(f(**named))
    analytic, numeric = [], []
    for name, t in named.items():
        grad = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        if name in invariant:
            continue
        flat = t.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = float(f(**named).data)
            flat[j] = orig - eps
            fm = float(f(**named).data)
            flat[j] = orig
            analytic.append(grad.reshape(-1)[j])
            numeric.append((fp - fm) / (2 * eps))
    zero = max((float(np.abs(named[n].grad).max()) if named[n].grad is not None else 0.0 for n in invariant), default=0.0)
    return np.array(analytic), np.array(numeric), zero
