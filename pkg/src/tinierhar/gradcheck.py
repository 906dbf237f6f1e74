"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tape, Tensor


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-6,
    max_elements: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Worst relative error between tape gradients and central differences.

    ``f(*inputs)`` must return a scalar tensor. Each checked element uses
    ``(f(x + eps) - f(x - eps)) / 2 eps`` and the relative error
    ``|a - n| / max(|a|, |n|, 1e-8)``. With ``max_elements`` only a random
    subset of coordinates (across all inputs) is perturbed.
    """
    if not 0 < eps <= 1e-3:
        raise ValueError(f"eps must lie in (0, 1e-3], got {eps}")
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = f(*inputs)
        tape.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    coords = [(i, j) for i, t in enumerate(inputs) for j in range(t.data.size)]
    if max_elements is not None and max_elements < len(coords):
        rng = rng or np.random.default_rng(0)
        picked = rng.choice(len(coords), size=max_elements, replace=False)
        coords = [coords[k] for k in sorted(picked)]

    worst = 0.0
    for i, j in coords:
        flat = inputs[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + eps
        fp = float(f(*inputs).data)
        flat[j] = orig - eps
        fm = float(f(*inputs).data)
        flat[j] = orig
        numeric = (fp - fm) / (2 * eps)
        a = analytic[i].reshape(-1)[j]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
