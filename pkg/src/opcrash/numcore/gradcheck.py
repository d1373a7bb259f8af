"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, precision


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, eps: float = 1e-6, entries=None) -> np.ndarray:
    """Central differences of ``fn`` w.r.t. ``t``; only flat ``entries`` if given (others stay 0)."""
    base = t.data
    out = np.zeros(base.shape, dtype=np.float64)
    flat = base.reshape(-1)
    for i in (range(flat.size) if entries is None else entries):
        plus = flat.copy()
        plus[i] += eps
        t.data = plus.reshape(base.shape)
        fp = float(fn().data)
        minus = flat.copy()
        minus[i] -= eps
        t.data = minus.reshape(base.shape)
        fm = float(fn().data)
        out.reshape(-1)[i] = (fp - fm) / (2 * eps)
    t.data = base
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 0.0) -> float:
    """max |a - n| scaled by the larger of the two gradients' max magnitude.

    ``floor`` bounds the scale from below so a gradient that is exactly zero
    (e.g. a key bias under softmax shift invariance) is not judged against
    finite-difference round-off alone.
    """
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    if scale < 1e-12:
        return float(np.abs(analytic - numeric).max(initial=0.0))
    return float(np.abs(analytic - numeric).max() / scale)


FLOOR_FRACTION = 1e-3


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6,
                    max_entries: int | None = None, seed: int = 0) -> dict[str, float]:
    """Compare backprop against central differences for each input.

    ``fn`` must rebuild the graph from ``inputs`` on every call and return a
    scalar. Inputs should already be float64; the check runs under 64-bit
    precision so constants created inside ``fn`` match. Each input's error is
    scaled by its own gradient magnitude, floored at ``FLOOR_FRACTION`` of the
    largest gradient seen across all inputs. With ``max_entries`` only a
    seeded random subset of that many coordinates per input is compared.
    """
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        for t in inputs:
            t.grad = None
        loss = fn()
        backward(loss)
        analytic = [None if t.grad is None else t.grad.copy() for t in inputs]
        pairs = []
        for k, t in enumerate(inputs):
            entries = None
            if max_entries is not None and t.data.size > max_entries:
                entries = np.sort(rng.choice(t.data.size, max_entries, replace=False))
            num = numeric_grad(fn, t, eps, entries)
            a = analytic[k] if analytic[k] is not None else np.zeros_like(num)
            if entries is not None:
                a, num = a.reshape(-1)[entries], num.reshape(-1)[entries]
            pairs.append((t.name or f"input{k}", a, num))
    top = max((max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0)) for _, a, n in pairs), default=0.0)
    return {name: relative_error(a, n, FLOOR_FRACTION * top) for name, a, n in pairs}
