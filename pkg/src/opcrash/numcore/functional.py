"""Fused differentiable kernels: softmax, GELU, layer norm, L2 norm."""
from __future__ import annotations

import math

import numpy as np

from . import memory
from .tensor import NumericError, Tensor, _lift

_GELU_C = math.sqrt(2.0 / math.pi)
LN_EPS = 1e-5


def softmax_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    return z


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    x = _lift(x)
    if np.isnan(x.data).any():
        raise NumericError("softmax received NaN input")
    y = softmax_array(x.data, axis)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(y, (x,), bw, "softmax")


def gelu(x: Tensor) -> Tensor:
    """Tanh-form GELU."""
    xd = x.data
    u = _GELU_C * (xd + 0.044715 * xd ** 3)
    t = np.tanh(u)
    y = 0.5 * xd * (1.0 + t)

    def bw(g):
        # recomputed so only the input stays alive between passes
        t = np.tanh(_GELU_C * (xd + 0.044715 * xd ** 3))
        dy = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * xd * xd)
        return (g * dy,)

    return Tensor._from_op(y, (x,), bw, "gelu")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last axis, then apply ``gain`` and ``bias``."""
    xd = x.data
    n = xd.shape[-1]
    if gain.shape[-1] != n or bias.shape[-1] != n:
        raise ValueError(f"layer_norm: gain/bias width {gain.shape[-1]} != {n}")
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    memory.register(xhat, "layer_norm.saved")
    gd = gain.data
    y = xhat * gd + bias.data

    def bw(g):
        dxhat = g * gd
        dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=red).reshape(gd.shape)
        dbias = g.sum(axis=red).reshape(bias.shape)
        return dx, dgain, dbias

    return Tensor._from_op(y, (x, gain, bias), bw, "layer_norm")


def l2norm(x: Tensor, axis=None) -> Tensor:
    """Euclidean norm over ``axis`` (all axes by default).

    The subgradient at a zero slice is taken as zero.
    """
    xd = x.data
    r = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))

    def bw(g):
        gk = g.reshape(r.shape)
        safe = np.where(r > 0, r, 1.0)
        return (np.where(r > 0, gk / safe, 0.0) * xd,)

    out = r.reshape(()) if axis is None else np.squeeze(r, axis=axis)
    return Tensor._from_op(out, (x,), bw, "l2norm")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = x @ w
    return y if b is None else y + b
