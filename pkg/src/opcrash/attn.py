"""Attention mechanisms over point clouds.

* :class:`PhysicsAttention` - soft-assigns points to learnable slices, attends
  among slice tokens, scatters back.
* :class:`FlareRouting` - two-stage encode/decode through learnable latent
  queries; the implied N x N mixing operator has rank <= M.
* :class:`CrossAttention` - points query a small context bank.
* :class:`GaleBlock` - pre-norm transformer block mixing a self branch and the
  cross branch through a sigmoid gate.
"""
from __future__ import annotations

import math
import os

import numpy as np

from .numcore import (
    MLP,
    LayerNorm,
    Linear,
    Module,
    Tensor,
    memory,
    parameter,
    sigmoid,
    softmax,
    softmax_array,
)
from .numcore.tensor import _lift

DEBUG_CHECKS = os.environ.get("OPCRASH_DEBUG", "") == "1"
SLICE_TOL = 1e-5


class ConfigError(ValueError):
    pass


def split_heads(x: Tensor, heads: int) -> Tensor:
    n, c = x.shape
    return x.reshape(n, heads, c // heads).transpose(1, 0, 2)


def merge_heads(x: Tensor) -> Tensor:
    h, n, d = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * d)


def _check_heads(channels: int, heads: int) -> int:
    if heads < 1 or channels % heads:
        raise ConfigError(f"channels ({channels}) must be divisible by heads ({heads})")
    return channels // heads


class PhysicsAttention(Module):
    """Slice -> token self-attention -> deslice.

    Each head owns its slice weights: the head's channel block is projected to
    M slice logits (projection shared across heads), softmaxed over slices, and
    the columns are normalized over points to form the aggregation weights.
    Tokens of all heads form an M x C matrix that goes through full-width
    query/key/value projections before per-head attention. Deslicing scatters
    tokens back with the per-point (row-stochastic) weights.
    """

    def __init__(self, channels: int, heads: int, slices: int, rng: np.random.Generator):
        if slices < 1:
            raise ConfigError("physics attention needs at least one slice")
        self.channels, self.heads, self.slices = channels, heads, slices
        self.head_dim = d = _check_heads(channels, heads)
        self.in_fx = Linear(channels, channels, rng)
        self.to_slice = Linear(d, slices, rng)
        self.to_q = Linear(channels, channels, rng, bias=False)
        self.to_k = Linear(channels, channels, rng, bias=False)
        self.to_v = Linear(channels, channels, rng, bias=False)
        self.out = Linear(channels, channels, rng)

    def slice_weights(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Return (row-softmax weights, column-normalized slice weights), both H x N x M."""
        w = softmax(self.to_slice(split_heads(x, self.heads)), axis=-1)
        s = w / w.sum(axis=1, keepdims=True)
        if DEBUG_CHECKS:
            cols = s.data.sum(axis=1)
            assert np.all(s.data >= 0) and np.abs(cols - 1).max() <= SLICE_TOL, "slice columns not normalized"
        return w, s

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[0] < 1:
            raise ConfigError("empty point set")
        fx = split_heads(self.in_fx(x), self.heads)
        w, s = self.slice_weights(x)
        tokens = merge_heads(s.transpose(0, 2, 1) @ fx)
        q = split_heads(self.to_q(tokens), self.heads)
        k = split_heads(self.to_k(tokens), self.heads)
        v = split_heads(self.to_v(tokens), self.heads)
        att = softmax((q @ k.transpose(0, 2, 1)) * (1.0 / math.sqrt(self.head_dim)), axis=-1)
        y = w @ (att @ v)
        return self.out(merge_heads(y))


def flare_mix(g: Tensor, k: Tensor, v: Tensor, scale: float) -> Tensor:
    """Fused encode/decode through latent queries, one head at a time.

    g: H x M x d, k and v: H x N x d. Only one head's N x M score buffer is
    alive at any moment and nothing N x M is kept for the backward pass; the
    scores are recomputed instead.
    """
    gd, kd, vd = g.data, k.data, v.data
    h_, n, d = kd.shape
    m = gd.shape[1]
    z = np.empty((h_, m, d), dtype=kd.dtype)
    y = np.empty((h_, n, d), dtype=kd.dtype)
    memory.register(z, "flare.latent")
    for h in range(h_):
        logits = (kd[h] @ gd[h].T) * scale
        memory.register(logits, "flare.scores")
        enc = softmax_array(logits, axis=0)
        memory.register(enc, "flare.scores")
        z[h] = enc.T @ vd[h]
        del enc
        dec = softmax_array(logits, axis=1)
        memory.register(dec, "flare.scores")
        y[h] = dec @ z[h]
        del logits, dec

    def bw(gy):
        dg, dk, dv = np.empty_like(gd), np.empty_like(kd), np.empty_like(vd)
        for h in range(h_):
            logits = (kd[h] @ gd[h].T) * scale
            memory.register(logits, "flare.scores")
            dec = softmax_array(logits, axis=1)
            memory.register(dec, "flare.scores")
            d_dec = gy[h] @ z[h].T
            memory.register(d_dec, "flare.scores")
            dz = dec.T @ gy[h]
            dlog = dec * (d_dec - (d_dec * dec).sum(axis=1, keepdims=True))
            memory.register(dlog, "flare.scores")
            del dec, d_dec
            enc = softmax_array(logits, axis=0)
            memory.register(enc, "flare.scores")
            del logits
            d_enc = vd[h] @ dz.T
            memory.register(d_enc, "flare.scores")
            dv[h] = enc @ dz
            dlog += enc * (d_enc - (d_enc * enc).sum(axis=0, keepdims=True))
            del enc, d_enc
            dlog *= scale
            dk[h] = dlog @ gd[h]
            dg[h] = dlog.T @ kd[h]
            del dlog
        return dg, dk, dv

    return Tensor._from_op(y, (g, k, v), bw, "flare_mix")


def flare_reference(g: np.ndarray, k: np.ndarray, v: np.ndarray, scale: float) -> np.ndarray:
    """Unfused per-head operator ``W = W_dec W_enc`` applied to ``v`` (for checking)."""
    return np.stack([flare_operator(g[h], k[h], scale) @ v[h] for h in range(k.shape[0])])


def flare_operator(g: np.ndarray, k: np.ndarray, scale: float) -> np.ndarray:
    """Dense N x N mixing matrix of one head."""
    logits = (k @ g.T) * scale
    w_enc = softmax_array(logits.T, axis=1)  # M x N
    w_dec = softmax_array(logits, axis=1)    # N x M
    return w_dec @ w_enc


class FlareRouting(Module):
    """Low-rank global routing through M learnable latent queries."""

    def __init__(self, channels: int, heads: int, latents: int, rng: np.random.Generator):
        if latents < 1:
            raise ConfigError("FLARE needs at least one latent query")
        self.channels, self.heads, self.latents = channels, heads, latents
        self.head_dim = _check_heads(channels, heads)
        self.queries = parameter(rng.standard_normal((latents, channels)) / math.sqrt(channels))
        self.to_k = Linear(channels, channels, rng)
        self.to_v = Linear(channels, channels, rng)
        self.out = Linear(channels, channels, rng)

    def head_queries(self) -> Tensor:
        return split_heads(self.queries, self.heads)

    def __call__(self, x: Tensor) -> Tensor:
        k = split_heads(self.to_k(x), self.heads)
        v = split_heads(self.to_v(x), self.heads)
        y = flare_mix(self.head_queries(), k, v, 1.0 / math.sqrt(self.head_dim))
        return self.out(merge_heads(y))

    def mixing_operators(self, x: Tensor) -> np.ndarray:
        """H x N x N dense mixing matrices implied by the current weights."""
        k = split_heads(self.to_k(x), self.heads).data
        g = self.head_queries().data
        scale = 1.0 / math.sqrt(self.head_dim)
        return np.stack([flare_operator(g[h], k[h], scale) for h in range(self.heads)])


class CrossAttention(Module):
    """Points (queries) attend over context tokens (keys/values)."""

    def __init__(self, channels: int, context_dim: int, heads: int, rng: np.random.Generator):
        self.channels, self.heads = channels, heads
        self.head_dim = _check_heads(channels, heads)
        self.to_q = Linear(channels, channels, rng)
        self.to_k = Linear(context_dim, channels, rng)
        self.to_v = Linear(context_dim, channels, rng)
        self.out = Linear(channels, channels, rng)

    def __call__(self, x: Tensor, context: Tensor) -> Tensor:
        if context is None or context.shape[0] < 1:
            raise ConfigError("cross-attention needs a non-empty context bank")
        q = split_heads(self.to_q(x), self.heads)
        k = split_heads(self.to_k(context), self.heads)
        v = split_heads(self.to_v(context), self.heads)
        att = softmax((q @ k.transpose(0, 2, 1)) * (1.0 / math.sqrt(self.head_dim)), axis=-1)
        return self.out(merge_heads(att @ v))


class TransolverBlock(Module):
    """Pre-norm block: physics attention, then a 2x-wide feed-forward."""

    def __init__(self, channels: int, heads: int, slices: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(channels)
        self.attn = PhysicsAttention(channels, heads, slices, rng)
        self.norm2 = LayerNorm(channels)
        self.ffn = MLP((channels, 2 * channels, channels), rng)

    def __call__(self, x: Tensor, context: Tensor | None = None) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))


class GaleBlock(Module):
    """Gated self/cross attention block.

    ``self_attention="flare"`` gives the low-rank variant, ``"physics"`` the
    slice-based baseline. The gate logit starts at 0, i.e. an even mix.
    """

    def __init__(self, channels: int, heads: int, tokens: int, context_dim: int, rng: np.random.Generator,
                 self_attention: str = "flare"):
        self.norm1 = LayerNorm(channels)
        if self_attention == "flare":
            self.self_attn = FlareRouting(channels, heads, tokens, rng)
        elif self_attention == "physics":
            self.self_attn = PhysicsAttention(channels, heads, tokens, rng)
        else:
            raise ConfigError(f"unknown self-attention kind {self_attention!r}")
        self.cross = CrossAttention(channels, context_dim, heads, rng)
        self.gate = parameter(np.zeros(()))
        self.norm2 = LayerNorm(channels)
        self.ffn = MLP((channels, 2 * channels, channels), rng)
        self.gate_override: float | None = None

    def mix(self, h: Tensor, context: Tensor) -> Tensor:
        """Gated attention output (before the residual add) for normalized input ``h``."""
        y_self = self.self_attn(h)
        y_cross = self.cross(h, context)
        if self.gate_override is not None:
            s = _lift(np.asarray(self.gate_override), h)
        else:
            s = sigmoid(self.gate)
        return (1.0 - s) * y_cross + s * y_self

    def __call__(self, x: Tensor, context: Tensor) -> Tensor:
        x = x + self.mix(self.norm1(x), context)
        return x + self.ffn(self.norm2(x))
