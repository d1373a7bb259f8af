"""Parameter containers: a minimal module tree, linear layers, MLPs, layer norm."""
from __future__ import annotations

import math
from typing import Callable, Iterator, Sequence

import numpy as np

from .functional import gelu, layer_norm
from .tensor import DimensionError, Tensor


def parameter(value, name: str = "") -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class Module:
    """Attribute-ordered parameter tree.

    Parameters are the ``requires_grad`` tensors stored as attributes; child
    modules (or lists of them) are walked recursively in definition order, so
    the registry is a pure function of construction.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, zero: bool = False):
        self.n_in, self.n_out = n_in, n_out
        w = np.zeros((n_in, n_out)) if zero else xavier_uniform(rng, n_in, n_out)
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise DimensionError(f"Linear expects width {self.n_in}, got {x.shape[-1]}")
        y = x @ self.weight
        return y if self.bias is None else y + self.bias


class LayerNorm(Module):
    def __init__(self, width: int):
        self.gain = parameter(np.ones(width))
        self.shift = parameter(np.zeros(width))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.shift)


class MLP(Module):
    """Affine layers with GELU between them; the last layer is affine only."""

    def __init__(self, widths: Sequence[int], rng: np.random.Generator, zero_last: bool = False,
                 act: Callable[[Tensor], Tensor] = gelu):
        if len(widths) < 2:
            raise ValueError("MLP needs at least input and output widths")
        self.widths = tuple(widths)
        n = len(widths) - 1
        self.layers = [Linear(widths[i], widths[i + 1], rng, zero=zero_last and i == n - 1) for i in range(n)]
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        return mlp_apply(self.layers, x, self.act)


def mlp_apply(layers: Sequence[Linear], x: Tensor, act: Callable[[Tensor], Tensor] = gelu) -> Tensor:
    for i, layer in enumerate(layers):
        if x.shape[-1] != layer.n_in:
            raise DimensionError(f"layer {i} expects width {layer.n_in}, got {x.shape[-1]}")
        x = layer(x)
        if i < len(layers) - 1:
            x = act(x)
    return x
