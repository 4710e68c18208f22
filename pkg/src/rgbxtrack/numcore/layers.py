"""Parameter containers: a tiny module system over :class:`Tensor` leaves."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from ..errors import ConfigError, DimensionError
from .functional import scaled_attention
from .tensor import Tensor, gelu, layer_norm, matmul


def param(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


class Module:
    """Walks attributes to find parameters, like a stripped-down ``nn.Module``."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(val, Tensor):
                yield full, val
            elif isinstance(val, Module):
                yield from val.named_parameters(full + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_params(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = True

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ConfigError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: expected {p.shape}, got {arr.shape}")
            p.data = arr.copy()


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, std: float | None = None,
                 zero: bool = False):
        std = (1.0 / np.sqrt(d_in)) if std is None else std
        w = np.zeros((d_in, d_out)) if zero else rng.normal(0.0, std, (d_in, d_out))
        self.weight = param(w)
        self.bias = param(np.zeros(d_out))

    def __call__(self, x) -> Tensor:
        return matmul(x, self.weight) + self.bias

    def zero_(self) -> None:
        self.weight.data = np.zeros_like(self.weight.data)
        self.bias.data = np.zeros_like(self.bias.data)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = param(np.ones(d))
        self.beta = param(np.zeros(d))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class Attention(Module):
    """Multi-head attention: queries from ``a``, keys/values from ``b``."""

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator, zero_out: bool = False):
        if d % n_heads:
            raise ConfigError(f"width {d} is not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng, zero=zero_out)

    def __call__(self, a, b=None, return_weights: bool = False):
        b = a if b is None else b
        res = scaled_attention(self.q(a), self.k(b), self.v(b), self.n_heads, return_weights)
        if return_weights:
            out, w = res
            return self.out(out), w
        return self.out(res)


class FeedForward(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator, zero_out: bool = False):
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng, zero=zero_out)

    def __call__(self, x) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class MLP(Module):
    """Stack of fully connected layers with GELU between them."""

    def __init__(self, dims: list[int], rng: np.random.Generator, zero_out: bool = False):
        self.layers = [Linear(a, b, rng, zero=zero_out and i == len(dims) - 2)
                       for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))]

    def __call__(self, x) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = gelu(x)
        return x
