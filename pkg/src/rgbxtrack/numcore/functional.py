"""Composite differentiable ops built from the tensor primitives."""
from __future__ import annotations

import math

from ..errors import ConfigError, DimensionError
from .tensor import Tensor, as_tensor, matmul, reshape, softmax, swapaxes


def softmax_rows(m) -> Tensor:
    """Row-wise softmax with per-row max subtraction."""
    return softmax(m, axis=-1)


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    # [..., n, d] -> [..., h, n, d/h]
    *lead, n, d = x.shape
    x = reshape(x, tuple(lead) + (n, n_heads, d // n_heads))
    return swapaxes(x, -2, -3)


def merge_heads(x: Tensor) -> Tensor:
    # [..., h, n, dh] -> [..., n, h*dh]
    x = swapaxes(x, -2, -3)
    *lead, n, h, dh = x.shape
    return reshape(x, tuple(lead) + (n, h * dh))


def scaled_attention(q, k, v, n_heads: int = 1, return_weights: bool = False):
    """``softmax(Q K^T / sqrt(d_head)) V``, optionally split into equal heads.

    With ``return_weights`` the attention matrix (heads on axis -3) is returned
    as a second value.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    if k.shape[-1] != d or v.shape[-1] != d:
        raise DimensionError(f"attention widths differ: q {q.shape}, k {k.shape}, v {v.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError("keys and values must have the same length")
    if n_heads < 1 or d % n_heads:
        raise ConfigError(f"width {d} is not divisible by n_heads={n_heads}")
    if n_heads == 1:
        qh, kh, vh = q, k, v
    else:
        qh, kh, vh = (split_heads(t, n_heads) for t in (q, k, v))
    scores = matmul(qh, swapaxes(kh, -1, -2)) * (1.0 / math.sqrt(d // n_heads))
    weights = softmax_rows(scores)
    out = matmul(weights, vh)
    if n_heads > 1:
        out = merge_heads(out)
    if return_weights:
        return out, weights
    return out
