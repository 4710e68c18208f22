"""One-stream transformer encoder over the compact feature."""
from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .errors import UsageError
from .numcore import Attention, FeedForward, LayerNorm, Module, Tensor, concat
from .scm import CompactFeature


class EncoderBlock(Module):
    """Pre-norm residual block: ``x + Attn(LN(x))`` then ``x + FFN(LN(x))``."""

    def __init__(self, d: int, n_heads: int, hidden: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(d)
        self.attn = Attention(d, n_heads, rng)
        self.norm2 = LayerNorm(d)
        self.ffn = FeedForward(d, hidden, rng)

    def __call__(self, x: Tensor, return_weights: bool = False):
        h = self.norm1(x)
        if return_weights:
            a, w = self.attn(h, h, return_weights=True)
        else:
            a, w = self.attn(h, h), None
        x = x + a
        x = x + self.ffn(self.norm2(x))
        return (x, w) if return_weights else x


class Backbone(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.blocks = [EncoderBlock(cfg.d, cfg.n_heads, cfg.ffn_ratio * cfg.d, rng)
                       for _ in range(cfg.n_layers)]
        self.norm = LayerNorm(cfg.d)

    def __call__(self, f_c: CompactFeature) -> CompactFeature:
        return encode(f_c, self)


def encode(f_c: CompactFeature, params: Backbone, weights_out: list | None = None) -> CompactFeature:
    """Run every block with full, unmasked attention; append attention maps to ``weights_out``."""
    x = f_c.tokens
    for block in params.blocks:
        if weights_out is not None:
            x, w = block(x, return_weights=True)
            weights_out.append(w.data)
        else:
            x = block(x)
    return f_c.with_tokens(params.norm(x))


def split_features(f_c: CompactFeature) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Return ``(q_r, q_x, z_c, s_c)`` by the recorded layout."""
    n_q, n_z, n_s = f_c.n_q, f_c.n_z, f_c.n_s
    t = f_c.tokens
    if t.shape[-2] != 2 * n_q + 2 * n_z + n_s:
        raise UsageError("compact feature boundaries are inconsistent with its token count")
    q_r = t[..., :n_q, :]
    q_x = t[..., n_q:2 * n_q, :]
    z_c = t[..., 2 * n_q:2 * n_q + 2 * n_z, :]
    s_c = t[..., 2 * n_q + 2 * n_z:, :]
    return q_r, q_x, z_c, s_c


def join_features(q_r, q_x, z_c, s_c) -> Tensor:
    return concat([q_r, q_x, z_c, s_c], axis=-2)
