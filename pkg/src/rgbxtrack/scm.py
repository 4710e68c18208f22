"""Spatial compact module: fuse RGB and X streams into one short sequence.

Order of operations for the baseline variant::

    [q'_r; f'_r]   = Norm([q_r; f_r] + CA([q_r; f_r], [q_x; f_x]))
    [q'_x; f'_x]   = Norm([q_x; f_x] + CA([q_x; f_x], [q'_r; f'_r]))
    [q''_r; f''_r] = Norm([q'_r; f'_r] + FFN([q'_r; f'_r]))
    [q''_x; f''_x] = Norm([q'_x; f'_x] + FFN([q'_x; f'_x]))
    f_c            = [q''_r; q''_x; f''_r + f''_x]

The X-side cross-attention reads keys/values from the already updated RGB side.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import ConfigError, DimensionError
from .numcore import Attention, FeedForward, LayerNorm, Module, Tensor, add, concat, expand, param
from .tokenizer import TokenStream


@dataclass
class CompactFeature:
    """Token layout ``[q_r | q_x | z0 | zt | s]`` with recorded segment sizes."""

    tokens: Tensor
    n_q: int
    n_z: int
    n_s: int
    grid: tuple[int, int]

    def __post_init__(self):
        if self.tokens.shape[-2] != 2 * self.n_q + 2 * self.n_z + self.n_s:
            raise DimensionError(
                f"compact length {self.tokens.shape[-2]} != 2*{self.n_q} + 2*{self.n_z} + {self.n_s}")

    @property
    def length(self) -> int:
        return self.tokens.shape[-2]

    def with_tokens(self, tokens: Tensor) -> "CompactFeature":
        return CompactFeature(tokens, self.n_q, self.n_z, self.n_s, self.grid)


def cross_attend_block(a, b, attn: Attention, norm: LayerNorm) -> Tensor:
    """``Norm(a + CA(a, b))`` with queries from ``a`` and keys/values from ``b``."""
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError("cross-attention inputs must share their width")
    return norm(a + attn(a, b))


def ffn_block(x, ffn: FeedForward, norm: LayerNorm) -> Tensor:
    return norm(x + ffn(x))


def compact_fuse(f_r, f_x) -> Tensor:
    if f_r.shape != f_x.shape:
        raise DimensionError(f"cannot fuse {f_r.shape} with {f_x.shape}")
    return add(f_r, f_x)


class SpatialCompactModule(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d = cfg.d
        self.variant = cfg.scm_variant
        self.n_q = cfg.effective_n_q
        if self.n_q:
            self.q_r = param(rng.normal(0.0, cfg.query_std, (self.n_q, d)))
            self.q_x = param(rng.normal(0.0, cfg.query_std, (self.n_q, d)))
        self.attn_r = Attention(d, cfg.n_heads, rng)
        self.attn_x = Attention(d, cfg.n_heads, rng)
        self.ffn_r = FeedForward(d, cfg.ffn_ratio * d, rng)
        self.ffn_x = FeedForward(d, cfg.ffn_ratio * d, rng)
        self.norm_ca_r = LayerNorm(d)
        self.norm_ca_x = LayerNorm(d)
        self.norm_ffn_r = LayerNorm(d)
        self.norm_ffn_x = LayerNorm(d)

    def _with_query(self, q: Tensor | None, f: Tensor) -> Tensor:
        if q is None:
            return f
        lead = f.shape[:-2]
        if lead:
            q = expand(q, lead + q.shape)
        return concat([q, f], axis=-2)

    def __call__(self, f_r: TokenStream, f_x: TokenStream) -> CompactFeature:
        return scm_forward(f_r, f_x, self)


def scm_forward(f_r: TokenStream, f_x: TokenStream, params: SpatialCompactModule,
                variant: str | None = None) -> CompactFeature:
    variant = params.variant if variant is None else variant
    if variant != params.variant and "no_queries" in (variant, params.variant):
        raise ConfigError(f"params were built for {params.variant!r}, cannot run {variant!r}")
    if f_r.tokens.shape != f_x.tokens.shape or f_r.n_z != f_x.n_z:
        raise DimensionError("RGB and X streams must share length and width")
    n_q = params.n_q
    q_r = params.q_r if n_q else None
    q_x = params.q_x if n_q else None
    a_r = params._with_query(q_r, f_r.tokens)
    a_x = params._with_query(q_x, f_x.tokens)

    if variant == "self_attention":
        r1 = cross_attend_block(a_r, a_r, params.attn_r, params.norm_ca_r)
        x1 = cross_attend_block(a_x, a_x, params.attn_x, params.norm_ca_x)
    else:
        r1 = cross_attend_block(a_r, a_x, params.attn_r, params.norm_ca_r)
        x1 = cross_attend_block(a_x, r1, params.attn_x, params.norm_ca_x)
    r2 = ffn_block(r1, params.ffn_r, params.norm_ffn_r)
    x2 = ffn_block(x1, params.ffn_x, params.norm_ffn_x)

    fused = compact_fuse(r2[..., n_q:, :], x2[..., n_q:, :])
    if n_q:
        tokens = concat([r2[..., :n_q, :], x2[..., :n_q, :], fused], axis=-2)
    else:
        tokens = fused
    return CompactFeature(tokens, n_q, f_r.n_z, f_r.n_s, f_r.grid)
