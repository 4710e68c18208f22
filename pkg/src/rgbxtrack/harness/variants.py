"""Dual-branch baselines and the framework factory used for comparisons.

Both baselines keep one token sequence per modality (``N_zs`` tokens each)
through every layer, with explicit cross-modal interaction per layer.
"""
from __future__ import annotations

import numpy as np

from ..config import ModelConfig
from ..errors import ConfigError
from ..model import CompactTracker, SearchInputs, SpatialOutput, TrackerBase
from ..numcore import MLP, Attention, FeedForward, LayerNorm, Module, Tensor
from ..tokenizer import Tokenizer


class SymmetricLayer(Module):
    """Two identical branches coupled by shared interaction networks."""

    def __init__(self, d: int, n_heads: int, hidden: int, rng: np.random.Generator):
        self.attn_r = Attention(d, n_heads, rng)
        self.attn_x = Attention(d, n_heads, rng)
        self.ffn_r = FeedForward(d, hidden, rng)
        self.ffn_x = FeedForward(d, hidden, rng)
        self.psi_ca = MLP([d, d, d, d], rng, zero_out=True)
        self.psi_ffn = MLP([d, d, d, d], rng, zero_out=True)
        self.norm_ca_r = LayerNorm(d)
        self.norm_ca_x = LayerNorm(d)
        self.norm_ffn_r = LayerNorm(d)
        self.norm_ffn_x = LayerNorm(d)

    def __call__(self, f_r: Tensor, f_x: Tensor) -> tuple[Tensor, Tensor]:
        a_r = self.attn_r(f_r, f_r)
        a_x = self.attn_x(f_x, f_x)
        r1 = self.norm_ca_r(f_r + a_r + self.psi_ca(f_x))
        x1 = self.norm_ca_x(f_x + a_x + self.psi_ca(f_r))
        r2 = self.norm_ffn_r(r1 + self.ffn_r(r1) + self.psi_ffn(x1))
        x2 = self.norm_ffn_x(x1 + self.ffn_x(x1) + self.psi_ffn(r1))
        return r2, x2


class AsymmetricLayer(Module):
    """RGB transformer layer with the X stream injected as a prompt."""

    def __init__(self, d: int, n_heads: int, hidden: int, rng: np.random.Generator):
        self.prompt1 = FeedForward(d, d, rng)
        self.prompt2 = FeedForward(d, d, rng)
        self.prompt3 = FeedForward(d, d, rng)
        self.prompt4 = FeedForward(d, d, rng, zero_out=True)
        self.norm_p1 = LayerNorm(d)
        self.norm_p2 = LayerNorm(d)
        self.attn_r = Attention(d, n_heads, rng)
        self.ffn_r = FeedForward(d, hidden, rng)
        self.norm_ca_r = LayerNorm(d)
        self.norm_ffn_r = LayerNorm(d)
        self.norm_merge = LayerNorm(d)

    def __call__(self, f_r: Tensor, f_x: Tensor) -> tuple[Tensor, Tensor]:
        x1 = self.norm_p1(self.prompt1(f_x) + self.prompt2(f_r))
        x2 = self.norm_p2(f_x + self.prompt3(x1))
        x_out = self.prompt4(x2)
        r1 = self.norm_ca_r(f_r + self.attn_r(f_r, f_r))
        r2 = self.norm_ffn_r(r1 + self.ffn_r(r1))
        r_out = self.norm_merge(r2 + x_out)
        return r_out, x_out


class DualBranchTracker(TrackerBase):
    def __init__(self, cfg: ModelConfig, kind: str, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(cfg.init_seed)
        self.cfg = cfg
        self.kind = kind
        self.framework = kind
        self.tokenizer = Tokenizer(cfg, rng)
        layer_cls = SymmetricLayer if kind == "dual_symmetric" else AsymmetricLayer
        self.layers = [layer_cls(cfg.d, cfg.n_heads, cfg.ffn_ratio * cfg.d, rng)
                       for _ in range(cfg.n_layers)]
        self.norm = LayerNorm(cfg.d)
        self._init_temporal(cfg, rng)

    def named_submodules(self):
        yield "tokenizer", self.tokenizer
        yield "branches", _Group(self.layers, self.norm)
        yield "guidance", self.guidance
        yield "head", self.head
        if getattr(self, "query_decoder", None) is not None:
            yield "query_decoder", self.query_decoder

    def branch_outputs(self, inputs: SearchInputs) -> tuple[Tensor, Tensor, int]:
        f_r, f_x = self.tokenizer.streams(inputs.z0_rgb, inputs.z0_x, inputs.zt_rgb,
                                          inputs.zt_x, inputs.s_rgb, inputs.s_x)
        r, x = f_r.tokens, f_x.tokens
        seq_len = r.shape[-2] + x.shape[-2]
        for layer in self.layers:
            r, x = layer(r, x)
        return r, x, seq_len

    def spatial(self, inputs: SearchInputs) -> SpatialOutput:
        r, x, seq_len = self.branch_outputs(inputs)
        feats = r + x if self.kind == "dual_symmetric" else r
        feats = self.norm(feats)
        n_t = 2 * self.cfg.n_z
        return SpatialOutput(feats[..., n_t:, :], feats[..., :n_t, :], feats, seq_len)

    def spatial_modules(self) -> list[Module]:
        return [self.tokenizer, *self.layers, self.norm]


class _Group(Module):
    def __init__(self, layers, norm):
        self.layers = layers
        self.norm = norm


def build_variant(kind: str, cfg: ModelConfig, rng: np.random.Generator | None = None):
    """Return ``(model, census)`` for one spatial modelling framework."""
    if kind == "compact":
        model = CompactTracker(cfg, rng)
    elif kind in ("dual_symmetric", "dual_asymmetric"):
        model = DualBranchTracker(cfg, kind, rng)
    else:
        raise ConfigError(f"unknown framework {kind!r}")
    return model, model.census()


def build_model(cfg: ModelConfig, rng: np.random.Generator | None = None) -> TrackerBase:
    return build_variant(cfg.framework, cfg, rng)[0]
