"""Tracker assembly shared by training, online tracking and framework comparisons."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import Backbone, split_features
from .config import ModelConfig
from .guidance_head import HeadOutput, PredictionHead, TemporalGuidance, guide
from .numcore import Module, Tensor
from .scm import CompactFeature, SpatialCompactModule
from .tcm import TemporalMemory, TemporalQueryDecoder
from .tokenizer import Tokenizer


@dataclass
class SearchInputs:
    """Normalized crops, each ``[B, 3, h, w]`` (or unbatched ``[3, h, w]``)."""

    z0_rgb: np.ndarray
    z0_x: np.ndarray
    zt_rgb: np.ndarray
    zt_x: np.ndarray
    s_rgb: np.ndarray
    s_x: np.ndarray

    def rgb_only(self) -> "SearchInputs":
        """Feed the RGB crops to both interfaces (X input replaced by an RGB clone)."""
        return SearchInputs(self.z0_rgb, self.z0_rgb, self.zt_rgb, self.zt_rgb,
                            self.s_rgb, self.s_rgb)


@dataclass
class SpatialOutput:
    s_c: Tensor
    z_c: Tensor
    features: Tensor
    backbone_len: int
    compact: CompactFeature | None = None
    q_r: Tensor | None = None
    q_x: Tensor | None = None


class TrackerBase(Module):
    """Common head/temporal plumbing; subclasses implement :meth:`spatial`."""

    framework = "base"

    def _init_temporal(self, cfg: ModelConfig, rng: np.random.Generator) -> None:
        self.guidance = TemporalGuidance(cfg, rng)
        self.head = PredictionHead(cfg, rng)
        if cfg.tcm_mode == "query":
            self.query_decoder = TemporalQueryDecoder(cfg, rng)

    def spatial(self, inputs: SearchInputs) -> SpatialOutput:
        raise NotImplementedError

    def predict(self, s_c: Tensor, memory: TemporalMemory | None = None) -> HeadOutput:
        if memory is not None and self.cfg.use_tcm:
            s_c = guide(s_c, memory, self.guidance)
        return self.head(s_c)

    def spatial_modules(self) -> list[Module]:
        raise NotImplementedError

    def temporal_modules(self) -> list[Module]:
        mods: list[Module] = [self.guidance, self.head]
        if getattr(self, "query_decoder", None) is not None:
            mods.append(self.query_decoder)
        return mods

    def census(self) -> dict[str, int]:
        """Parameter counts per submodule plus spatial-only and full totals."""
        parts = {name: mod.num_params() for name, mod in self.named_submodules()}
        spatial = sum(v for k, v in parts.items() if k not in ("guidance", "query_decoder"))
        parts["total_spatial"] = spatial
        parts["total"] = self.num_params()
        return parts

    def named_submodules(self):
        for name, val in vars(self).items():
            if isinstance(val, Module):
                yield name, val


class CompactTracker(TrackerBase):
    """Shared embedding -> SCM -> one-stream backbone -> (guidance) -> head."""

    framework = "compact"

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(cfg.init_seed)
        self.cfg = cfg
        self.tokenizer = Tokenizer(cfg, rng)
        self.scm = SpatialCompactModule(cfg, rng)
        self.backbone = Backbone(cfg, rng)
        self._init_temporal(cfg, rng)

    def spatial(self, inputs: SearchInputs) -> SpatialOutput:
        f_r, f_x = self.tokenizer.streams(inputs.z0_rgb, inputs.z0_x, inputs.zt_rgb,
                                          inputs.zt_x, inputs.s_rgb, inputs.s_x)
        f_c = self.scm(f_r, f_x)
        enc = self.backbone(f_c)
        q_r, q_x, z_c, s_c = split_features(enc)
        return SpatialOutput(s_c, z_c, enc.tokens, f_c.length, enc, q_r, q_x)

    def spatial_modules(self) -> list[Module]:
        return [self.tokenizer, self.scm, self.backbone]

