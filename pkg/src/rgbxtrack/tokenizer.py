"""Image normalization, shared patch embedding and per-modality stream assembly."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import BBox
from .config import ModelConfig
from .errors import ConfigError, DimensionError
from .numcore import Linear, Module, Tensor, as_tensor, concat, matmul, param

# Per-channel dataset means, keyed by modality tag then stream.
MODALITY_MEANS = {
    "rgb_only": {"rgb": (0.456, 0.459, 0.426), "x": (0.456, 0.459, 0.426)},
    "depth": {"rgb": (0.417, 0.414, 0.393), "x": (0.574, 0.456, 0.240)},
    "thermal": {"rgb": (0.500, 0.499, 0.471), "x": (0.372, 0.372, 0.368)},
    "event": {"rgb": (0.418, 0.375, 0.317), "x": (0.935, 0.904, 0.949)},
}


@dataclass
class Frame:
    rgb: np.ndarray
    x: np.ndarray
    modality_tag: str = "thermal"
    gt_box: BBox | None = None

    def __post_init__(self):
        if self.rgb.shape != self.x.shape or self.rgb.ndim != 3 or self.rgb.shape[0] != 3:
            raise DimensionError(f"rgb {self.rgb.shape} and x {self.x.shape} must both be 3xHxW")
        if self.modality_tag not in MODALITY_MEANS:
            raise ConfigError(f"unknown modality tag {self.modality_tag!r}")

    @property
    def size(self) -> tuple[int, int]:
        return self.rgb.shape[1], self.rgb.shape[2]


def normalize_image(img: np.ndarray, modality_tag: str, stream: str = "rgb") -> np.ndarray:
    """Subtract the per-channel mean configured for ``modality_tag``.

    ``img`` is ``[..., 3, H, W]`` with values in ``[0, 1]``.
    """
    try:
        means = MODALITY_MEANS[modality_tag][stream]
    except KeyError:
        raise ConfigError(f"unknown modality tag/stream {modality_tag!r}/{stream!r}") from None
    return np.asarray(img, dtype=np.float64) - np.asarray(means).reshape(3, 1, 1)


def patchify(img: np.ndarray, patch: int) -> np.ndarray:
    """``[..., 3, H, W]`` -> ``[..., N, 3*p*p]`` with patches in row-major order."""
    *lead, c, h, w = img.shape
    if h % patch or w % patch:
        raise ConfigError(f"patch size {patch} does not divide image {h}x{w}")
    rows, cols = h // patch, w // patch
    x = img.reshape(*lead, c, rows, patch, cols, patch)
    nd = len(lead)
    order = list(range(nd)) + [nd + 1, nd + 3, nd, nd + 2, nd + 4]
    x = x.transpose(order)
    return x.reshape(*lead, rows * cols, c * patch * patch)


def patch_embed(img: np.ndarray, patch: int, w_e, pos, bias=None) -> Tensor:
    """Row-major patch flattening, linear projection, positional embedding."""
    tokens = patchify(img, patch)
    w_e = as_tensor(w_e)
    if tokens.shape[-1] != w_e.shape[0]:
        raise DimensionError(f"patch dim {tokens.shape[-1]} != projection rows {w_e.shape[0]}")
    out = matmul(Tensor(tokens), w_e)
    if bias is not None:
        out = out + bias
    return out + pos


class PatchEmbedding(Module):
    """Linear patch projection with learned template/search position tables."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.patch = cfg.patch
        self.proj = Linear(3 * cfg.patch ** 2, cfg.d, rng)
        self.pos_template = param(rng.normal(0.0, 0.02, (cfg.n_z, cfg.d)))
        self.pos_search = param(rng.normal(0.0, 0.02, (cfg.n_s, cfg.d)))

    def template(self, img: np.ndarray) -> Tensor:
        return patch_embed(img, self.patch, self.proj.weight, self.pos_template, self.proj.bias)

    def search(self, img: np.ndarray) -> Tensor:
        return patch_embed(img, self.patch, self.proj.weight, self.pos_search, self.proj.bias)


@dataclass
class TokenStream:
    tokens: Tensor
    n_z: int
    n_s: int
    grid: tuple[int, int]

    def __post_init__(self):
        if self.tokens.shape[-2] != 2 * self.n_z + self.n_s:
            raise DimensionError("stream length must equal 2*n_z + n_s")
        if self.grid[0] * self.grid[1] != self.n_s:
            raise DimensionError(f"grid {self.grid} does not hold {self.n_s} tokens")

    @property
    def n_zs(self) -> int:
        return 2 * self.n_z + self.n_s

    def split(self) -> tuple[Tensor, Tensor, Tensor]:
        t, nz = self.tokens, self.n_z
        return t[..., :nz, :], t[..., nz:2 * nz, :], t[..., 2 * nz:, :]


def _square_grid(n: int) -> tuple[int, int]:
    r = int(round(np.sqrt(n)))
    if r * r != n:
        raise DimensionError(f"cannot infer a square grid for {n} search tokens")
    return (r, r)


def assemble_stream(z0, zt, s, grid: tuple[int, int] | None = None) -> TokenStream:
    """Concatenate ``[z0; zt; s]`` along the token axis and record boundaries."""
    z0, zt, s = as_tensor(z0), as_tensor(zt), as_tensor(s)
    if not (z0.shape[-1] == zt.shape[-1] == s.shape[-1]):
        raise DimensionError("template and search tokens must share the embedding width")
    if z0.shape != zt.shape:
        raise DimensionError("initial and dynamic templates must have equal token counts")
    grid = grid or _square_grid(s.shape[-2])
    return TokenStream(concat([z0, zt, s], axis=-2), z0.shape[-2], s.shape[-2], grid)


class Tokenizer(Module):
    """Shared (default) or per-modality patch embeddings feeding two streams."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rgb = PatchEmbedding(cfg, rng)
        self.shared = cfg.scm_variant != "unshared_embedding"
        self.x = self.rgb if self.shared else PatchEmbedding(cfg, rng)

    def named_parameters(self, prefix: str = ""):
        yield from self.rgb.named_parameters(prefix + "rgb.")
        if not self.shared:
            yield from self.x.named_parameters(prefix + "x.")

    def streams(self, z0_rgb, z0_x, zt_rgb, zt_x, s_rgb, s_x) -> tuple[TokenStream, TokenStream]:
        """Normalized image batches in, one :class:`TokenStream` per modality out."""
        grid = self.cfg.grid
        f_r = assemble_stream(self.rgb.template(z0_rgb), self.rgb.template(zt_rgb),
                              self.rgb.search(s_rgb), grid)
        f_x = assemble_stream(self.x.template(z0_x), self.x.template(zt_x),
                              self.x.search(s_x), grid)
        return f_r, f_x
