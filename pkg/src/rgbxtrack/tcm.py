"""Temporal compact module: target heatmaps, key-token selection and FIFO memory.

Heatmaps are parameter-free and computed on raw arrays; only the selected
token rows stay attached to the gradient tape.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .boxes import BBox
from .config import ModelConfig
from .errors import ConfigError, DimensionError, EmptyRegionError, UsageError
from .numcore import Attention, FeedForward, LayerNorm, Module, Tensor, as_tensor, concat, expand, param
from .scm import cross_attend_block, ffn_block

log = logging.getLogger(__name__)

__all__ = [
    "BBox", "Heatmap", "TemporalMemory", "TemporalQueryDecoder", "combine_heatmaps",
    "final_heatmap", "final_heatmap_batch", "intermediate_heatmap", "memory_bootstrap",
    "memory_push", "minmax", "roi_indices", "select_indices", "select_tokens", "variant_select",
]


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


@dataclass
class Heatmap:
    values: np.ndarray
    grid: tuple[int, int]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape[-1] != self.grid[0] * self.grid[1]:
            raise DimensionError(f"{self.values.shape[-1]} values do not fill grid {self.grid}")

    def as_grid(self) -> np.ndarray:
        return self.values.reshape(self.values.shape[:-1] + self.grid)


def intermediate_heatmap(s_c, z_c, grid: tuple[int, int] | None = None) -> Heatmap:
    """Template-consistency map: ``mean_cols((s s^T s) z^T)``, no scaling."""
    s, z = _data(s_c), _data(z_c)
    if s.shape[-1] != z.shape[-1]:
        raise DimensionError("search and template tokens must share their width")
    s_ref = s @ np.swapaxes(s, -1, -2) @ s
    h = (s_ref @ np.swapaxes(z, -1, -2)).mean(axis=-1)
    if grid is None:
        r = int(round(math.sqrt(s.shape[-2])))
        grid = (r, s.shape[-2] // r)
    return Heatmap(h, grid)


def patch_centers(grid: tuple[int, int], patch: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates ``(cx, cy)`` of every token's patch center, row-major."""
    rows, cols = grid
    cy, cx = np.meshgrid((np.arange(rows) + 0.5) * patch, (np.arange(cols) + 0.5) * patch,
                         indexing="ij")
    return cx.reshape(-1), cy.reshape(-1)


def final_heatmap_batch(boxes: np.ndarray, grid: tuple[int, int], patch: int) -> Heatmap:
    """Gaussian maps for ``[..., 4]`` center-format boxes, sigma = size / 3."""
    boxes = np.asarray(boxes, dtype=np.float64)
    if np.any(boxes[..., 2:] <= 0):
        raise ConfigError("box width and height must be positive")
    cx, cy = patch_centers(grid, patch)
    xc, yc = boxes[..., 0:1], boxes[..., 1:2]
    sx, sy = boxes[..., 2:3] / 3.0, boxes[..., 3:4] / 3.0
    vals = np.exp(-0.5 * (((cx - xc) / sx) ** 2 + ((cy - yc) / sy) ** 2))
    return Heatmap(vals, grid)


def final_heatmap(b: BBox, grid: tuple[int, int], patch: int) -> Heatmap:
    return final_heatmap_batch(b.as_array(), grid, patch)


def minmax(values: np.ndarray) -> np.ndarray:
    """Per-map min-max scaling to ``[0, 1]``; constant maps become zeros."""
    v = np.asarray(values, dtype=np.float64)
    lo = v.min(axis=-1, keepdims=True)
    span = v.max(axis=-1, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (v - lo) / safe, 0.0)


def combine_heatmaps(h_i: Heatmap, h_f: Heatmap) -> Heatmap:
    if h_i.grid != h_f.grid or h_i.values.shape != h_f.values.shape:
        raise DimensionError("heatmaps must share grid and shape")
    return Heatmap(0.5 * minmax(h_i.values) + 0.5 * minmax(h_f.values), h_i.grid)


def select_indices(scores: np.ndarray, n_m: int) -> np.ndarray:
    """Indices of the ``n_m`` largest scores, descending, ties to the lower index."""
    scores = np.asarray(scores)
    if n_m > scores.shape[-1]:
        raise ConfigError(f"cannot select {n_m} tokens from {scores.shape[-1]}")
    return np.argsort(-scores, axis=-1, kind="stable")[..., :n_m]


def _gather(s_c: Tensor, idx: np.ndarray) -> Tensor:
    if idx.ndim == 1:
        return s_c[..., idx, :]
    lead = idx.shape[:-1]
    batch = np.indices(lead + (idx.shape[-1],))[:-1]
    return s_c[tuple(batch) + (idx,)]


def select_tokens(s_c, h: Heatmap, n_m: int) -> Tensor:
    """Copy the top-``n_m`` rows of ``s_c`` unchanged, ordered by score."""
    s_c = as_tensor(s_c)
    idx = select_indices(h.values, n_m)
    return _gather(s_c, idx)


def roi_indices(b: BBox, grid: tuple[int, int], patch: int, n_m: int, scale: float = 1.5) -> np.ndarray:
    """Tokens whose patch centers fall inside ``b`` scaled by ``scale``.

    At least ``n_m`` in-box tokens: the first ``n_m`` in row-major order. Fewer:
    nearest-neighbour resampling on a regular grid inside the scaled box.
    """
    rows, cols = grid
    width, height = cols * patch, rows * patch
    x0, y0, x1, y1 = b.scaled(scale).corners
    if x1 <= 0 or y1 <= 0 or x0 >= width or y0 >= height:
        raise EmptyRegionError(f"scaled box {b.scaled(scale)} lies outside the search image")
    cx, cy = patch_centers(grid, patch)
    inside = np.flatnonzero((cx >= x0) & (cx <= x1) & (cy >= y0) & (cy <= y1))
    if inside.size >= n_m:
        return inside[:n_m]
    k = math.ceil(math.sqrt(n_m))
    x0, x1 = max(x0, 0.0), min(x1, float(width))
    y0, y1 = max(y0, 0.0), min(y1, float(height))
    frac = (np.arange(k) + 0.5) / k
    sy, sx = np.meshgrid(y0 + frac * (y1 - y0), x0 + frac * (x1 - x0), indexing="ij")
    col = np.clip(np.floor(sx.reshape(-1) / patch), 0, cols - 1).astype(int)
    row = np.clip(np.floor(sy.reshape(-1) / patch), 0, rows - 1).astype(int)
    return (row * cols + col)[:n_m]


class TemporalMemory:
    """Fixed-capacity FIFO of ``L`` token blocks, oldest first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("memory capacity must be >= 1")
        self.capacity = capacity
        self.slots: list[Tensor] = []
        self.step = 0
        self.phase = "empty"

    @property
    def ready(self) -> bool:
        return self.phase in ("initial", "ready")

    def _check(self, block: Tensor) -> None:
        if self.slots and block.shape != self.slots[0].shape:
            raise DimensionError(f"block shape {block.shape} != memory block {self.slots[0].shape}")

    def bootstrap_initial(self, block) -> None:
        """First pass at t=1: fill every slot with the intermediate-map tokens."""
        if self.phase != "empty":
            raise UsageError("memory bootstrap is only allowed at t=1")
        block = as_tensor(block)
        self.slots = [block] * self.capacity
        self.phase = "initial"

    def bootstrap_final(self, block) -> None:
        """Second pass at t=1: overwrite every slot with the final tokens."""
        if self.phase != "initial":
            raise UsageError("final bootstrap must follow the initial bootstrap at t=1")
        block = as_tensor(block)
        self._check(block)
        self.slots = [block] * self.capacity
        self.phase = "ready"
        self.step = 1

    def push(self, block) -> "TemporalMemory":
        if self.phase != "ready":
            raise UsageError("memory must be bootstrapped before pushing")
        block = as_tensor(block)
        self._check(block)
        self.slots = self.slots[1:] + [block]
        self.step += 1
        return self

    def concat(self) -> Tensor:
        if not self.slots:
            raise UsageError("memory is empty")
        return concat(self.slots, axis=-2)

    def detach(self) -> None:
        self.slots = [s.detach() for s in self.slots]

    def __len__(self) -> int:
        return len(self.slots)


def memory_push(memory: TemporalMemory, block) -> TemporalMemory:
    return memory.push(block)


def memory_bootstrap(initial_block, final_block, capacity: int,
                     memory: TemporalMemory | None = None) -> TemporalMemory:
    """Both t=1 phases in order. Pass ``final_block=None`` to stop after phase one."""
    memory = TemporalMemory(capacity) if memory is None else memory
    memory.bootstrap_initial(initial_block)
    if final_block is not None:
        memory.bootstrap_final(final_block)
    return memory


class TemporalQueryDecoder(Module):
    """Query-based ablation: learned queries read memory, then the compact feature."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d = cfg.d
        self.queries = param(rng.normal(0.0, cfg.query_std, (cfg.n_m, d)))
        self.attn_mem = Attention(d, cfg.n_heads, rng)
        self.attn_feat = Attention(d, cfg.n_heads, rng)
        self.ffn = FeedForward(d, cfg.ffn_ratio * d, rng)
        self.norm1 = LayerNorm(d)
        self.norm2 = LayerNorm(d)
        self.norm3 = LayerNorm(d)

    def __call__(self, memory_tokens: Tensor, f_c: Tensor) -> Tensor:
        q = self.queries
        lead = f_c.shape[:-2]
        if lead:
            q = expand(q, lead + q.shape)
        q1 = cross_attend_block(q, memory_tokens, self.attn_mem, self.norm1)
        q2 = cross_attend_block(q1, f_c, self.attn_feat, self.norm2)
        return ffn_block(q2, self.ffn, self.norm3)


def variant_select(mode: str, s_c, n_m: int, *, h_i: Heatmap | None = None,
                   h_f: Heatmap | None = None, boxes=None, patch: int | None = None,
                   memory_tokens: Tensor | None = None, f_c: Tensor | None = None,
                   decoder: TemporalQueryDecoder | None = None) -> Tensor:
    """Build the per-step temporal feature with one of the ablation strategies."""
    s_c = as_tensor(s_c)
    if mode == "combined":
        return select_tokens(s_c, combine_heatmaps(h_i, h_f), n_m)
    if mode == "h_i_only":
        return select_tokens(s_c, h_i, n_m)
    if mode == "h_f_only":
        return select_tokens(s_c, h_f, n_m)
    if mode == "roi":
        box_list = [boxes] if isinstance(boxes, BBox) else list(boxes)
        grid = (h_f or h_i).grid
        rows = []
        for n, b in enumerate(box_list):
            try:
                rows.append(roi_indices(b, grid, patch, n_m))
            except EmptyRegionError as exc:
                log.warning("roi selection fell back to combined heatmap: %s", exc)
                scores = combine_heatmaps(h_i, h_f).values
                scores = scores[n] if scores.ndim > 1 else scores
                rows.append(select_indices(scores, n_m))
        idx = rows[0] if isinstance(boxes, BBox) else np.stack(rows)
        return _gather(s_c, idx)
    if mode == "query":
        if decoder is None or memory_tokens is None or f_c is None:
            raise ConfigError("query mode needs a decoder, memory tokens and the compact feature")
        return decoder(memory_tokens, f_c)
    raise ConfigError(f"unknown temporal selection mode {mode!r}")
