"""Temporal guidance decoder, convolutional prediction head, box decoding and losses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .boxes import BBox
from .config import ModelConfig
from .errors import DimensionError, NumericError
from .numcore import (
    Attention,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    Tensor,
    abs_,
    as_tensor,
    clip,
    concat,
    gather_rows,
    gelu,
    log,
    maximum,
    mean,
    minimum,
    sigmoid,
    tsum,
)
from .scm import cross_attend_block, ffn_block
from .tcm import TemporalMemory

# -- temporal guidance --------------------------------------------------------


class TemporalGuidance(Module):
    """Decoder block letting search tokens read the concatenated memory."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, zero_out: bool = True):
        d = cfg.d
        self.attn = Attention(d, cfg.n_heads, rng, zero_out=zero_out)
        self.ffn = FeedForward(d, cfg.ffn_ratio * d, rng, zero_out=zero_out)
        self.norm1 = LayerNorm(d)
        self.norm2 = LayerNorm(d)

    def __call__(self, s_c, memory: TemporalMemory | Tensor) -> Tensor:
        return guide(s_c, memory, self)


def guide(s_c, memory: TemporalMemory | Tensor, params: TemporalGuidance) -> Tensor:
    mem = memory.concat() if isinstance(memory, TemporalMemory) else as_tensor(memory)
    s1 = cross_attend_block(as_tensor(s_c), mem, params.attn, params.norm1)
    return ffn_block(s1, params.ffn, params.norm2)


# -- prediction head ---------------------------------------------------------


def conv_indices(grid: tuple[int, int], k: int) -> np.ndarray:
    """``[N, k*k]`` neighbour indices for a same-padded ``k x k`` conv; ``-1`` pads."""
    rows, cols = grid
    r = np.arange(rows)[:, None, None, None]
    c = np.arange(cols)[None, :, None, None]
    off = np.arange(k) - k // 2
    rr = r + off[None, None, :, None]
    cc = c + off[None, None, None, :]
    valid = (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols)
    idx = np.where(valid, rr * cols + cc, -1)
    return idx.reshape(rows * cols, k * k)


class GridConv(Module):
    """``k x k`` convolution over tokens laid out on the search grid (im2col)."""

    def __init__(self, c_in: int, c_out: int, grid: tuple[int, int], k: int,
                 rng: np.random.Generator):
        self.k = k
        self._idx = conv_indices(grid, k)
        self.lin = Linear(k * k * c_in, c_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        if self.k == 1:
            return self.lin(x)
        cols = gather_rows(x, self._idx)
        cols = cols.reshape(cols.shape[:-2] + (cols.shape[-2] * cols.shape[-1],))
        return self.lin(cols)


class _Branch(Module):
    def __init__(self, d: int, c: int, out: int, grid, rng):
        self.conv1 = GridConv(d, c, grid, 3, rng)
        self.conv2 = GridConv(c, c, grid, 3, rng)
        self.proj = GridConv(c, out, grid, 1, rng)

    def __call__(self, x):
        return self.proj(gelu(self.conv2(gelu(self.conv1(x)))))


class HeadOutput(NamedTuple):
    score: Tensor    # [..., N_s] logits
    offset: Tensor   # [..., N_s, 2] in (0, 1), fraction of a patch
    size: Tensor     # [..., N_s, 2] in (0, 1), fraction of the search image


class PredictionHead(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.grid = cfg.grid
        self.patch = cfg.patch
        self.search_size = cfg.search_size
        c = cfg.head_channels
        self.score = _Branch(cfg.d, c, 1, cfg.grid, rng)
        self.offset = _Branch(cfg.d, c, 2, cfg.grid, rng)
        self.size = _Branch(cfg.d, c, 2, cfg.grid, rng)
        # bias the initial score low so the focal loss starts near its easy-negative regime
        self.score.proj.lin.bias.data[:] = -2.0

    def __call__(self, s: Tensor) -> HeadOutput:
        score = self.score(s)
        score = score.reshape(score.shape[:-1])
        return HeadOutput(score, sigmoid(self.offset(s)), sigmoid(self.size(s)))

    def boxes_at(self, out: HeadOutput, cells: np.ndarray) -> Tensor:
        """Differentiable ``[..., 4]`` pixel boxes read at flat cell indices."""
        return boxes_at(out, cells, self.grid, self.patch, self.search_size)


def boxes_at(out: HeadOutput, cells: np.ndarray, grid, patch: int, image_size: int) -> Tensor:
    cells = np.asarray(cells)
    cols = grid[1]
    if out.offset.ndim == 2:
        off, size = out.offset[cells], out.size[cells]
    else:
        b = np.arange(out.offset.shape[0])
        off, size = out.offset[b, cells], out.size[b, cells]
    base = np.stack([cells % cols, cells // cols], axis=-1).astype(np.float64)
    center = (off + base) * float(patch)
    wh = size * float(image_size)
    return concat([center, wh], axis=-1)


class BoxPrediction(NamedTuple):
    box: BBox
    confidence: float
    degenerate: bool = False


def decode_bbox(score, offset, size, patch: int, image_size: tuple[int, int] | int) -> BoxPrediction:
    """Decode one prediction from ``score [r, c]``, ``offset [2, r, c]``, ``size [2, r, c]``.

    ``offset`` is in patch units, ``size`` a fraction of the ``(W, H)`` image;
    ``score`` holds logits. An all-equal score map decodes at cell (0, 0) and is
    flagged degenerate.
    """
    score = np.asarray(score, dtype=np.float64)
    offset = np.asarray(offset, dtype=np.float64)
    size = np.asarray(size, dtype=np.float64)
    if offset.shape != (2,) + score.shape or size.shape != (2,) + score.shape:
        raise DimensionError("score, offset and size maps must share the grid")
    if isinstance(image_size, int):
        image_size = (image_size, image_size)
    width, height = image_size
    degenerate = bool(np.ptp(score) == 0)
    row, col = np.unravel_index(int(np.argmax(score)), score.shape)
    x_c = (col + offset[0, row, col]) * patch
    y_c = (row + offset[1, row, col]) * patch
    w = max(size[0, row, col] * width, 1e-3)
    h = max(size[1, row, col] * height, 1e-3)
    conf = float(0.5 * (1.0 + np.tanh(0.5 * score[row, col])))
    return BoxPrediction(BBox(float(x_c), float(y_c), float(w), float(h)), conf, degenerate)


def decode_batch(out: HeadOutput, grid, patch: int, image_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized argmax decoding: ``([..., 4] boxes, [...] confidences)``."""
    score = out.score.data
    cells = np.argmax(score, axis=-1)
    off = np.take_along_axis(out.offset.data, cells[..., None, None], axis=-2)[..., 0, :]
    size = np.take_along_axis(out.size.data, cells[..., None, None], axis=-2)[..., 0, :]
    cols = grid[1]
    base = np.stack([cells % cols, cells // cols], axis=-1)
    center = (base + off) * patch
    wh = np.maximum(size * image_size, 1e-3)
    best = np.take_along_axis(score, cells[..., None], axis=-1)[..., 0]
    conf = 0.5 * (1.0 + np.tanh(0.5 * best))
    return np.concatenate([center, wh], axis=-1), conf


# -- losses -----------------------------------------------------------------


@dataclass
class LossWeights:
    iou: float = 2.0
    l1: float = 5.0


def gt_cells(gt_boxes: np.ndarray, grid, patch: int) -> np.ndarray:
    gt = np.asarray(gt_boxes, dtype=np.float64)
    rows, cols = grid
    col = np.clip(np.floor(gt[..., 0] / patch), 0, cols - 1).astype(int)
    row = np.clip(np.floor(gt[..., 1] / patch), 0, rows - 1).astype(int)
    return row * cols + col


def gt_score_map(gt_boxes: np.ndarray, grid, patch: int) -> np.ndarray:
    """Gaussian target on the token grid, exactly 1 at the cell holding the center.

    Sigma per axis is a third of the box size, measured in cells.
    """
    gt = np.asarray(gt_boxes, dtype=np.float64)
    rows, cols = grid
    cell = gt_cells(gt, grid, patch)
    r0, c0 = (cell // cols)[..., None], (cell % cols)[..., None]
    rr, cc = np.divmod(np.arange(rows * cols), cols)
    sx = np.maximum(gt[..., 2:3] / 3.0 / patch, 1e-6)
    sy = np.maximum(gt[..., 3:4] / 3.0 / patch, 1e-6)
    return np.exp(-0.5 * (((cc - c0) / sx) ** 2 + ((rr - r0) / sy) ** 2))


def focal_loss(score, gt_map, alpha: float = 2.0, beta: float = 4.0, eps: float = 1e-4) -> Tensor:
    """Penalty-reduced pixel-wise focal loss on sigmoid scores (logits in)."""
    gt = np.asarray(gt_map, dtype=np.float64)
    pred = clip(sigmoid(score), eps, 1.0 - eps)
    pos = (gt == 1.0).astype(np.float64)
    neg = 1.0 - pos
    pos_term = log(pred) * (1.0 - pred) ** alpha * pos
    neg_term = log(1.0 - pred) * pred ** alpha * ((1.0 - gt) ** beta * neg)
    n_pos = max(pos.sum(), 1.0)
    return -(tsum(pos_term) + tsum(neg_term)) * (1.0 / n_pos)


def _corners(b: Tensor):
    half = b[..., 2:] * 0.5
    return b[..., 0:1] - half[..., 0:1], b[..., 1:2] - half[..., 1:2], \
        b[..., 0:1] + half[..., 0:1], b[..., 1:2] + half[..., 1:2]


def giou_tensor(pred, target) -> Tensor:
    """Generalized IoU for ``[..., 4]`` center-format boxes; returns ``[..., 1]``."""
    pred, target = as_tensor(pred), as_tensor(target)
    px0, py0, px1, py1 = _corners(pred)
    tx0, ty0, tx1, ty1 = _corners(target)
    iw = maximum(minimum(px1, tx1) - maximum(px0, tx0), 0.0)
    ih = maximum(minimum(py1, ty1) - maximum(py0, ty0), 0.0)
    inter = iw * ih
    union = pred[..., 2:3] * pred[..., 3:4] + target[..., 2:3] * target[..., 3:4] - inter
    enclose = (maximum(px1, tx1) - minimum(px0, tx0)) * (maximum(py1, ty1) - minimum(py0, ty0))
    return inter / union - (enclose - union) / enclose


def giou_loss(pred, target) -> Tensor:
    """Mean of ``1 - GIoU`` over all leading axes."""
    if isinstance(pred, BBox):
        pred = pred.as_array()
    if isinstance(target, BBox):
        target = target.as_array()
    return mean(1.0 - giou_tensor(pred, target))


def l1_loss(pred, target, image_size: int | tuple[int, int]) -> Tensor:
    """Mean absolute error on image-normalized ``(x_c, y_c, w, h)``."""
    if isinstance(image_size, int):
        image_size = (image_size, image_size)
    w, h = image_size
    scale = np.array([1.0 / w, 1.0 / h, 1.0 / w, 1.0 / h])
    return mean(abs_((as_tensor(pred) - as_tensor(target)) * scale))


def total_loss(score, gt_map, pred_box, gt_box, image_size, weights: LossWeights | None = None):
    """``L_cls + w_iou * L_iou + w_l1 * L_1``; returns ``(loss, components)``."""
    weights = weights or LossWeights()
    l_cls = focal_loss(score, gt_map)
    l_iou = giou_loss(pred_box, gt_box)
    l_l1 = l1_loss(pred_box, gt_box, image_size)
    comps = {"cls": l_cls.item(), "iou": l_iou.item(), "l1": l_l1.item()}
    if not all(np.isfinite(v) for v in comps.values()):
        raise NumericError(f"non-finite loss component: {comps}")
    return l_cls + weights.iou * l_iou + weights.l1 * l_l1, comps
