"""Square crops around a box and the frame <-> crop coordinate mapping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..boxes import BBox
from ..tokenizer import Frame, normalize_image


@dataclass(frozen=True)
class Window:
    """Crop of side ``out`` pixels whose top-left sits at ``(x0, y0)`` in the frame.

    ``scale`` is frame pixels per crop pixel; 1.0 means a native-resolution cut.
    """

    x0: float
    y0: float
    out: int
    scale: float = 1.0

    def to_crop(self, b: BBox) -> BBox:
        s = self.scale
        return BBox((b.x_c - self.x0) / s, (b.y_c - self.y0) / s, b.w / s, b.h / s)

    def to_frame(self, b: BBox) -> BBox:
        s = self.scale
        return BBox(b.x_c * s + self.x0, b.y_c * s + self.y0, b.w * s, b.h * s)


def window_at(cx: float, cy: float, out: int, frame_hw: tuple[int, int],
              side: float | None = None) -> Window:
    """Window centered on ``(cx, cy)`` and shifted to stay inside the frame.

    ``side`` is the crop extent in frame pixels (default ``out``, native scale).
    Native windows snap to integer offsets so cropping is an exact slice.
    """
    height, width = frame_hw
    side = float(out if side is None else side)
    x0, y0 = cx - side / 2, cy - side / 2
    x0 = float(np.clip(x0, 0.0, max(width - side, 0.0)))
    y0 = float(np.clip(y0, 0.0, max(height - side, 0.0)))
    if side == out:
        x0, y0 = float(round(x0)), float(round(y0))
    return Window(x0, y0, out, side / out)


def search_window(b: BBox, out: int, frame_hw: tuple[int, int], factor: float = 0.0) -> Window:
    """Search region around ``b``: native ``out`` pixels, or ``factor`` x the box size if > 0."""
    side = None if factor <= 0 else max(factor * max(b.w, b.h), 1.0)
    return window_at(b.x_c, b.y_c, out, frame_hw, side)


def crop(img: np.ndarray, win: Window) -> np.ndarray:
    """Cut ``win`` from ``[3, H, W]``; resampled crops use bilinear interpolation with edge clamping."""
    if win.scale == 1.0 and float(win.x0).is_integer() and float(win.y0).is_integer():
        x0, y0 = int(win.x0), int(win.y0)
        if x0 + win.out <= img.shape[2] and y0 + win.out <= img.shape[1]:
            return img[:, y0:y0 + win.out, x0:x0 + win.out].copy()
    pos = (np.arange(win.out) + 0.5) * win.scale - 0.5
    ys = np.clip(win.y0 + pos, 0, img.shape[1] - 1)
    xs = np.clip(win.x0 + pos, 0, img.shape[2] - 1)
    y_lo = np.minimum(ys.astype(int), img.shape[1] - 2)
    x_lo = np.minimum(xs.astype(int), img.shape[2] - 2)
    ty = (ys - y_lo)[None, :, None]
    tx = (xs - x_lo)[None, None, :]
    top = img[:, y_lo][:, :, x_lo] * (1 - tx) + img[:, y_lo][:, :, x_lo + 1] * tx
    bottom = img[:, y_lo + 1][:, :, x_lo] * (1 - tx) + img[:, y_lo + 1][:, :, x_lo + 1] * tx
    return top * (1 - ty) + bottom * ty


def crop_pair(frame: Frame, win: Window, rgb_only: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Normalized RGB and X crops; ``rgb_only`` clones the RGB crop into the X slot."""
    rgb = normalize_image(crop(frame.rgb, win), frame.modality_tag, "rgb")
    if rgb_only:
        return rgb, rgb.copy()
    return rgb, normalize_image(crop(frame.x, win), frame.modality_tag, "x")


def template_pair(frame: Frame, b: BBox, size: int, rgb_only: bool = False):
    """Native-resolution template crops centered on ``b``."""
    return crop_pair(frame, window_at(b.x_c, b.y_c, size, frame.size), rgb_only)
