"""Axis-aligned boxes in center format and plain-float overlap measures."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class BBox:
    """Center-format box ``(x_c, y_c, w, h)`` in pixel coordinates."""

    x_c: float
    y_c: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ConfigError(f"box sizes must be positive, got w={self.w}, h={self.h}")

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (self.x_c - self.w / 2, self.y_c - self.h / 2,
                self.x_c + self.w / 2, self.y_c + self.h / 2)

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.x_c, self.y_c, self.w, self.h])

    def shifted(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x_c + dx, self.y_c + dy, self.w, self.h)

    def scaled(self, factor: float) -> "BBox":
        return BBox(self.x_c, self.y_c, self.w * factor, self.h * factor)

    def clamped(self, width: float, height: float, min_size: float = 1.0) -> "BBox":
        """Clamp the center into the image and sizes into ``[min_size, image]``."""
        return BBox(float(np.clip(self.x_c, 0, width)), float(np.clip(self.y_c, 0, height)),
                    float(np.clip(self.w, min_size, width)), float(np.clip(self.h, min_size, height)))

    @classmethod
    def from_array(cls, a) -> "BBox":
        a = np.asarray(a, dtype=float).reshape(4)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


def _inter_union(a: BBox, b: BBox) -> tuple[float, float]:
    ax0, ay0, ax1, ay1 = a.corners
    bx0, by0, bx1, by1 = b.corners
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    return inter, a.area + b.area - inter


def iou(a: BBox, b: BBox) -> float:
    inter, union = _inter_union(a, b)
    return inter / union


def giou(a: BBox, b: BBox) -> float:
    """IoU minus the empty fraction of the smallest enclosing box."""
    inter, union = _inter_union(a, b)
    ax0, ay0, ax1, ay1 = a.corners
    bx0, by0, bx1, by1 = b.corners
    enclose = (max(ax1, bx1) - min(ax0, bx0)) * (max(ay1, by1) - min(ay0, by0))
    return inter / union - (enclose - union) / enclose


def center_error(a: BBox, b: BBox) -> float:
    return float(np.hypot(a.x_c - b.x_c, a.y_c - b.y_c))
