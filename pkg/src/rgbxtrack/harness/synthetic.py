"""Synthetic paired RGB/X sequences: a bright target drifting over textured noise.

Scenario kinds:
  * ``clean`` - both modalities show the target.
  * ``rgb_advantage`` - the X frames are flattened toward their mean.
  * ``x_advantage`` - RGB is washed out: the target fades into the background
    while distractors take on the target's color.
  * ``modality_missing`` - X frames are exact copies of the RGB frames.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass, field

import numpy as np

from ..boxes import BBox
from ..config import SCENARIOS, DataConfig
from ..errors import ConfigError
from ..tokenizer import Frame


@dataclass
class Scenario:
    kind: str = "clean"
    length: int = 30
    frame_size: int = 64
    modality: str = "thermal"
    distractors: int = 2
    max_speed: float = 2.5
    target_size: tuple = (9.0, 14.0)
    color_drift: float = 0.5
    sensor_noise: float = 0.02
    corruption: float = 0.85
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if self.length < 2:
            raise ConfigError("sequences need at least two frames")

    @classmethod
    def from_data_config(cls, data: DataConfig, kind: str, length: int) -> "Scenario":
        return cls(kind=kind, length=length, frame_size=data.frame_size, modality=data.modality,
                   distractors=data.distractors, max_speed=data.max_speed,
                   target_size=tuple(data.target_size))


def _smooth_noise(rng: np.random.Generator, channels: int, size: int, cells: int) -> np.ndarray:
    coarse = rng.random((channels, cells + 1, cells + 1))
    pos = np.linspace(0, cells, size)
    i0 = np.minimum(pos.astype(int), cells - 1)
    t = pos - i0
    rows = coarse[:, i0, :] * (1 - t)[None, :, None] + coarse[:, i0 + 1, :] * t[None, :, None]
    return rows[:, :, i0] * (1 - t)[None, None, :] + rows[:, :, i0 + 1] * t[None, None, :]


def _coverage(center: float, extent: float, size: int) -> np.ndarray:
    lo, hi = center - extent / 2, center + extent / 2
    px = np.arange(size)
    return np.clip(np.minimum(px + 1, hi) - np.maximum(px, lo), 0.0, 1.0)


def _paint(img: np.ndarray, box: BBox, color: np.ndarray) -> None:
    n = img.shape[-1]
    mask = np.outer(_coverage(box.y_c, box.h, n), _coverage(box.x_c, box.w, n))
    img *= 1.0 - mask
    img += mask * color.reshape(-1, 1, 1)


class _Walker:
    """Smooth random walk with inertia, reflected at the frame borders."""

    def __init__(self, rng, size, w, h, max_speed):
        self.rng, self.size, self.max_speed = rng, size, max_speed
        self.w, self.h = w, h
        margin = max(w, h) / 2 + 2
        self.x = rng.uniform(margin, size - margin)
        self.y = rng.uniform(margin, size - margin)
        self.vx, self.vy = rng.normal(0, max_speed / 2, 2)

    def step(self):
        self.vx = 0.85 * self.vx + self.rng.normal(0, 0.6)
        self.vy = 0.85 * self.vy + self.rng.normal(0, 0.6)
        speed = np.hypot(self.vx, self.vy)
        if speed > self.max_speed:
            self.vx *= self.max_speed / speed
            self.vy *= self.max_speed / speed
        self.x += self.vx
        self.y += self.vy
        mx, my = self.w / 2 + 1, self.h / 2 + 1
        if not mx <= self.x <= self.size - mx:
            self.vx = -self.vx
            self.x = float(np.clip(self.x, mx, self.size - mx))
        if not my <= self.y <= self.size - my:
            self.vy = -self.vy
            self.y = float(np.clip(self.y, my, self.size - my))

    def box(self, w=None, h=None) -> BBox:
        return BBox(float(self.x), float(self.y), float(w or self.w), float(h or self.h))


def _random_color(rng: np.random.Generator) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(rng.random(), rng.uniform(0.6, 1.0), rng.uniform(0.8, 1.0)))


def gen_sequence(scenario: Scenario, seed: int) -> list[Frame]:
    """Generate ``scenario.length`` frames; fully determined by ``seed``."""
    rng = np.random.default_rng(seed)
    n = scenario.frame_size
    lo, hi = scenario.target_size
    tw, th = rng.uniform(lo, hi), rng.uniform(lo, hi)

    bg_rgb = 0.25 + 0.4 * _smooth_noise(rng, 3, n, 6) + 0.05 * rng.random((3, n, n))
    bg_x = 0.22 + 0.2 * np.repeat(_smooth_noise(rng, 1, n, 5), 3, axis=0)

    target = _Walker(rng, n, tw, th, scenario.max_speed)
    color0, color1 = _random_color(rng), _random_color(rng)
    heat0 = rng.uniform(0.85, 0.98)
    distractors = []
    for _ in range(scenario.distractors):
        dw, dh = rng.uniform(lo, hi), rng.uniform(lo, hi)
        distractors.append((_Walker(rng, n, dw, dh, scenario.max_speed),
                            _random_color(rng), rng.uniform(0.45, 0.6)))

    frames = []
    for t in range(scenario.length):
        if t:
            target.step()
            for walker, _, _ in distractors:
                walker.step()
        frac = t / max(scenario.length - 1, 1)
        color = (1 - scenario.color_drift * frac) * color0 + scenario.color_drift * frac * color1
        scale = 1.0 + 0.15 * np.sin(2 * np.pi * frac + seed % 7)
        box = target.box(tw * scale, th * scale).clamped(n, n)

        rgb = bg_rgb.copy()
        xim = bg_x.copy()
        for walker, dcolor, dheat in distractors:
            dbox = walker.box()
            if scenario.kind == "x_advantage":
                dcolor = color
            _paint(rgb, dbox, dcolor)
            _paint(xim, dbox, np.full(3, dheat))
        tcolor = color
        if scenario.kind == "x_advantage":
            y0, y1 = int(max(box.y_c - box.h, 0)), int(min(box.y_c + box.h, n))
            x0, x1 = int(max(box.x_c - box.w, 0)), int(min(box.x_c + box.w, n))
            local = bg_rgb[:, y0:y1, x0:x1].reshape(3, -1).mean(axis=1)
            tcolor = (1 - scenario.corruption) * color + scenario.corruption * local
        _paint(rgb, box, tcolor)
        _paint(xim, box, np.full(3, heat0))

        rgb += rng.normal(0, scenario.sensor_noise, rgb.shape)
        xim += rng.normal(0, scenario.sensor_noise, xim.shape)
        if scenario.kind == "rgb_advantage":
            mean = xim.mean()
            xim = mean + (1 - scenario.corruption) * (xim - mean)
        # float32 storage keeps a 200-sequence training set in memory
        rgb = np.clip(rgb, 0.0, 1.0).astype(np.float32)
        xim = np.clip(xim, 0.0, 1.0).astype(np.float32)
        if scenario.kind == "modality_missing":
            xim = rgb.copy()
        frames.append(Frame(rgb, xim, scenario.modality, box))
    return frames


def make_dataset(data: DataConfig, n: int, length: int, seed: int,
                 kinds: list[str] | dict | None = None) -> list[list[Frame]]:
    """``n`` sequences with scenario kinds drawn from ``kinds`` (weights or cycle list)."""
    rng = np.random.default_rng(seed)
    kinds = kinds if kinds is not None else data.scenario_mix
    if isinstance(kinds, dict):
        names = list(kinds)
        p = np.array([kinds[k] for k in names], dtype=float)
        chosen = [names[i] for i in rng.choice(len(names), size=n, p=p / p.sum())]
    else:
        chosen = [kinds[i % len(kinds)] for i in range(n)]
    seeds = rng.integers(0, 2 ** 31 - 1, size=n)
    return [gen_sequence(Scenario.from_data_config(data, k, length), int(s))
            for k, s in zip(chosen, seeds)]
