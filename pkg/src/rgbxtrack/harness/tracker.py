"""Online tracking loop: spatial pass, temporal guidance, head, memory update."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..boxes import BBox, center_error, iou
from ..config import TrackConfig
from ..errors import ConfigError
from ..guidance_head import HeadOutput, decode_batch
from ..model import SearchInputs, SpatialOutput, TrackerBase
from ..numcore import no_grad
from ..tcm import (
    Heatmap,
    TemporalMemory,
    combine_heatmaps,
    final_heatmap_batch,
    intermediate_heatmap,
    select_tokens,
    variant_select,
)
from ..tokenizer import Frame
from .crops import crop_pair, search_window, template_pair


@dataclass
class StepResult:
    out: HeadOutput
    boxes: np.ndarray          # [..., 4] in search-crop pixels
    confidence: np.ndarray     # [...]
    memory: TemporalMemory | None
    heatmap: Heatmap | None = None


def _box_list(boxes: np.ndarray):
    if boxes.ndim == 1:
        return BBox.from_array(boxes)
    return [BBox.from_array(b) for b in boxes]


def temporal_step(model: TrackerBase, sp: SpatialOutput,
                  memory: TemporalMemory | None) -> StepResult:
    """Guidance + head on one (batched) search step, then store ``m^t``.

    An empty ``memory`` triggers the two-phase bootstrap: every slot is first
    filled from the intermediate map, and after the head has run, overwritten
    with the tokens selected from the final prediction.
    """
    cfg = model.cfg
    grid, patch = cfg.grid, cfg.patch
    if not cfg.use_tcm:
        out = model.predict(sp.s_c, None)
        boxes, conf = decode_batch(out, grid, patch, cfg.search_size)
        return StepResult(out, boxes, conf, None)

    h_i = intermediate_heatmap(sp.s_c, sp.z_c, grid)
    memory = memory if memory is not None else TemporalMemory(cfg.memory_len)
    first = memory.phase == "empty"
    if first:
        memory.bootstrap_initial(select_tokens(sp.s_c, h_i, cfg.n_m))
    mem_tokens = memory.concat()
    out = model.predict(sp.s_c, memory)
    boxes, conf = decode_batch(out, grid, patch, cfg.search_size)
    h_f = final_heatmap_batch(boxes, grid, patch)
    m = variant_select(cfg.tcm_mode, sp.s_c, cfg.n_m, h_i=h_i, h_f=h_f,
                       boxes=_box_list(boxes), patch=patch, memory_tokens=mem_tokens,
                       f_c=sp.features, decoder=getattr(model, "query_decoder", None))
    if first:
        memory.bootstrap_final(m)
    else:
        memory.push(m)
    return StepResult(out, boxes, conf, memory, combine_heatmaps(h_i, h_f))


def update_dynamic_template(z_t, confidence: float, threshold: float, frame: Frame,
                            b: BBox, size: int, rgb_only: bool = False):
    """Replace the dynamic template by the crop at ``b`` when ``confidence > threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"update threshold must lie in (0, 1), got {threshold}")
    if confidence > threshold:
        return template_pair(frame, b, size, rgb_only)
    return z_t


@dataclass
class TrackResult:
    boxes: list[BBox] = field(default_factory=list)
    confidences: list[float] = field(default_factory=list)
    ious: list[float] = field(default_factory=list)
    center_errors: list[float] = field(default_factory=list)
    heatmaps: dict[int, Heatmap] = field(default_factory=dict)
    template_updates: int = 0
    memory: TemporalMemory | None = None

    def __len__(self) -> int:
        return len(self.boxes)

    def records(self) -> list[dict]:
        return [{"frame": t, "box": [b.x_c, b.y_c, b.w, b.h], "confidence": c,
                 "iou": i, "center_error": e}
                for t, (b, c, i, e) in enumerate(zip(self.boxes, self.confidences,
                                                     self.ious, self.center_errors))]


def run_tracker(model: TrackerBase, sequence: list[Frame], track: TrackConfig | None = None,
                rgb_only: bool = False, heatmap_frames=()) -> TrackResult:
    """Track through ``sequence`` from the ground-truth box of its first frame.

    The first frame reports the initialization box; the memory is bootstrapped
    on a search crop of that frame. ``rgb_only`` feeds an RGB clone to the X
    interface. Combined heatmaps of the frames in ``heatmap_frames`` are kept.
    """
    return track_many(model, [sequence], track, rgb_only, heatmap_frames)[0]


def track_many(model: TrackerBase, sequences: list[list[Frame]], track: TrackConfig | None = None,
               rgb_only: bool = False, heatmap_frames=()) -> list[TrackResult]:
    """Run independent trackers over equal-length sequences in lockstep, batched."""
    track = track or TrackConfig()
    cfg = model.cfg
    if not sequences:
        return []
    length = len(sequences[0])
    if any(len(seq) != length for seq in sequences):
        raise ConfigError("lockstep tracking needs sequences of equal length")
    firsts = [seq[0] for seq in sequences]
    if any(f.gt_box is None for f in firsts):
        raise ConfigError("the first frame needs a ground-truth box")
    boxes = [f.gt_box for f in firsts]
    z0 = [template_pair(f, f.gt_box, cfg.template_size, rgb_only) for f in firsts]
    zt = list(z0)
    z0_rgb = np.stack([z[0] for z in z0])
    z0_x = np.stack([z[1] for z in z0])
    memory = None
    results = [TrackResult() for _ in sequences]
    keep = set(heatmap_frames)
    with no_grad():
        for t in range(length):
            frames = [seq[t] for seq in sequences]
            wins = [search_window(b, cfg.search_size, f.size, track.search_factor)
                    for b, f in zip(boxes, frames)]
            crops = [crop_pair(f, w, rgb_only) for f, w in zip(frames, wins)]
            inputs = SearchInputs(z0_rgb, z0_x, np.stack([z[0] for z in zt]),
                                  np.stack([z[1] for z in zt]),
                                  np.stack([c[0] for c in crops]), np.stack([c[1] for c in crops]))
            step = temporal_step(model, model.spatial(inputs), memory)
            memory = step.memory
            for n, (res, frame, win) in enumerate(zip(results, frames, wins)):
                if t in keep and step.heatmap is not None:
                    res.heatmaps[t] = Heatmap(step.heatmap.values[n], step.heatmap.grid)
                if t == 0:
                    pred, conf = frame.gt_box, 1.0
                else:
                    height, width = frame.size
                    pred = win.to_frame(BBox.from_array(step.boxes[n])).clamped(width, height)
                    conf = float(step.confidence[n])
                    new = update_dynamic_template(zt[n], conf, track.update_threshold, frame,
                                                  pred, cfg.template_size, rgb_only)
                    res.template_updates += new is not zt[n]
                    zt[n] = new
                boxes[n] = pred
                res.boxes.append(pred)
                res.confidences.append(conf)
                if frame.gt_box is not None:
                    res.ious.append(iou(pred, frame.gt_box))
                    res.center_errors.append(center_error(pred, frame.gt_box))
                else:
                    res.ious.append(float("nan"))
                    res.center_errors.append(float("nan"))
    for res in results:
        res.memory = memory
    return results
