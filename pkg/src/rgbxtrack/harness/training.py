"""Two-stage training: spatial tracker first, then the temporal parts on clips.

Stage 1 samples one search image per example and trains everything except
the temporal guidance. Stage 2 freezes tokenizer, fusion and backbone and
trains guidance, head (and the query decoder when used) on multi-frame clips
that run through the memory exactly as online tracking does.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..config import RunConfig, TrainConfig
from ..errors import ConfigError, NumericError
from ..guidance_head import LossWeights, boxes_at, gt_cells, gt_score_map, total_loss
from ..model import SearchInputs, TrackerBase
from ..numcore import Tensor, backward
from ..tokenizer import Frame
from .crops import crop_pair, search_window, template_pair
from .variants import build_model

log = logging.getLogger(__name__)


# -- optimizers -------------------------------------------------------------


class Optimizer:
    def __init__(self, params: list[Tensor], lr: float, weight_decay: float = 0.0,
                 grad_clip: float = 0.0):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def clipped_grads(self) -> tuple[list[np.ndarray], float]:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if not math.isfinite(norm):
            raise NumericError("non-finite gradient norm")
        if self.grad_clip > 0 and norm > self.grad_clip:
            grads = [g * (self.grad_clip / norm) for g in grads]
        return grads, norm

    def step(self, lr: float | None = None) -> float:
        raise NotImplementedError


class SGD(Optimizer):
    """Heavy-ball momentum with L2 weight decay folded into the gradient."""

    def __init__(self, params, lr, momentum=0.9, weight_decay=0.0, grad_clip=0.0):
        super().__init__(params, lr, weight_decay, grad_clip)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> float:
        lr = self.lr if lr is None else lr
        grads, norm = self.clipped_grads()
        for p, g, v in zip(self.params, grads, self.velocity):
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data = p.data - lr * v
        return norm


class AdamW(Optimizer):
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0,
                 grad_clip=0.0):
        super().__init__(params, lr, weight_decay, grad_clip)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> float:
        lr = self.lr if lr is None else lr
        grads, norm = self.clipped_grads()
        self.t += 1
        c1, c2 = 1 - self.b1 ** self.t, 1 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps) + self.weight_decay * p.data
            p.data = p.data - lr * update
        return norm


def make_optimizer(train: TrainConfig, params: list[Tensor], lr: float | None = None) -> Optimizer:
    lr = train.lr if lr is None else lr
    if train.optimizer == "sgd":
        return SGD(params, lr, train.momentum, train.weight_decay, train.grad_clip)
    if train.optimizer == "adamw":
        return AdamW(params, lr, weight_decay=train.weight_decay, grad_clip=train.grad_clip)
    raise ConfigError(f"train.optimizer: unknown optimizer {train.optimizer!r}")


def lr_at(step: int, total: int, base: float, warmup: int) -> float:
    """Linear warmup, then cosine decay to a tenth of ``base``."""
    if warmup and step < warmup:
        return base * (step + 1) / warmup
    frac = (step - warmup) / max(total - warmup, 1)
    return base * (0.1 + 0.45 * (1 + math.cos(math.pi * min(frac, 1.0))))


# -- samplers ----------------------------------------------------------------


@dataclass
class Batch:
    inputs: SearchInputs
    gt: np.ndarray          # [B, 4] (stage 1) or [B, F, 4] (stage 2), search-crop pixels
    frames: int = 1
    searches: list = field(default_factory=list)


def _search_crop(frame: Frame, size: int, jitter: float, rng: np.random.Generator):
    b = frame.gt_box
    dx, dy = rng.uniform(-jitter, jitter, 2) if jitter > 0 else (0.0, 0.0)
    win = search_window(b.shifted(dx, dy), size, frame.size)
    s_rgb, s_x = crop_pair(frame, win)
    return s_rgb, s_x, win.to_crop(b).as_array()


def sample_stage1(data: list[list[Frame]], cfg: RunConfig, rng: np.random.Generator,
                  batch_size: int | None = None) -> Batch:
    """One search image per example, templates from earlier or later frames."""
    m, tr = cfg.model, cfg.train
    batch_size = batch_size or tr.batch_size
    z0r, z0x, ztr, ztx, sr, sx, gt = [], [], [], [], [], [], []
    for _ in range(batch_size):
        seq = data[rng.integers(len(data))]
        i, j = sorted(rng.integers(0, len(seq), 2))
        if rng.random() < 0.5:
            i, j = j, i
        k = int(rng.integers(min(i, j), max(i, j) + 1))
        z0 = template_pair(seq[i], seq[i].gt_box, m.template_size)
        zt = template_pair(seq[k], seq[k].gt_box, m.template_size)
        s_rgb, s_x, box = _search_crop(seq[j], m.search_size, tr.search_jitter, rng)
        for lst, v in zip((z0r, z0x, ztr, ztx, sr, sx, gt), (*z0, *zt, s_rgb, s_x, box)):
            lst.append(v)
    inputs = SearchInputs(*(np.stack(v) for v in (z0r, z0x, ztr, ztx, sr, sx)))
    return Batch(inputs, np.stack(gt), 1)


def sample_stage2(data: list[list[Frame]], cfg: RunConfig, rng: np.random.Generator,
                  batch_size: int | None = None) -> Batch:
    """Clips of ``stage2_frames`` consecutive search frames after the template frame."""
    m, tr = cfg.model, cfg.train
    batch_size = batch_size or tr.stage2_batch_size
    n_f = tr.stage2_frames
    z0r, z0x, ztr, ztx, gt = [], [], [], [], []
    searches = [([], []) for _ in range(n_f)]
    for _ in range(batch_size):
        seq = data[rng.integers(len(data))]
        if len(seq) < n_f + 1:
            raise ConfigError(f"stage 2 needs sequences longer than {n_f} frames")
        start = int(rng.integers(1, len(seq) - n_f + 1))
        i = int(rng.integers(0, start))
        z0 = template_pair(seq[i], seq[i].gt_box, m.template_size)
        zt = template_pair(seq[start - 1], seq[start - 1].gt_box, m.template_size)
        boxes = []
        for f in range(n_f):
            s_rgb, s_x, box = _search_crop(seq[start + f], m.search_size, tr.stage2_jitter, rng)
            searches[f][0].append(s_rgb)
            searches[f][1].append(s_x)
            boxes.append(box)
        for lst, v in zip((z0r, z0x, ztr, ztx), (*z0, *zt)):
            lst.append(v)
        gt.append(np.stack(boxes))
    z = [np.stack(v) for v in (z0r, z0x, ztr, ztx)]
    inputs = SearchInputs(*z, np.stack(searches[0][0]), np.stack(searches[0][1]))
    return Batch(inputs, np.stack(gt), n_f, [(np.stack(a), np.stack(b)) for a, b in searches])


# -- losses --------------------------------------------------------------------


def head_loss(model: TrackerBase, out, gt: np.ndarray, weights: LossWeights):
    """Focal loss on the score map plus box losses read at the ground-truth cell."""
    m = model.cfg
    gt_map = gt_score_map(gt, m.grid, m.patch)
    pred = boxes_at(out, gt_cells(gt, m.grid, m.patch), m.grid, m.patch, m.search_size)
    return total_loss(out.score, gt_map, pred, gt, m.search_size, weights)


def stage1_loss(model: TrackerBase, batch: Batch, weights: LossWeights):
    sp = model.spatial(batch.inputs)
    return head_loss(model, model.predict(sp.s_c, None), batch.gt, weights)


def stage2_loss(model: TrackerBase, batch: Batch, weights: LossWeights):
    from .tracker import temporal_step

    inp = batch.inputs
    memory = None
    total, comps = None, {"cls": 0.0, "iou": 0.0, "l1": 0.0}
    for f, (s_rgb, s_x) in enumerate(batch.searches):
        step_in = SearchInputs(inp.z0_rgb, inp.z0_x, inp.zt_rgb, inp.zt_x, s_rgb, s_x)
        step = temporal_step(model, model.spatial(step_in), memory)
        memory = step.memory
        loss, c = head_loss(model, step.out, batch.gt[:, f], weights)
        total = loss if total is None else total + loss
        for k in comps:
            comps[k] += c[k] / batch.frames
    return total * (1.0 / batch.frames), comps


# -- driver ----------------------------------------------------------------------


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    def add(self, stage: int, step: int, loss: float, comps: dict, lr: float, gnorm: float):
        self.rows.append({"stage": stage, "step": step, "loss": loss, **comps, "lr": lr,
                          "grad_norm": gnorm})


def _run_stage(model, params, cfg: RunConfig, stage: int, steps: int, sampler, loss_fn,
               rng, train_log: TrainLog, lr_scale: float = 1.0) -> None:
    tr = cfg.train
    weights = LossWeights(**tr.loss_weights)
    opt = make_optimizer(tr, params, tr.lr * lr_scale)
    for step in range(steps):
        batch = sampler(rng)
        opt.zero_grad()
        try:
            loss, comps = loss_fn(model, batch, weights)
            backward(loss)
            lr = lr_at(step, steps, opt.lr, tr.lr_warmup)
            gnorm = opt.step(lr)
        except NumericError as exc:
            raise NumericError(f"training diverged at stage {stage}, step {step}: {exc}") from exc
        train_log.add(stage, step, loss.item(), comps, lr, gnorm)
        if tr.log_every and step % tr.log_every == 0:
            log.info("stage %d step %d loss %.4f %s", stage, step, loss.item(),
                     {k: round(v, 4) for k, v in comps.items()})


def train_stage1(model: TrackerBase, data, cfg: RunConfig, rng, train_log: TrainLog) -> None:
    for mod in model.temporal_modules():
        mod.freeze()
    params = [p for mod in model.spatial_modules() for p in mod.parameters()]
    params += model.head.parameters()
    for mod in model.spatial_modules() + [model.head]:
        mod.unfreeze()
    _run_stage(model, params, cfg, 1, cfg.train.stage1_steps,
               lambda r: sample_stage1(data, cfg, r), stage1_loss, rng, train_log)


def train_stage2(model: TrackerBase, data, cfg: RunConfig, rng, train_log: TrainLog) -> None:
    for mod in model.spatial_modules():
        mod.freeze()
    for mod in model.temporal_modules():
        mod.unfreeze()
    params = [p for mod in model.temporal_modules() for p in mod.parameters()]
    _run_stage(model, params, cfg, 2, cfg.train.stage2_steps,
               lambda r: sample_stage2(data, cfg, r), stage2_loss, rng, train_log, lr_scale=0.5)


def train_two_stage(cfg: RunConfig, data: list[list[Frame]], seed: int | None = None,
                    model: TrackerBase | None = None,
                    train_log: TrainLog | None = None) -> tuple[TrackerBase, TrainLog]:
    """Stage 1 then (when the temporal module is enabled) stage 2, fully seeded."""
    seed = cfg.seed if seed is None else seed
    model = model or build_model(cfg.model, np.random.default_rng([cfg.model.init_seed, seed]))
    train_log = train_log or TrainLog()
    rng1, rng2 = np.random.default_rng([seed, 1]), np.random.default_rng([seed, 2])
    train_stage1(model, data, cfg, rng1, train_log)
    if cfg.model.use_tcm and cfg.train.stage2_steps > 0:
        train_stage2(model, data, cfg, rng2, train_log)
    return model, train_log
