"""Finite-difference suites for every differentiable component at toy dimensions.

Each suite builds seeded inputs, reduces the component output to a scalar with
fixed random weights and returns the worst relative error per checked tensor.
"""
from __future__ import annotations

import time
from typing import Callable

import numpy as np

from .backbone import EncoderBlock
from .config import ModelConfig
from .guidance_head import (
    PredictionHead,
    TemporalGuidance,
    boxes_at,
    focal_loss,
    giou_loss,
    gt_cells,
    gt_score_map,
    guide,
    l1_loss,
    total_loss,
)
from .model import CompactTracker, SearchInputs
from .numcore import Tensor, grad_check_many, matmul, param, scaled_attention, softmax_rows, tsum
from .scm import SpatialCompactModule
from .tcm import TemporalQueryDecoder, combine_heatmaps, final_heatmap_batch, intermediate_heatmap, select_tokens
from .tokenizer import TokenStream

STEP = 1e-4
MAX_COORDS = 12


def _sampled_params(module, rng, limit: int = 6) -> dict[str, Tensor]:
    named = list(module.named_parameters())
    idx = rng.choice(len(named), size=min(limit, len(named)), replace=False)
    return {named[i][0]: named[i][1] for i in sorted(idx)}


def _streams(cfg: ModelConfig, rng):
    # leaf token tensors, so the stream itself receives gradients
    def one():
        return TokenStream(param(rng.normal(size=(cfg.n_zs, cfg.d))), cfg.n_z, cfg.n_s, cfg.grid)
    return one(), one()


def suite_attention(cfg: ModelConfig, rng) -> dict[str, float]:
    x = param(rng.normal(size=(6, cfg.d)))
    w = param(rng.normal(size=(cfg.d, cfg.d)) / np.sqrt(cfg.d))
    k = param(rng.normal(size=(5, cfg.d)))
    v = param(rng.normal(size=(5, cfg.d)))
    probe = rng.normal(size=(6, cfg.d))

    def f():
        return tsum(softmax_rows(matmul(x, w))) + tsum(
            scaled_attention(matmul(x, w), k, v, cfg.n_heads) * probe)
    return grad_check_many(f, {"x": x, "w": w, "k": k, "v": v}, STEP, MAX_COORDS)


def suite_scm(cfg: ModelConfig, rng) -> dict[str, float]:
    scm = SpatialCompactModule(cfg, rng)
    f_r, f_x = _streams(cfg, rng)
    probe = rng.normal(size=(2 * cfg.effective_n_q + cfg.n_zs, cfg.d))

    def f():
        return tsum(scm(f_r, f_x).tokens * probe)
    tensors = {"f_r": f_r.tokens, "f_x": f_x.tokens, **_sampled_params(scm, rng)}
    return grad_check_many(f, tensors, STEP, MAX_COORDS)


def suite_backbone(cfg: ModelConfig, rng) -> dict[str, float]:
    block = EncoderBlock(cfg.d, cfg.n_heads, cfg.ffn_ratio * cfg.d, rng)
    x = param(rng.normal(size=(2 * cfg.n_q + cfg.n_zs, cfg.d)))
    probe = rng.normal(size=x.shape)

    def f():
        return tsum(block(x) * probe)
    return grad_check_many(f, {"x": x, **_sampled_params(block, rng)}, STEP, MAX_COORDS)


def suite_guidance(cfg: ModelConfig, rng) -> dict[str, float]:
    # non-zero output projections, otherwise the attention and FFN paths carry no gradient
    tgm = TemporalGuidance(cfg, rng, zero_out=False)
    s_c = param(rng.normal(size=(cfg.n_s, cfg.d)))
    mem = param(rng.normal(size=(cfg.memory_len * cfg.n_m, cfg.d)))
    probe = rng.normal(size=s_c.shape)

    def f():
        return tsum(guide(s_c, mem, tgm) * probe)
    return grad_check_many(f, {"s_c": s_c, "memory": mem, **_sampled_params(tgm, rng)},
                           STEP, MAX_COORDS)


def suite_tcm(cfg: ModelConfig, rng) -> dict[str, float]:
    s_c = param(rng.normal(size=(cfg.n_s, cfg.d)))
    z_c = rng.normal(size=(2 * cfg.n_z, cfg.d))
    box = np.array([cfg.search_size / 2 + 1.3, cfg.search_size / 2 - 2.1, 10.0, 12.0])
    dec = TemporalQueryDecoder(cfg, rng)
    mem = param(rng.normal(size=(cfg.memory_len * cfg.n_m, cfg.d)))
    probe = rng.normal(size=(cfg.n_m, cfg.d))

    def f():
        h = combine_heatmaps(intermediate_heatmap(s_c, z_c, cfg.grid),
                             final_heatmap_batch(box, cfg.grid, cfg.patch))
        return tsum(select_tokens(s_c, h, cfg.n_m) * probe) + tsum(dec(mem, s_c) * probe)
    return grad_check_many(f, {"s_c": s_c, "memory": mem, **_sampled_params(dec, rng)},
                           STEP, MAX_COORDS)


def suite_head(cfg: ModelConfig, rng) -> dict[str, float]:
    head = PredictionHead(cfg, rng)
    s = param(rng.normal(size=(cfg.n_s, cfg.d)))
    p1, p2, p3 = (rng.normal(size=shape) for shape in ((cfg.n_s,), (cfg.n_s, 2), (cfg.n_s, 2)))

    def f():
        out = head(s)
        return tsum(out.score * p1) + tsum(out.offset * p2) + tsum(out.size * p3)
    return grad_check_many(f, {"s": s, **_sampled_params(head, rng)}, STEP, MAX_COORDS)


def _boxes(rng, n, size):
    centers = rng.uniform(0.3 * size, 0.7 * size, (n, 2))
    wh = rng.uniform(0.2 * size, 0.45 * size, (n, 2))
    return np.concatenate([centers, wh], axis=1)


def suite_losses(cfg: ModelConfig, rng) -> dict[str, float]:
    n = 3
    gt = _boxes(rng, n, cfg.search_size)
    gt_map = gt_score_map(gt, cfg.grid, cfg.patch)
    score = param(rng.normal(0.0, 1.0, (n, cfg.n_s)))
    pred = param(gt + rng.uniform(-3.0, 3.0, gt.shape))
    errs = {}
    for name, fn, tensors in (
        ("focal", lambda: focal_loss(score, gt_map), {"score": score}),
        ("giou", lambda: giou_loss(pred, gt), {"box": pred}),
        ("l1", lambda: l1_loss(pred, gt, cfg.search_size), {"box": pred}),
        ("total", lambda: total_loss(score, gt_map, pred, gt, cfg.search_size)[0],
         {"score": score, "box": pred}),
    ):
        for k, v in grad_check_many(fn, tensors, STEP).items():
            errs[f"{name}.{k}"] = v
    return errs


def suite_model(cfg: ModelConfig, rng) -> dict[str, float]:
    """Stage-1 training loss of the whole compact tracker w.r.t. sampled parameters."""
    model = CompactTracker(cfg, rng)
    b = 2

    def img(size):
        return rng.normal(0.0, 0.3, (b, 3, size, size))
    inputs = SearchInputs(img(cfg.template_size), img(cfg.template_size), img(cfg.template_size),
                          img(cfg.template_size), img(cfg.search_size), img(cfg.search_size))
    gt = _boxes(rng, b, cfg.search_size)
    gt_map = gt_score_map(gt, cfg.grid, cfg.patch)
    cells = gt_cells(gt, cfg.grid, cfg.patch)

    def f():
        out = model.head(model.spatial(inputs).s_c)
        pred = boxes_at(out, cells, cfg.grid, cfg.patch, cfg.search_size)
        return total_loss(out.score, gt_map, pred, gt, cfg.search_size)[0]
    return grad_check_many(f, _sampled_params(model, rng, limit=10), STEP, 6)


SUITES: dict[str, Callable[[ModelConfig, np.random.Generator], dict[str, float]]] = {
    "numcore.attention": suite_attention,
    "scm.forward": suite_scm,
    "backbone.block": suite_backbone,
    "guidance.tgm": suite_guidance,
    "tcm.selection": suite_tcm,
    "head.maps": suite_head,
    "losses": suite_losses,
    "model.stage1_loss": suite_model,
}


def run_suites(cfg: ModelConfig | None = None, seed: int = 0,
               names: list[str] | None = None) -> dict[str, dict]:
    """``{suite: {"max_rel_err", "per_tensor", "seconds"}}`` for the selected suites."""
    cfg = cfg or ModelConfig()
    report = {}
    order = list(SUITES)
    for name in names or order:
        rng = np.random.default_rng([seed, order.index(name)])
        t0 = time.perf_counter()
        errs = SUITES[name](cfg, rng)
        report[name] = {"max_rel_err": max(errs.values()), "per_tensor": errs,
                        "seconds": time.perf_counter() - t0}
    return report
