import numpy as np
import pytest

from rgbxtrack.config import RunConfig
from rgbxtrack.errors import ConfigError, NumericError
from rgbxtrack.guidance_head import LossWeights
from rgbxtrack.harness.experiments import train_set
from rgbxtrack.harness.training import (
    SGD,
    AdamW,
    TrainLog,
    lr_at,
    make_optimizer,
    sample_stage1,
    sample_stage2,
    stage1_loss,
    train_two_stage,
)
from rgbxtrack.harness.variants import build_model
from rgbxtrack.numcore import backward, param, tsum


@pytest.fixture(scope="module")
def small():
    cfg = RunConfig()
    cfg.data.train_sequences = 8
    cfg.data.train_length = 10
    return cfg, train_set(cfg)


def test_frame_counts(small):
    cfg, data = small
    rng = np.random.default_rng(0)
    b1 = sample_stage1(data, cfg, rng, 3)
    assert b1.frames == 1 and b1.gt.shape == (3, 4)
    assert b1.inputs.s_rgb.shape == (3, 3, 32, 32) and b1.inputs.z0_x.shape == (3, 3, 16, 16)
    b2 = sample_stage2(data, cfg, rng, 2)
    assert b2.frames == 6 and len(b2.searches) == 6 and b2.gt.shape == (2, 6, 4)
    # ground truth lies inside the search crop
    assert np.all((b2.gt[..., :2] >= 0) & (b2.gt[..., :2] <= 32))


def test_stage2_needs_long_sequences(small):
    cfg, data = small
    with pytest.raises(ConfigError):
        sample_stage2([seq[:5] for seq in data], cfg, np.random.default_rng(0), 1)


def test_loss_decreases_on_fixed_batch(small):
    cfg, data = small
    model = build_model(cfg.model)
    batch = sample_stage1(data, cfg, np.random.default_rng(0))
    for mod in model.temporal_modules():
        mod.freeze()
    params = [p for mod in model.spatial_modules() for p in mod.parameters()]
    opt = make_optimizer(cfg.train, params + model.head.parameters())
    losses = []
    for _ in range(11):
        opt.zero_grad()
        loss, _ = stage1_loss(model, batch, LossWeights())
        backward(loss)
        opt.step()
        losses.append(loss.item())
    assert all(a > b for a, b in zip(losses, losses[1:])), losses


def test_stage2_freezes_spatial_modules(small):
    cfg, data = small
    cfg = RunConfig(data=cfg.data)
    cfg.train.stage1_steps = 2
    cfg.train.stage2_steps = 0
    model, _ = train_two_stage(cfg, data)
    spatial = {k: v.copy() for k, v in model.state_dict().items()
               if k.split(".")[0] in ("tokenizer", "scm", "backbone")}
    temporal = {k: v.copy() for k, v in model.state_dict().items()
                if k.split(".")[0] in ("guidance", "head")}
    cfg.train.stage1_steps = 0
    cfg.train.stage2_steps = 2
    cfg.train.stage2_batch_size = 2
    model, log = train_two_stage(cfg, data, model=model)
    after = model.state_dict()
    assert spatial and all(np.array_equal(after[k], v) for k, v in spatial.items())
    assert any(not np.array_equal(after[k], v) for k, v in temporal.items())
    assert [r["stage"] for r in log.rows] == [2, 2]


def test_two_stage_is_deterministic(small):
    cfg, data = small
    cfg = RunConfig(data=cfg.data)
    cfg.train.stage1_steps = 2
    cfg.train.stage2_steps = 1
    cfg.train.batch_size = 2
    cfg.train.stage2_batch_size = 1
    a, la = train_two_stage(cfg, data)
    b, lb = train_two_stage(cfg, data)
    assert la.rows == lb.rows
    sa, sb = a.state_dict(), b.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    assert {"stage", "step", "loss", "cls", "iou", "l1", "lr", "grad_norm"} <= set(la.rows[0])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(small):
    cfg, data = small
    cfg = RunConfig(data=cfg.data)
    cfg.train.stage1_steps = 3
    cfg.train.batch_size = 2
    cfg.train.lr = 1e300
    cfg.train.lr_warmup = 0
    cfg.train.grad_clip = 0.0
    with pytest.raises(NumericError, match="training diverged at stage 1"):
        train_two_stage(cfg, data)


def test_lr_schedule():
    assert lr_at(0, 100, 1.0, 10) == pytest.approx(0.1)
    assert lr_at(9, 100, 1.0, 10) == pytest.approx(1.0)
    assert lr_at(10, 100, 1.0, 10) == pytest.approx(1.0)
    assert lr_at(100, 100, 1.0, 10) == pytest.approx(0.1)
    values = [lr_at(s, 100, 1.0, 10) for s in range(10, 101)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_sgd_momentum_and_clipping():
    p = param(np.array([1.0, -2.0]))
    opt = SGD([p], lr=0.1, momentum=0.5)
    p.grad = np.array([1.0, 1.0])
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -2.1])
    p.grad = np.array([1.0, 1.0])
    opt.step()
    np.testing.assert_allclose(p.data, [0.9 - 0.15, -2.1 - 0.15])
    q = param(np.zeros(2))
    clipped = SGD([q], lr=1.0, momentum=0.0, grad_clip=1.0)
    q.grad = np.array([3.0, 4.0])
    assert clipped.step() == pytest.approx(5.0)
    np.testing.assert_allclose(q.data, [-0.6, -0.8])
    q.grad = np.array([np.nan, 0.0])
    with pytest.raises(NumericError):
        clipped.step()


def test_adamw_minimizes_quadratic():
    p = param(np.array([3.0, -1.0]))
    opt = AdamW([p], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        backward(tsum(p * p))
        opt.step()
    assert np.all(np.abs(p.data) < 0.05)
