import numpy as np
import pytest

from rgbxtrack.boxes import BBox, iou
from rgbxtrack.config import ModelConfig, TrackConfig
from rgbxtrack.errors import ConfigError
from rgbxtrack.harness.crops import template_pair
from rgbxtrack.harness.synthetic import Scenario, gen_sequence
from rgbxtrack.harness.tracker import run_tracker, temporal_step, track_many, update_dynamic_template
from rgbxtrack.harness.variants import build_model
from rgbxtrack.model import SearchInputs
from rgbxtrack.numcore import no_grad


@pytest.fixture(scope="module")
def seq():
    return gen_sequence(Scenario("clean", length=7), 21)


def test_first_frame_overlaps_gt(seq):
    res = run_tracker(build_model(ModelConfig()), seq)
    assert len(res) == 7 and len(res.records()) == 7
    assert iou(res.boxes[0], seq[0].gt_box) > 0
    assert res.confidences[0] == 1.0
    assert all(0 <= c <= 1 for c in res.confidences)


def test_memory_length_after_sequence(seq):
    res = run_tracker(build_model(ModelConfig(memory_len=3)), seq)
    assert len(res.memory) == 3 and res.memory.step == 7


def test_deterministic(seq):
    a = run_tracker(build_model(ModelConfig()), seq, heatmap_frames=[2])
    b = run_tracker(build_model(ModelConfig()), seq, heatmap_frames=[2])
    assert a.records() == b.records()
    np.testing.assert_array_equal(a.heatmaps[2].values, b.heatmaps[2].values)
    assert np.all((a.heatmaps[2].values >= 0) & (a.heatmaps[2].values <= 1))


def test_batched_matches_single(seq):
    other = gen_sequence(Scenario("x_advantage", length=7), 4)
    model = build_model(ModelConfig())
    both = track_many(model, [seq, other])
    # memory is per batch row, so lockstep equals separate runs
    for res, s in zip(both, (seq, other)):
        single = run_tracker(model, s)
        np.testing.assert_allclose([b.as_array() for b in res.boxes],
                                   [b.as_array() for b in single.boxes], atol=1e-9)


def test_disabling_tcm_gives_spatial_only_tracker(rng, seq):
    cfg = ModelConfig(use_tcm=False)
    model = build_model(cfg)
    z = rng.normal(size=(3, 16, 16))
    s = rng.normal(size=(3, 32, 32))
    with no_grad():
        sp = model.spatial(SearchInputs(z, z, z, z, s, s))
        step = temporal_step(model, sp, None)
        direct = model.head(sp.s_c)
    assert step.memory is None
    np.testing.assert_array_equal(step.out.score.data, direct.score.data)
    res = run_tracker(model, seq)
    assert res.memory is None and len(res) == 7


def test_dynamic_template_rule(seq):
    f, b = seq[3], seq[3].gt_box
    z_t = template_pair(seq[0], seq[0].gt_box, 16)
    new = update_dynamic_template(z_t, 0.9, 0.7, f, b, 16)
    assert new is not z_t
    np.testing.assert_array_equal(new[0], template_pair(f, b, 16)[0])
    assert update_dynamic_template(z_t, 0.3, 0.45, f, b, 16) is z_t
    assert update_dynamic_template(z_t, 0.7, 0.7, f, b, 16) is z_t
    with pytest.raises(ConfigError):
        update_dynamic_template(z_t, 0.9, 1.0, f, b, 16)


def test_initial_template_never_changes(seq):
    seen = []
    model = build_model(ModelConfig())
    real_spatial = model.spatial

    def record(inputs):
        seen.append((inputs.z0_rgb.copy(), inputs.zt_rgb.copy()))
        return real_spatial(inputs)
    model.spatial = record
    res = run_tracker(model, seq, TrackConfig(update_threshold=0.01))
    assert res.template_updates == len(seq) - 1
    for z0, _ in seen:
        np.testing.assert_array_equal(z0, seen[0][0])
    assert not np.array_equal(seen[-1][1], seen[0][1])


def test_unequal_lengths_rejected(seq):
    with pytest.raises(ConfigError):
        track_many(build_model(ModelConfig()), [seq, seq[:4]])
