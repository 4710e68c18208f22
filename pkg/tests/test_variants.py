import numpy as np
import pytest

from rgbxtrack.config import FRAMEWORKS, ModelConfig, RunConfig
from rgbxtrack.errors import ConfigError
from rgbxtrack.harness.experiments import (
    ABLATIONS,
    ablation_config,
    census_table,
    eval_set,
    sequence_length_table,
    train_set,
)
from rgbxtrack.harness.variants import DualBranchTracker, build_model, build_variant
from rgbxtrack.model import SearchInputs
from rgbxtrack.numcore import no_grad


def inputs(rng, b=None):
    lead = () if b is None else (b,)
    z = rng.normal(size=lead + (3, 16, 16))
    s = rng.normal(size=lead + (3, 32, 32))
    return SearchInputs(z, z + 0.1, z, z - 0.1, s, s * 0.5)


def test_census_ordering():
    rows = {r["framework"]: r for r in census_table(RunConfig())}
    assert rows["compact"]["total_spatial"] < rows["dual_asymmetric"]["total_spatial"] \
        < rows["dual_symmetric"]["total_spatial"]
    assert rows["compact"]["total"] < rows["dual_asymmetric"]["total"] < rows["dual_symmetric"]["total"]
    compact = rows["compact"]
    assert compact["total"] == sum(v for k, v in compact.items() if k not in ("framework", "total", "total_spatial"))


@pytest.mark.parametrize("n_q", [0, 2, 4])
def test_sequence_lengths(n_q):
    rows = sequence_length_table(RunConfig(), (n_q,))
    got = {r["framework"]: r["backbone_len"] for r in rows}
    assert got == {"compact": 2 * n_q + 24, "dual_symmetric": 48, "dual_asymmetric": 48}


@pytest.mark.parametrize("kind", FRAMEWORKS)
def test_every_framework_runs(rng, kind):
    model, census = build_variant(kind, ModelConfig(framework=kind))
    with no_grad():
        sp = model.spatial(inputs(rng, 2))
        out = model.predict(sp.s_c)
    assert sp.s_c.shape == (2, 16, 32) and sp.z_c.shape == (2, 8, 32)
    assert out.score.shape == (2, 16)
    assert census["total"] == model.num_params()


def test_symmetric_without_interaction_is_two_trackers(rng):
    model = DualBranchTracker(ModelConfig(framework="dual_symmetric"), "dual_symmetric", rng)
    for layer in model.layers:
        assert not np.any(layer.psi_ca.layers[-1].weight.data)
        assert not np.any(layer.psi_ffn.layers[-1].weight.data)
    inp = inputs(rng)
    with no_grad():
        r, x, _ = model.branch_outputs(inp)
        swapped = SearchInputs(inp.z0_rgb, inp.z0_x * 3.0, inp.zt_rgb, inp.zt_x * 3.0,
                               inp.s_rgb, inp.s_x + 1.0)
        r2, x2, _ = model.branch_outputs(swapped)
    np.testing.assert_array_equal(r.data, r2.data)
    assert not np.allclose(x.data, x2.data)


def test_unknown_framework():
    with pytest.raises(ConfigError):
        build_variant("triple", ModelConfig())


@pytest.mark.parametrize("row", sorted(ABLATIONS))
def test_every_ablation_row_is_constructible(rng, row):
    cfg, entry = ablation_config(row, RunConfig())
    model = build_model(cfg.model)
    with no_grad():
        sp = model.spatial(inputs(rng))
    assert sp.s_c.shape == (16, 32)
    if row == "input.rgb_only":
        assert entry["rgb_only"] and cfg.data.eval_scenarios == ["x_advantage"]
    if row.startswith("tcm.") and row != "tcm.none":
        assert cfg.model.tcm_mode == row.split(".")[1]


def test_unknown_ablation_row():
    with pytest.raises(ConfigError):
        ablation_config("scm.nothing", RunConfig())


def test_eval_set_is_disjoint_from_training():
    cfg = RunConfig()
    cfg.data.train_sequences = 3
    cfg.data.train_length = 4
    train = train_set(cfg)
    held = eval_set(cfg, "clean", 3)
    assert len(held) == 3 and len(held[0]) == cfg.data.eval_length
    assert not any(np.array_equal(t[0].rgb, h[0].rgb) for t in train for h in held)
