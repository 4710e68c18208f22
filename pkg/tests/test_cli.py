import json
import subprocess
import sys

import numpy as np
import pytest

from rgbxtrack import io
from rgbxtrack.cli import main
from rgbxtrack.harness.synthetic import Scenario, gen_sequence

FAST = ["--set", "train.stage1_steps=2", "--set", "train.stage2_steps=1",
        "--set", "train.batch_size=2", "--set", "train.stage2_batch_size=1",
        "--set", "data.train_sequences=4", "--set", "data.train_length=8",
        "--set", "data.eval_sequences=2", "--set", "data.eval_length=5"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", "--out", str(out), *FAST]) == 0
    return out


def test_train_artifacts(trained):
    assert set(p.name for p in trained.iterdir()) >= {"params.bin", "loss.csv", "config.yaml"}
    rows = (trained / "loss.csv").read_text().splitlines()
    assert rows[0].startswith("stage,step,loss,cls,iou,l1") and len(rows) == 4


def test_track_manifest(trained, tmp_path, capsys):
    seq = gen_sequence(Scenario("clean", length=6), 3)
    manifest = io.write_sequence(seq, tmp_path / "seq")
    out = tmp_path / "track"
    code = main(["track", "--out", str(out), "--checkpoint", str(trained / "params.bin"),
                 "--manifest", str(manifest), "--set", "track.heatmap_frames=[1, 3]", *FAST])
    assert code == 0
    records = io.read_jsonl(out / "records.jsonl")
    assert len(records) == len(seq)
    assert [r["frame"] for r in records] == list(range(6))
    assert set(json.loads((out / "metrics.json").read_text())) == {"all"}
    for t in (1, 3):
        img = io.read_image(out / f"heatmap_manifest_{t:04d}.pgm")[0]
        grid = np.loadtxt(out / f"heatmap_manifest_{t:04d}.csv", delimiter=",")
        assert np.argmax(img) == np.argmax(grid)
    assert "mean_iou" in capsys.readouterr().out


def test_config_echo_reproduces_metrics(trained, tmp_path):
    first = tmp_path / "a"
    args = ["--checkpoint", str(trained / "params.bin"), *FAST]
    assert main(["track", "--out", str(first), *args]) == 0
    second = tmp_path / "b"
    assert main(["track", "--out", str(second), "--config", str(first / "config.yaml"),
                 "--checkpoint", str(trained / "params.bin")]) == 0
    assert (first / "metrics.json").read_bytes() == (second / "metrics.json").read_bytes()
    assert (first / "records.jsonl").read_bytes() == (second / "records.jsonl").read_bytes()


def test_ablate_with_checkpoint(trained, tmp_path):
    out = tmp_path / "abl"
    code = main(["ablate", "input.rgb_only", "--out", str(out),
                 "--checkpoint", str(trained / "params.bin"), *FAST])
    assert code == 0
    summary = json.loads((out / "metrics.json").read_text())
    assert summary["row"] == "input.rgb_only" and set(summary["metrics"]) == {"x_advantage"}
    assert "x_advantage" in (out / "config.yaml").read_text()


def test_compare_frameworks(tmp_path, capsys):
    assert main(["compare-frameworks", "--out", str(tmp_path)]) == 0
    printed = capsys.readouterr().out.splitlines()
    order = [line.split()[0] for line in printed[1:4]]
    assert order == ["compact", "dual_asymmetric", "dual_symmetric"]
    data = json.loads((tmp_path / "census.json").read_text())
    assert all(r["backbone_len"] == r["expected"] for r in data["sequence_length"])


def test_gradcheck_single_suite(tmp_path, capsys):
    assert main(["gradcheck", "--out", str(tmp_path), "--suite", "losses"]) == 0
    report = json.loads((tmp_path / "gradcheck.json").read_text())
    assert report["losses"]["max_rel_err"] < 1e-4
    assert main(["gradcheck", "--out", str(tmp_path), "--suite", "nope"]) == 1


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("RGBXTRACK_OUT", str(tmp_path / "env"))
    assert main(["compare-frameworks"]) == 0
    assert (tmp_path / "env" / "census.json").exists()


def test_exit_codes(tmp_path, capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main(["train", "--out", str(tmp_path), "--set", "model.d=31"]) == 1
    assert "model.d" in capsys.readouterr().err
    assert main(["track", "--out", str(tmp_path)]) == 1
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["compare-frameworks", "--out", str(blocker / "sub")]) == 3
    assert main(["track", "--out", str(tmp_path), "--checkpoint", str(tmp_path / "none.bin")]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_two(tmp_path, capsys):
    code = main(["train", "--out", str(tmp_path), *FAST, "--set", "train.lr=1e300",
                 "--set", "train.grad_clip=0", "--set", "train.lr_warmup=0"])
    assert code == 2
    assert "diverged" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "rgbxtrack.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "compare-frameworks" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "rgbxtrack.cli"], capture_output=True, text=True)
    assert proc.returncode != 0
