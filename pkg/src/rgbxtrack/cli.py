"""Command-line entry point: ``rgbxtrack <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure,
3 I/O error. The output directory is ``--out`` if given, else the
``RGBXTRACK_OUT`` environment variable, else ``output_dir`` from the config.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import io
from .config import RunConfig, dump_config, load_config
from .errors import ArtifactError, ConfigError, NumericError, UsageError
from .harness.experiments import ABLATIONS

OUT_ENV = "RGBXTRACK_OUT"
GRAD_TOL = 1e-4

log = logging.getLogger("rgbxtrack")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, e.g. model.d=16 (repeatable)")
    p.add_argument("--profile", default="toy", choices=["toy", "paper"])
    p.add_argument("--out", help="output directory (overrides $%s and the config)" % OUT_ENV)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rgbxtrack", description="Compact RGB-X tracker at toy scale")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gradcheck", help="finite-difference checks of every component")
    _common(p)
    p.add_argument("--suite", action="append", help="run only the named suite(s)")

    p = sub.add_parser("train", help="two-stage training on synthetic sequences")
    _common(p)

    p = sub.add_parser("track", help="track sequences with a trained model")
    _common(p)
    p.add_argument("--checkpoint", help="parameter file written by 'train'")
    p.add_argument("--manifest", action="append", default=[],
                   help="sequence manifest (repeatable); defaults to synthetic held-out sets")
    p.add_argument("--rgb-only", action="store_true", help="feed the RGB crop to both inputs")

    p = sub.add_parser("ablate", help="train and evaluate one named ablation row")
    _common(p)
    p.add_argument("row", choices=sorted(ABLATIONS), metavar="row",
                   help="one of: " + ", ".join(sorted(ABLATIONS)))
    p.add_argument("--checkpoint", help="skip training and evaluate this parameter file")

    p = sub.add_parser("compare-frameworks", help="parameter census and backbone lengths")
    _common(p)
    return parser


def _resolve(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config, args.overrides, args.profile)
    out = args.out or os.environ.get(OUT_ENV) or cfg.output_dir
    cfg.output_dir = str(out)
    return cfg, io.ensure_dir(out)


def _echo(cfg: RunConfig, out: Path) -> None:
    """Write the fully resolved config; feeding it back reproduces the run."""
    io.write_text(out / "config.yaml", dump_config(cfg))


def _load_model(cfg: RunConfig, checkpoint: str | None):
    from .harness.variants import build_model

    model = build_model(cfg.model)
    path = checkpoint or cfg.checkpoint
    if not path:
        raise ConfigError("checkpoint: a parameter file is required (--checkpoint or checkpoint=)")
    model.load_state_dict(io.load_params(path))
    return model


def cmd_gradcheck(args, cfg: RunConfig, out: Path) -> int:
    from .gradsuite import SUITES, run_suites

    names = args.suite or list(SUITES)
    unknown = set(names) - set(SUITES)
    if unknown:
        raise ConfigError(f"suite: unknown {sorted(unknown)}; choose from {list(SUITES)}")
    report = run_suites(cfg.model, cfg.seed, names)
    worst = 0.0
    for name, r in report.items():
        worst = max(worst, r["max_rel_err"])
        print(f"{name:20s} max_rel_err {r['max_rel_err']:.3e}")
    io.write_json(out / "gradcheck.json", {k: {"max_rel_err": v["max_rel_err"],
                                              "per_tensor": v["per_tensor"]}
                                          for k, v in report.items()})
    if worst >= GRAD_TOL:
        print(f"FAILED: max relative error {worst:.3e} >= {GRAD_TOL}", file=sys.stderr)
        return 2
    return 0


def _train(cfg: RunConfig, out: Path):
    from .harness.experiments import train_set
    from .harness.training import train_two_stage

    model, train_log = train_two_stage(cfg, train_set(cfg))
    io.save_params(out / "params.bin", model.state_dict())
    io.write_loss_csv(out / "loss.csv", train_log.rows)
    return model


def cmd_train(args, cfg: RunConfig, out: Path) -> int:
    _train(cfg, out)
    print(f"wrote {out / 'params.bin'} and {out / 'loss.csv'}")
    return 0


def _emit_tracking(results, names, out: Path, cfg: RunConfig) -> dict:
    from .harness.metrics import metrics

    records = []
    for name, res in zip(names, results):
        records += [{"sequence": name, **r} for r in res.records()]
        for t, h in sorted(res.heatmaps.items()):
            io.write_heatmap(out / f"heatmap_{name}_{t:04d}.pgm", h,
                             out / f"heatmap_{name}_{t:04d}.csv")
    io.write_jsonl(out / "records.jsonl", records)
    return metrics(results)


def cmd_track(args, cfg: RunConfig, out: Path) -> int:
    from .harness.experiments import eval_set
    from .harness.metrics import metrics
    from .harness.tracker import run_tracker, track_many

    model = _load_model(cfg, args.checkpoint)
    frames = cfg.track.heatmap_frames
    if args.manifest:
        seqs = [io.load_sequence(m, cfg.data.modality) for m in args.manifest]
        names = [Path(m).stem if len(args.manifest) == 1 else f"{i:03d}"
                 for i, m in enumerate(args.manifest)]
        results = [run_tracker(model, s, cfg.track, args.rgb_only, frames) for s in seqs]
        summary = {"all": _emit_tracking(results, names, out, cfg)}
    else:
        summary, results, names = {}, [], []
        for kind in cfg.data.eval_scenarios:
            res = track_many(model, eval_set(cfg, kind), cfg.track, args.rgb_only, frames)
            summary[kind] = metrics(res)
            results += res
            names += [f"{kind}_{i:03d}" for i in range(len(res))]
        _emit_tracking(results, names, out, cfg)
    io.write_json(out / "metrics.json", summary)
    for kind, m in summary.items():
        print(f"{kind:18s} mean_iou {m['mean_iou']:.4f} auc {m['success_auc']:.4f} "
              f"precision {m['precision']:.4f}")
    return 0


def cmd_ablate(args, cfg: RunConfig, out: Path) -> int:
    from .harness.experiments import ablation_config, evaluate

    cfg, entry = ablation_config(args.row, cfg)
    _echo(cfg, out)
    model = _load_model(cfg, args.checkpoint) if args.checkpoint else _train(cfg, out)
    summary = evaluate(model, cfg, rgb_only=entry.get("rgb_only", False))
    io.write_json(out / "metrics.json", {"row": args.row, "metrics": summary})
    for kind, m in summary.items():
        print(f"{args.row} {kind:18s} mean_iou {m['mean_iou']:.4f} auc {m['success_auc']:.4f}")
    return 0


def cmd_compare(args, cfg: RunConfig, out: Path) -> int:
    from .harness.experiments import census_table, sequence_length_table

    census = census_table(cfg)
    lengths = sequence_length_table(cfg)
    io.write_json(out / "census.json", {"census": census, "sequence_length": lengths})
    print(f"{'framework':18s} {'spatial params':>14s} {'total params':>12s}")
    for row in sorted(census, key=lambda r: r["total_spatial"]):
        print(f"{row['framework']:18s} {row['total_spatial']:14d} {row['total']:12d}")
    print(f"{'framework':18s} {'n_q':>4s} {'backbone_len':>12s}")
    for row in lengths:
        print(f"{row['framework']:18s} {row['n_q']:4d} {row['backbone_len']:12d}")
    return 0


COMMANDS = {"gradcheck": cmd_gradcheck, "train": cmd_train, "track": cmd_track,
            "ablate": cmd_ablate, "compare-frameworks": cmd_compare}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg, out = _resolve(args)
        if args.command != "ablate":
            _echo(cfg, out)
        return COMMANDS[args.command](args, cfg, out)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (ArtifactError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
