"""Command line: ``generate | pretrain | tta | report``.

Output layout under ``--out`` (default: the config's ``output_dir``)::

    config.ini                      canonical copy of the effective config
    streams/{source,target}.bin     stream files, plus .manifest.txt next to each
    model/checkpoint.bin            pretrained parameters
    model/training_curve.csv
    runs/<method>_i<interval>[_<ensemble>]/frames.jsonl, summary.csv
    report/comparison.csv           all run summaries, sorted by method
    report/<run>.rot_err.txt        frame index and rotation error, one frame per line

Exit codes: 0 ok, 2 configuration, 3 I/O, 4 bad argument.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import config as config_mod
from . import pipeline
from .adaptation import METHODS
from .config import DEFAULT_ENSEMBLE, ExperimentConfig
from .ensemble import EnsembleMode
from .errors import ConfigError, StreamFormatError, UnknownMethod
from .predictor import load_checkpoint, save_checkpoint
from .streamio import read_stream, write_stream

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_ARG = 0, 2, 3, 4
LOG_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING, "warning": logging.WARNING}

log = logging.getLogger("ttacope")


class BadArgument(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise BadArgument(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ttacope", description="Online self-training of a NOCS pose estimator on synthetic depth streams.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in (
        ("generate", "write source and target stream files"),
        ("pretrain", "supervised pretraining on the source stream"),
        ("tta", "adapt on the target stream and score each run"),
        ("report", "merge run summaries into one table plus plot series"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="experiment config (defaults built in)")
        p.add_argument("--seed", type=int, help="re-seed model, streams and RANSAC")
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        if name == "tta":
            p.add_argument("--method", help=f"one of {', '.join(METHODS)}")
            p.add_argument("--interval", type=int, help="update every N frames")
            p.add_argument("--ensemble", help="inference pose ensemble")
    return parser


def _load_config(args) -> ExperimentConfig:
    cfg = config_mod.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out) if args.out else Path(cfg.experiment.output_dir)


def _domain_manifest(domain, prefix="") -> dict:
    return {f"{prefix}{k}": v for k, v in vars(domain).items()}


def cmd_generate(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args, cfg)
    (out / "streams").mkdir(parents=True, exist_ok=True)
    config_mod.save(cfg, out / "config.ini")
    source, target = pipeline.build_streams(cfg)
    for name, stream, dom in (("source", source, cfg.source), ("target", target, cfg.target)):
        write_stream(stream, out / "streams" / f"{name}.bin",
                     {"stream": name, "n_points": cfg.streams.n_points, **_domain_manifest(dom, "domain.")})
        log.info("wrote %d %s frames", len(stream), name)
    return EXIT_OK


def cmd_pretrain(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args, cfg)
    source = read_stream(out / "streams" / "source.bin")
    (out / "model").mkdir(parents=True, exist_ok=True)
    params, curve = pipeline.pretrain_model(cfg, source.frames)
    save_checkpoint(params, out / "model" / "checkpoint.bin")
    pipeline.write_curve(curve, out / "model" / "training_curve.csv")
    if curve:
        log.info("pretraining done: %d steps, final loss %.4f", len(curve), curve[-1][1])
    return EXIT_OK


def _tta_grid(args, cfg: ExperimentConfig):
    methods = [args.method] if args.method else list(cfg.experiment.methods)
    intervals = [args.interval] if args.interval is not None else list(cfg.experiment.intervals)
    ensembles = [args.ensemble] if args.ensemble else list(cfg.experiment.ensembles)
    valid_ens = {m.value for m in EnsembleMode} | {DEFAULT_ENSEMBLE}
    for m in methods:
        if m not in METHODS:
            raise UnknownMethod(f"unknown method {m!r}; expected one of {', '.join(METHODS)}")
    for e in ensembles:
        if e not in valid_ens:
            raise BadArgument(f"unknown ensemble {e!r}; expected one of {', '.join(sorted(valid_ens))}")
    for i in intervals:
        if i < 1:
            raise BadArgument(f"--interval must be a positive integer, got {i}")
    return [(m, i, e) for m in methods for i in intervals for e in ensembles]


def cmd_tta(args, cfg: ExperimentConfig) -> int:
    grid = _tta_grid(args, cfg)  # argument errors before any I/O
    out = _out_dir(args, cfg)
    params = load_checkpoint(out / "model" / "checkpoint.bin")
    target = read_stream(out / "streams" / "target.bin")
    if params.bin_count != target.bin_count:
        raise StreamFormatError(f"checkpoint predicts {params.bin_count} bins, stream uses {target.bin_count}")
    for method, interval, ensemble in grid:
        report = pipeline.run_and_evaluate(cfg, params, target, method, interval, ensemble)
        run_dir = pipeline.write_run(report, out / "runs" / pipeline.run_name(method, interval, ensemble))
        s = report.summary
        log.info("%s: deg5cm5=%.3f deg10cm5=%.3f time=%.1fs -> %s", run_dir.name, s.deg5cm5, s.deg10cm5, report.result.wall_time_s, run_dir)
    return EXIT_OK


def _sort_key(row: dict):
    m = row["method"]
    return (METHODS.index(m) if m in METHODS else len(METHODS), m, int(row["interval"]), row["ensemble"])


def cmd_report(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args, cfg)
    runs = sorted((out / "runs").glob("*/summary.csv"))
    if not runs:
        raise FileNotFoundError(f"no run summaries under {out / 'runs'}")
    rows = []
    for path in runs:
        rows += pipeline.read_summary_csv(path)
    rows.sort(key=_sort_key)
    report_dir = out / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    pipeline.write_summary_csv(rows, report_dir / "comparison.csv")
    for path in runs:
        lines = []
        with open(path.parent / "frames.jsonl") as fh:
            for line in fh:
                rec = json.loads(line)
                if rec["type"] == "frame":
                    lines.append(f"{len(lines)} {rec['rot_err_deg']!r}\n")
        (report_dir / f"{path.parent.name}.rot_err.txt").write_text("".join(lines))
    log.info("merged %d runs into %s", len(rows), report_dir / "comparison.csv")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "pretrain": cmd_pretrain, "tta": cmd_tta, "report": cmd_report}


def _setup_logging() -> None:
    level = os.environ.get("TTACOPE_LOG", "warn").strip().lower()
    if level not in LOG_LEVELS:
        raise ConfigError(f"TTACOPE_LOG must be one of debug, info, warn; got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except (BadArgument, UnknownMethod) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, StreamFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
