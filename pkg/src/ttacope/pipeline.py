"""Experiment plumbing shared by the command line and the acceptance suite.

Per-frame logs are JSON lines; a run ends with one record whose ``type`` is
``"summary"``. Summary CSVs use the fixed metric columns and keep the measured
wall time in its own trailing column so determinism checks can drop it.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .adaptation import RunResult, pretrain, run_method, standardize_inputs
from .config import DEFAULT_ENSEMBLE, ExperimentConfig
from .metrics import METRIC_COLUMNS, EvalSummary, FrameEval, summarize
from .predictor import ModelParams, init_params
from .synth import Stream, make_streams

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("method", "interval", "ensemble", "seed", "n_frames", *METRIC_COLUMNS,
                   "mean_rot_deg", "mean_trans_cm", "update_steps")
WALL_COLUMN = "wall_time_s"
CURVE_COLUMNS = ("step", "loss", "lr")


def build_streams(cfg: ExperimentConfig) -> tuple[Stream, Stream]:
    return make_streams(*cfg.stream_configs())


def pretrain_model(cfg: ExperimentConfig, source_frames) -> tuple[ModelParams, list]:
    """Initialize, whiten inputs on the source frames, then run supervised pretraining."""
    params = init_params(cfg.model.seed, cfg.model.hidden, bin_count=cfg.streams.bin_count)
    params = standardize_inputs(params, source_frames)
    return pretrain(params, source_frames, cfg.pretrain_config())


def frame_evals(result: RunResult, stream: Stream) -> list[FrameEval]:
    if len(result.outputs) != len(stream.frames):
        raise ValueError("run and stream lengths differ")
    return [
        FrameEval(o.pose, o.size, f.gt_pose, f.gt_size, f.category, stream.symmetry_of(f.category))
        for o, f in zip(result.outputs, stream.frames)
    ]


@dataclass
class RunReport:
    method: str
    interval: int
    ensemble: str
    seed: int
    result: RunResult
    summary: EvalSummary
    errors: np.ndarray  # (n_frames, 2): rotation degrees, translation centimeters

    def summary_row(self) -> dict:
        row = {
            "method": self.method,
            "interval": self.interval,
            "ensemble": self.ensemble,
            "seed": self.seed,
            "n_frames": self.summary.n_frames,
            **self.summary.row(),
            "mean_rot_deg": self.summary.mean_rot_deg,
            "mean_trans_cm": self.summary.mean_trans_cm,
            "update_steps": self.result.update_steps,
        }
        row[WALL_COLUMN] = self.result.wall_time_s
        return row

    def quarter_rotation_means(self) -> tuple[float, float]:
        q = max(1, len(self.errors) // 4)
        return float(self.errors[:q, 0].mean()), float(self.errors[-q:, 0].mean())


def run_and_evaluate(
    cfg: ExperimentConfig,
    params: ModelParams,
    target: Stream,
    method: str,
    interval: int | None = None,
    ensemble: str = DEFAULT_ENSEMBLE,
    teacher: ModelParams | None = None,
) -> RunReport:
    """Adapt on the target observations, then score against the held-back ground truth."""
    tcfg = cfg.tta_config(method, interval, ensemble)
    # only observations reach the adaptation loop
    result = run_method(method, params, [f.observation() for f in target.frames], tcfg, teacher)
    evals = frame_evals(result, target)
    errors = np.array([e.errors() for e in evals])
    return RunReport(method, tcfg.update_interval, ensemble, cfg.model.seed, result, summarize(evals), errors)


def _pose_list(pose):
    return None if pose is None else [float(v) for v in pose.to_list()]


def frame_records(report: RunReport) -> list[dict]:
    out = []
    for o, (rot, trans) in zip(report.result.outputs, report.errors):
        out.append({
            "type": "frame",
            "frame_id": o.frame_id,
            "method": o.method,
            "inliers_student": o.inliers_student,
            "inliers_teacher": o.inliers_teacher,
            "winner": o.winner,
            "updated": o.updated,
            "skipped": o.skipped,
            "loss": o.loss,
            "loss_d": o.loss_d,
            "loss_pl": o.loss_pl,
            "loss_ent": o.loss_ent,
            "pose": _pose_list(o.pose),
            "size": [float(v) for v in o.size],
            "rot_err_deg": float(rot),
            "trans_err_cm": float(trans),
        })
    return out


def _jsonable(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_run(report: RunReport, run_dir) -> Path:
    """``frames.jsonl`` (per-frame records + summary record) and ``summary.csv``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    row = report.summary_row()
    with open(run_dir / "frames.jsonl", "w") as fh:
        for rec in frame_records(report):
            fh.write(json.dumps(rec, default=_jsonable, sort_keys=True) + "\n")
        summary = {"type": "summary", **row, "per_category": report.summary.per_category}
        fh.write(json.dumps(summary, default=_jsonable, sort_keys=True) + "\n")
    write_summary_csv([row], run_dir / "summary.csv")
    return run_dir


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_summary_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*SUMMARY_COLUMNS, WALL_COLUMN])
        for r in rows:
            w.writerow([_fmt(r[c]) for c in (*SUMMARY_COLUMNS, WALL_COLUMN)])


def read_summary_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_curve(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for step, loss, lr in curve:
            w.writerow([step, repr(float(loss)), repr(float(lr))])


def run_name(method: str, interval: int, ensemble: str) -> str:
    name = f"{method}_i{interval}"
    return name if ensemble == DEFAULT_ENSEMBLE else f"{name}_{ensemble}"
