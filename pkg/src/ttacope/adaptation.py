"""Supervised pretraining and online test-time adaptation.

Losses return ``(value, grad)`` where ``grad`` is taken with respect to the
student logits only; teacher outputs, fitted poses and encoded depth targets
are constants. :func:`run_method` consumes :class:`~ttacope.synth.Observation`
objects, which carry no ground truth, so the adaptation path cannot read labels.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .ensemble import (
    NOCS_CENTER,
    EnsembleMode,
    FilterResult,
    input_ensemble,
    output_ensemble_softmax_max,
    point_filter,
    pose_ensemble_inlier_max,
)
from .errors import DegenerateInput, EmptyMask, ShapeMismatch, UnknownMethod
from .geometry import RansacConfig, SimilarityTransform
from .nocs import NocsMap, NocsTarget, argmax_bins, cross_entropy, encode_bins, entropy
from .predictor import (
    AdamState,
    ModelParams,
    adam_step,
    backward,
    ema_update,
    forward,
    point_features,
    tent_parameter_mask,
)

log = logging.getLogger(__name__)

METHODS = ("lower-bound", "tent", "pl", "pl-filtered", "tta-cope")


@dataclass(frozen=True)
class LossWeights:
    lambda_ce: float = 1.0
    lambda_c: float = 1e-6
    lambda_d: float = 1.0
    lambda_pl: float = 1.0

    def __post_init__(self):
        if min(asdict(self).values()) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class TtaConfig:
    method: str = "tta-cope"
    gamma: float = 0.99
    rho: float = 0.05
    update_interval: int = 1
    lr: float = 1e-4
    rng_seed: int = 0
    weights: LossWeights = LossWeights()
    ensemble: Optional[str] = None  # inference pose selection; None -> method default
    ransac_iterations: int = 512
    ransac_sample_size: int = 4

    def __post_init__(self):
        if self.method not in METHODS:
            raise UnknownMethod(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.update_interval < 1:
            raise ValueError("update_interval must be a positive integer")
        if self.ensemble is not None:
            EnsembleMode(self.ensemble)

    @property
    def inference_mode(self) -> EnsembleMode:
        if self.ensemble is not None:
            return EnsembleMode(self.ensemble)
        if self.method in ("tta-cope", "lower-bound"):
            return EnsembleMode.INLIER_MAX
        return EnsembleMode.STUDENT

    def ransac(self, frame_id: int) -> RansacConfig:
        # per-frame seed shared by student and teacher: equal maps give equal poses
        seed = int(np.random.SeedSequence([self.rng_seed, frame_id]).generate_state(1)[0])
        return RansacConfig(self.ransac_iterations, self.ransac_sample_size, self.rho, seed)


# ---------------------------------------------------------------------------
# losses


def supervised_loss(nmap: NocsMap, target: NocsTarget, aug_map: NocsMap, w: LossWeights, aug_rows=None):
    """Cross-entropy to labels plus consistency of the augmented prediction.

    The consistency term is the cross-entropy of ``aug_map`` against the argmax
    bins of ``nmap`` (held constant). ``aug_rows`` maps each ``aug_map`` row to
    its row in ``nmap``; omitted means rows correspond one to one.

    Returns:
        (loss, grad wrt nmap logits, grad wrt aug_map logits)
    """
    if aug_rows is None:
        if aug_map.logits.shape != nmap.logits.shape:
            raise ShapeMismatch(f"{aug_map.logits.shape} vs {nmap.logits.shape}")
        aug_rows = np.arange(len(nmap))
    ce, g_ce = cross_entropy(nmap, target)
    pseudo = argmax_bins(nmap).subset(np.asarray(aug_rows))
    cons, g_cons = cross_entropy(aug_map, pseudo)
    loss = w.lambda_ce * ce + w.lambda_c * cons
    return loss, w.lambda_ce * g_ce, w.lambda_c * g_cons


def pseudo_label_loss(student_map: NocsMap, teacher_map: NocsMap, inlier_mask=None):
    """Cross-entropy of student logits against teacher argmax bins, optionally inliers only."""
    if student_map.logits.shape != teacher_map.logits.shape:
        raise ShapeMismatch(f"{student_map.logits.shape} vs {teacher_map.logits.shape}")
    return cross_entropy(student_map, argmax_bins(teacher_map), inlier_mask)


def self_training_loss(student_map: NocsMap, filt: FilterResult):
    """Cross-entropy of the student's inlier logits against the binned pulled-back depth."""
    if len(filt.inlier_mask) != len(student_map):
        raise ShapeMismatch("filter result and map cover different clouds")
    target = encode_bins(filt.nocs_space_depth, student_map.bin_count)
    return cross_entropy(student_map, target, filt.inlier_mask)


def tta_loss(l_d, l_pl, w: LossWeights):
    """Weighted sum of ``(value, grad)`` pairs for the self-training and pseudo-label terms."""
    (vd, gd), (vp, gp) = l_d, l_pl
    return w.lambda_d * vd + w.lambda_pl * vp, w.lambda_d * gd + w.lambda_pl * gp


def entropy_loss_step(student: ModelParams, points, state: AdamState, mask=None, lr=None):
    """One Adam step on the mean prediction entropy, restricted to ``mask``."""
    feats = point_features(points)
    value, grad = entropy(forward(student, feats), with_grad=True)
    if mask is None:
        mask = tent_parameter_mask(student)
    grads = backward(student, feats, grad)
    student, state = adam_step(student, grads, state, mask=mask, lr=lr)
    return student, state, value


# ---------------------------------------------------------------------------
# pretraining


@dataclass(frozen=True)
class AugmentConfig:
    jitter_sigma: float = 0.003
    dropout: float = 0.2


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 60
    batch_frames: int = 32
    lr: float = 3e-3
    seed: int = 0
    weights: LossWeights = LossWeights()
    augment: AugmentConfig = AugmentConfig()
    # piecewise-constant multipliers of lr at fractions of the total step count
    lr_milestones: tuple = (0.25, 0.5, 0.75, 0.9)
    lr_ratios: tuple = (0.6, 0.3, 0.1, 0.01)


def lr_at(cfg: PretrainConfig, step: int, total: int) -> float:
    ratio = 1.0
    for frac, r in zip(cfg.lr_milestones, cfg.lr_ratios):
        if step >= frac * total:
            ratio = r
    return cfg.lr * ratio


def standardize_inputs(params: ModelParams, frames) -> ModelParams:
    """Set the input affine layer to whiten the feature statistics of ``frames``."""
    feats = np.vstack([point_features(f.points) for f in frames])
    mean, std = feats.mean(axis=0), feats.std(axis=0)
    std = np.where(std > 1e-8, std, 1.0)
    out = params.copy()
    out.norm_scale = 1.0 / std
    out.norm_shift = -mean / std
    return out


def _augment(points, rng, aug: AugmentConfig):
    pts = points + rng.normal(0.0, aug.jitter_sigma, size=points.shape) if aug.jitter_sigma > 0 else points.copy()
    keep = rng.random(len(points)) >= aug.dropout
    if keep.sum() < 4:
        keep[:] = True
    return pts[keep], np.flatnonzero(keep)


def supervised_batch(params: ModelParams, frames, rng, cfg: PretrainConfig):
    """Loss and parameter gradients of the supervised objective on a batch of frames."""
    feats, feats_aug, labels, rows = [], [], [], []
    offset = 0
    for f in frames:
        feats.append(point_features(f.points))
        pts_aug, keep = _augment(f.points, rng, cfg.augment)
        feats_aug.append(point_features(pts_aug))
        labels.append(f.gt_nocs.bin_indices)
        rows.append(keep + offset)
        offset += len(f.points)
    feats = np.vstack(feats)
    feats_aug = np.vstack(feats_aug)
    target = NocsTarget(np.vstack(labels), params.bin_count)
    nmap, cache = forward(params, feats, return_cache=True)
    aug_map, aug_cache = forward(params, feats_aug, return_cache=True)
    loss, g_map, g_aug = supervised_loss(nmap, target, aug_map, cfg.weights, np.concatenate(rows))
    grads = backward(params, feats, g_map, cache)
    if cfg.weights.lambda_c > 0:
        grads = grads.map(np.add, backward(params, feats_aug, g_aug, aug_cache))
    return loss, grads


def pretrain(params: ModelParams, frames: Sequence, cfg: PretrainConfig = PretrainConfig()):
    """Adam on the supervised objective over ``cfg.epochs`` shuffled passes.

    Returns:
        (params, curve) where ``curve`` lists ``(step, loss, lr)`` per step.
    """
    frames = list(frames)
    if any(f.gt_nocs is None for f in frames):
        raise ValueError("pretraining frames must carry gt_nocs")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_params(params, cfg.lr)
    n_batches = int(np.ceil(len(frames) / cfg.batch_frames)) if frames else 0
    total = cfg.epochs * n_batches
    curve = []
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(frames))
        for b in range(n_batches):
            batch = [frames[i] for i in order[b * cfg.batch_frames:(b + 1) * cfg.batch_frames]]
            loss, grads = supervised_batch(params, batch, rng, cfg)
            lr = lr_at(cfg, step, total)
            params, state = adam_step(params, grads, state, lr=lr)
            curve.append((step, loss, lr))
            step += 1
    return params, curve


# ---------------------------------------------------------------------------
# test-time adaptation


@dataclass
class FrameOutput:
    frame_id: int
    method: str
    pose: SimilarityTransform
    size: np.ndarray
    winner: str
    inliers_student: int
    inliers_teacher: int
    updated: bool = False
    skipped: bool = False
    loss: Optional[float] = None
    loss_d: Optional[float] = None
    loss_pl: Optional[float] = None
    loss_ent: Optional[float] = None
    pose_student: Optional[SimilarityTransform] = None
    pose_teacher: Optional[SimilarityTransform] = None


@dataclass
class AdaptState:
    student: ModelParams
    teacher: ModelParams
    optimizer: AdamState
    steps: int = 0

    @classmethod
    def from_pretrained(cls, params: ModelParams, lr: float = 1e-4, teacher: ModelParams | None = None):
        # teacher starts as an exact copy of the pretrained student
        teacher = params.copy() if teacher is None else teacher.copy()
        return cls(params.copy(), teacher, AdamState.for_params(params, lr))


def estimate_size(filt: FilterResult) -> np.ndarray:
    """Box extents in meters from the inlier NOCS spread about the center."""
    nocs = filt.nocs[filt.inlier_mask] if filt.inlier_count else filt.nocs
    half = np.abs(nocs - NOCS_CENTER).max(axis=0)
    return np.maximum(2.0 * half, 1.0 / 64) * filt.pose.scale


def _fallback_filter(points, nmap: NocsMap, cfg: TtaConfig) -> FilterResult | None:
    try:
        return point_filter(points, nmap, cfg.rho, ransac=False)
    except DegenerateInput:
        return None


def _safe_filter(points, nmap: NocsMap, cfg: TtaConfig, frame_id: int) -> FilterResult | None:
    try:
        return point_filter(points, nmap, cfg.rho, cfg.ransac(frame_id))
    except DegenerateInput:
        return None


@dataclass
class _Inference:
    s_map: NocsMap
    t_map: NocsMap
    fs: Optional[FilterResult]
    ft: Optional[FilterResult]
    s_cache: list = field(default_factory=list, repr=False)


def _infer(state: AdaptState, feats, points, cfg: TtaConfig, frame_id: int, need_teacher: bool) -> _Inference:
    s_map, s_cache = forward(state.student, feats, return_cache=True)
    fs = _safe_filter(points, s_map, cfg, frame_id)
    if need_teacher:
        t_map = forward(state.teacher, feats)
        ft = _safe_filter(points, t_map, cfg, frame_id)
    else:
        t_map, ft = s_map, fs
    return _Inference(s_map, t_map, fs, ft, s_cache)


def _select(inf: _Inference, points, mode: EnsembleMode, cfg: TtaConfig, frame_id: int):
    """Inference pose under ``mode``; returns (FilterResult, winner tag)."""
    fs, ft = inf.fs, inf.ft
    if mode.is_input_level:
        fused = input_ensemble(inf.s_map, inf.t_map, mode)
        f = _safe_filter(points, fused, cfg, frame_id)
        if f is not None:
            return f, "fused"
    elif fs is not None and ft is not None:
        if mode is EnsembleMode.INLIER_MAX:
            _, tag = pose_ensemble_inlier_max(fs, ft)
        elif mode is EnsembleMode.OUTPUT_SOFTMAX_MAX:
            _, tag = output_ensemble_softmax_max(fs, inf.s_map, ft, inf.t_map)
        else:
            tag = mode.value
        return (fs if tag == "student" else ft), tag
    if mode is EnsembleMode.STUDENT and fs is not None:
        return fs, "student"
    if mode is EnsembleMode.TEACHER and ft is not None:
        return ft, "teacher"
    if ft is not None:
        return ft, "teacher"
    if fs is not None:
        return fs, "student"
    return None, "none"


def _fallback_pose(points, inf: _Inference, cfg: TtaConfig):
    f = _fallback_filter(points, inf.s_map, cfg)
    if f is not None:
        return f
    # nothing fits: centroid with extent-derived scale
    pts = np.asarray(points)
    center = pts.mean(axis=0)
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))) or 1.0
    pose = SimilarityTransform(np.eye(3), center, diag)
    return FilterResult(pose, np.zeros(len(pts), dtype=bool), np.full((len(pts), 3), NOCS_CENTER), np.full((len(pts), 3), NOCS_CENTER))


def _update(state: AdaptState, feats, points, inf: _Inference, win: FilterResult, cfg: TtaConfig, telemetry: dict) -> bool:
    """Apply the method's training step; returns False when the frame is skipped."""
    w = cfg.weights
    method = cfg.method
    if method == "tent":
        value, grad = entropy(inf.s_map, with_grad=True)
        grads = backward(state.student, feats, grad, inf.s_cache)
        state.student, state.optimizer = adam_step(state.student, grads, state.optimizer, mask=tent_parameter_mask(state.student))
        telemetry["loss_ent"] = value
        telemetry["loss"] = value
        state.steps += 1
        return True

    if method == "pl":
        value, grad = pseudo_label_loss(inf.s_map, inf.t_map)
        telemetry["loss_pl"] = value
        total, g = w.lambda_pl * value, w.lambda_pl * grad
    elif method == "pl-filtered":
        if inf.ft is None or inf.ft.inlier_count == 0:
            return False
        value, grad = pseudo_label_loss(inf.s_map, inf.t_map, inf.ft.inlier_mask)
        telemetry["loss_pl"] = value
        total, g = w.lambda_pl * value, w.lambda_pl * grad
    else:  # tta-cope
        if win is None or win.inlier_count == 0:
            return False
        l_d = self_training_loss(inf.s_map, win)
        l_pl = pseudo_label_loss(inf.s_map, inf.t_map, win.inlier_mask)
        total, g = tta_loss(l_d, l_pl, w)
        telemetry["loss_d"], telemetry["loss_pl"] = l_d[0], l_pl[0]
    telemetry["loss"] = total
    grads = backward(state.student, feats, g, inf.s_cache)
    state.student, state.optimizer = adam_step(state.student, grads, state.optimizer)
    # momentum update uses the already-updated student
    state.teacher = ema_update(state.teacher, state.student, cfg.gamma)
    state.steps += 1
    return True


def tta_step(state: AdaptState, obs, cfg: TtaConfig, frame_index: int) -> FrameOutput:
    """Process one frame: predict, filter, ensemble, maybe update, then report a pose.

    ``state`` is mutated in place (single writer). Frames where pose fitting is
    degenerate skip the update and report a plain least-squares pose.
    """
    points = np.asarray(obs.points, dtype=np.float64)
    feats = point_features(points)
    mode = cfg.inference_mode
    learns = cfg.method != "lower-bound"
    need_teacher = cfg.method in ("pl", "pl-filtered", "tta-cope") or mode not in (EnsembleMode.STUDENT,)

    inf = _infer(state, feats, points, cfg, obs.frame_id, need_teacher)
    telemetry: dict = {}
    updated = skipped = False

    if learns and (frame_index + 1) % cfg.update_interval == 0:
        if inf.fs is None or (need_teacher and inf.ft is None):
            skipped = True
        else:
            win = None
            if cfg.method == "tta-cope":
                win, _ = _select(inf, points, EnsembleMode.INLIER_MAX, cfg, obs.frame_id)
            try:
                updated = _update(state, feats, points, inf, win, cfg, telemetry)
            except EmptyMask:
                updated = False
            skipped = not updated
        if skipped:
            log.info("frame %d: degenerate filtering, update skipped", obs.frame_id)
        if updated:
            # report the pose of the updated models
            inf = _infer(state, feats, points, cfg, obs.frame_id, need_teacher)

    chosen, tag = _select(inf, points, mode, cfg, obs.frame_id)
    if chosen is None:
        chosen, tag = _fallback_pose(points, inf, cfg), "fallback"
        skipped = True
    return FrameOutput(
        frame_id=obs.frame_id,
        method=cfg.method,
        pose=chosen.pose,
        size=estimate_size(chosen),
        winner=tag,
        inliers_student=inf.fs.inlier_count if inf.fs is not None else 0,
        inliers_teacher=inf.ft.inlier_count if inf.ft is not None else 0,
        updated=updated,
        skipped=skipped,
        pose_student=inf.fs.pose if inf.fs is not None else None,
        pose_teacher=inf.ft.pose if inf.ft is not None else None,
        **telemetry,
    )


@dataclass
class RunResult:
    method: str
    outputs: list = field(default_factory=list)
    wall_time_s: float = 0.0
    update_steps: int = 0
    final_state: Optional[AdaptState] = None


def run_method(method: str, pretrained: ModelParams, stream: Iterable, cfg: TtaConfig | None = None, teacher: ModelParams | None = None) -> RunResult:
    """Single sequential pass of ``method`` over ``stream`` (observations only).

    The pretrained parameters are copied, never mutated. ``teacher`` optionally
    supplies distinct teacher weights (defaults to a copy of ``pretrained``).
    """
    if method not in METHODS:
        raise UnknownMethod(f"unknown method {method!r}; expected one of {METHODS}")
    cfg = TtaConfig() if cfg is None else cfg
    if cfg.method != method:
        cfg = replace(cfg, method=method)
    state = AdaptState.from_pretrained(pretrained, cfg.lr, teacher)
    result = RunResult(method)
    t0 = time.perf_counter()
    for i, obs in enumerate(stream):
        if not hasattr(obs, "points") or not hasattr(obs, "frame_id"):
            raise TypeError("stream items must expose frame_id and points")
        out = tta_step(state, obs, cfg, i)
        result.outputs.append(out)
        log.debug("frame %d winner=%s inliers=%d/%d", out.frame_id, out.winner, out.inliers_student, out.inliers_teacher)
    result.wall_time_s = time.perf_counter() - t0
    result.update_steps = state.steps
    result.final_state = state
    return result


__all__ = [
    "METHODS",
    "AdaptState",
    "AugmentConfig",
    "FrameOutput",
    "LossWeights",
    "PretrainConfig",
    "RunResult",
    "TtaConfig",
    "entropy_loss_step",
    "pretrain",
    "pseudo_label_loss",
    "run_method",
    "self_training_loss",
    "standardize_inputs",
    "supervised_loss",
    "tta_loss",
    "tta_step",
]
