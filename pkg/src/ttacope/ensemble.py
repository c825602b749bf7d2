"""Pose-aware point filtering and teacher/student pose ensembles.

Poses are fit from decoded NOCS coordinates shifted to be centered on the
origin, so a pose translation is the object center in the camera frame.
Residuals and the pulled-back depth ``nocs_space_depth`` are reported in the
usual [0, 1]^3 NOCS frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ShapeMismatch
from .geometry import (
    RansacConfig,
    SimilarityTransform,
    apply_similarity,
    invert_similarity,
    ransac_umeyama,
    umeyama_fit,
)
from .nocs import NocsMap, decode_bins, log_softmax, softmax

NOCS_CENTER = 0.5


@dataclass
class FilterResult:
    pose: SimilarityTransform
    inlier_mask: np.ndarray
    nocs_space_depth: np.ndarray
    nocs: np.ndarray  # decoded NOCS coordinates the pose was fit on

    @property
    def inlier_count(self) -> int:
        return int(self.inlier_mask.sum())

    @property
    def residuals(self) -> np.ndarray:
        return np.linalg.norm(self.nocs_space_depth - self.nocs, axis=1)


class EnsembleMode(str, Enum):
    ARGMAX_MATCH = "argmax-match"
    SOFTMAX_AVERAGE = "softmax-average"
    SOFTMAX_MAX = "softmax-max"
    OUTPUT_SOFTMAX_MAX = "output-softmax-max"
    INLIER_MAX = "inlier-max"
    STUDENT = "student"
    TEACHER = "teacher"

    @property
    def is_input_level(self) -> bool:
        return self in (EnsembleMode.ARGMAX_MATCH, EnsembleMode.SOFTMAX_AVERAGE, EnsembleMode.SOFTMAX_MAX)


def depth_to_nocs(pose: SimilarityTransform, points) -> np.ndarray:
    return apply_similarity(invert_similarity(pose), points) + NOCS_CENTER


def filter_with_pose(points, nocs, pose: SimilarityTransform, rho: float) -> FilterResult:
    """Inlier test of every correspondence under a fixed pose."""
    d_hat = depth_to_nocs(pose, points)
    mask = np.linalg.norm(d_hat - nocs, axis=1) <= rho
    return FilterResult(pose, mask, d_hat, nocs)


def point_filter(points, nmap: NocsMap, rho: float = 0.05, cfg: RansacConfig = RansacConfig(), ransac: bool = True) -> FilterResult:
    """Fit a pose from the map's decoded NOCS to the cloud, then keep points within ``rho``.

    Raises:
        DegenerateInput: the pose fit has no usable sample.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] != len(nmap):
        raise ShapeMismatch(f"{points.shape[0]} points vs {len(nmap)} map rows")
    if not rho > 0:
        raise ValueError("rho must be positive")
    nocs = decode_bins(nmap)
    if ransac:
        pose, _ = ransac_umeyama(nocs - NOCS_CENTER, points, cfg)
    else:
        pose = umeyama_fit(nocs - NOCS_CENTER, points)
    return filter_with_pose(points, nocs, pose, rho)


def pose_ensemble_inlier_max(student: FilterResult, teacher: FilterResult):
    """Student pose only when it has strictly more inliers; otherwise the teacher's."""
    if student.inlier_count > teacher.inlier_count:
        return student.pose, "student"
    return teacher.pose, "teacher"


def _as_logprob_map(probs: np.ndarray) -> NocsMap:
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    # zero-probability bins: large finite negative keeps the map finite
    return NocsMap(np.where(np.isfinite(logp), logp, -1e30))


def input_ensemble(s_map: NocsMap, t_map: NocsMap, mode) -> NocsMap:
    """Fuse student and teacher maps into one before pose fitting.

    argmax-match keeps the student's logits on axes where both argmax bins
    agree and uses the teacher's elsewhere. softmax-average and softmax-max
    return log-probabilities of the per-bin mean, resp. renormalized max.
    """
    mode = EnsembleMode(mode)
    if s_map.logits.shape != t_map.logits.shape:
        raise ShapeMismatch(f"{s_map.logits.shape} vs {t_map.logits.shape}")
    if mode is EnsembleMode.ARGMAX_MATCH:
        agree = np.argmax(s_map.logits, axis=2) == np.argmax(t_map.logits, axis=2)
        return NocsMap(np.where(agree[..., None], s_map.logits, t_map.logits))
    ps, pt = softmax(s_map.logits), softmax(t_map.logits)
    if mode is EnsembleMode.SOFTMAX_AVERAGE:
        return _as_logprob_map(0.5 * (ps + pt))
    if mode is EnsembleMode.SOFTMAX_MAX:
        m = np.maximum(ps, pt)
        return _as_logprob_map(m / m.sum(axis=2, keepdims=True))
    raise ValueError(f"{mode.value} is not an input-level ensemble")


def map_confidence(nmap: NocsMap, mask=None) -> float:
    """Mean max-softmax probability over the masked points and all axes."""
    probs = np.exp(log_softmax(nmap.logits)).max(axis=2)
    if mask is not None:
        probs = probs[np.asarray(mask)]
    if probs.size == 0:
        return 0.0
    return float(probs.mean())


def output_ensemble_softmax_max(student: FilterResult, s_map: NocsMap, teacher: FilterResult, t_map: NocsMap):
    """Pose of the model with higher mean max-probability on its own inliers; ties to teacher."""
    cs = map_confidence(s_map, student.inlier_mask)
    ct = map_confidence(t_map, teacher.inlier_mask)
    if cs > ct:
        return student.pose, "student"
    return teacher.pose, "teacher"


def refilter(result: FilterResult, points, rho: float) -> FilterResult:
    """Same pose and NOCS, different threshold."""
    return filter_with_pose(points, result.nocs, result.pose, rho)
