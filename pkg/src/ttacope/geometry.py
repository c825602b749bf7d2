"""Similarity transforms and robust NOCS-to-depth pose fitting.

A pose maps centered NOCS coordinates into the camera frame::

    x_cam = scale * rotation @ x_nocs + translation

All estimators here are closed form (Umeyama) or seeded hypothesize-and-verify
(RANSAC), so results are reproducible bit-for-bit for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, SizeMismatch

# Rank test on the centered source covariance.
DEGENERACY_TOL = 1e-12


@dataclass(frozen=True)
class SimilarityTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "scale", float(self.scale))
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix with the scale folded into the upper block."""
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m

    def to_list(self) -> list[float]:
        """12 floats (row-major rotation then translation) followed by scale."""
        return [*self.rotation.ravel().tolist(), *self.translation.tolist(), self.scale]

    @classmethod
    def from_list(cls, values) -> "SimilarityTransform":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (13,):
            raise ValueError("expected 13 values: 9 rotation, 3 translation, 1 scale")
        return cls(values[:9].reshape(3, 3), values[9:12], values[12])

    def is_valid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return (
            np.abs(r.T @ r - np.eye(3)).max() <= tol
            and abs(np.linalg.det(r) - 1.0) <= tol
            and self.scale > 0
        )


def apply_similarity(pose: SimilarityTransform, points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    return pose.scale * points @ pose.rotation.T + pose.translation


def invert_similarity(pose: SimilarityTransform) -> SimilarityTransform:
    inv_s = 1.0 / pose.scale
    rt = pose.rotation.T
    return SimilarityTransform(rt, -inv_s * (rt @ pose.translation), inv_s)


def compose_similarity(a: SimilarityTransform, b: SimilarityTransform) -> SimilarityTransform:
    """Return ``a ∘ b`` (apply ``b`` first)."""
    return SimilarityTransform(
        a.rotation @ b.rotation,
        a.scale * (a.rotation @ b.translation) + a.translation,
        a.scale * b.scale,
    )


def _check_pair(src, dst):
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 3 or dst.ndim != 2 or dst.shape[1] != 3:
        raise SizeMismatch(f"expected (n, 3) point sets, got {src.shape} and {dst.shape}")
    if src.shape[0] != dst.shape[0]:
        raise SizeMismatch(f"|src|={src.shape[0]} != |dst|={dst.shape[0]}")
    return src, dst


def _umeyama_batch(src: np.ndarray, dst: np.ndarray):
    """Closed-form similarity for a stack of corresponded sets.

    Args:
        src: (K, m, 3) source points.
        dst: (K, m, 3) destination points.

    Returns:
        rotations (K, 3, 3), translations (K, 3), scales (K,), and a (K,) bool
        array flagging sets whose source covariance has rank < 2.
    """
    src_mean = src.mean(axis=1)
    dst_mean = dst.mean(axis=1)
    src_c = src - src_mean[:, None, :]
    dst_c = dst - dst_mean[:, None, :]
    m = src.shape[1]

    src_cov = np.einsum("kni,knj->kij", src_c, src_c) / m
    cov_sv = np.linalg.svd(src_cov, compute_uv=False)
    degenerate = cov_sv[:, 1] < DEGENERACY_TOL * np.maximum(1.0, cov_sv[:, 0])

    cross = np.einsum("kni,knj->kij", dst_c, src_c) / m
    u, sv, vt = np.linalg.svd(cross)
    # reflection correction: flip the weakest axis when U V^T would be improper
    d = np.ones((src.shape[0], 3))
    d[:, 2] = np.sign(np.linalg.det(u) * np.linalg.det(vt))
    d[d[:, 2] == 0, 2] = 1.0
    rot = np.einsum("kij,kj,kjl->kil", u, d, vt)

    var_src = np.einsum("kni,kni->k", src_c, src_c) / m
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.einsum("kj,kj->k", sv, d) / var_src
    degenerate |= ~(scale > 0)
    trans = dst_mean - scale[:, None] * np.einsum("kij,kj->ki", rot, src_mean)
    return rot, trans, scale, degenerate


def umeyama_fit(src, dst) -> SimilarityTransform:
    """Least-squares similarity minimizing ``sum ||dst - (s R src + t)||^2``.

    Raises:
        SizeMismatch: point counts differ or arrays are not (n, 3).
        DegenerateInput: fewer than 3 points or the source set is collinear.
    """
    src, dst = _check_pair(src, dst)
    if src.shape[0] < 3:
        raise DegenerateInput(f"need at least 3 correspondences, got {src.shape[0]}")
    rot, trans, scale, degenerate = _umeyama_batch(src[None], dst[None])
    if degenerate[0]:
        raise DegenerateInput("source points are collinear or coincident")
    return SimilarityTransform(rot[0], trans[0], scale[0])


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 512
    sample_size: int = 4
    inlier_threshold: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.sample_size < 3:
            raise ValueError("sample_size must be at least 3")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")


def nocs_residuals(pose: SimilarityTransform, src, dst) -> np.ndarray:
    """Distance between each source point and its destination pulled back by ``pose``."""
    back = apply_similarity(invert_similarity(pose), dst)
    return np.linalg.norm(back - np.asarray(src, dtype=np.float64), axis=1)


def _draw_samples(rng: np.random.Generator, n: int, k: int, count: int) -> np.ndarray:
    # k distinct indices per row: argsort of uniform keys is a uniform permutation
    keys = rng.random((count, n))
    return np.argpartition(keys, k - 1, axis=1)[:, :k] if k < n else np.argsort(keys, axis=1)


def ransac_umeyama(src, dst, cfg: RansacConfig = RansacConfig()):
    """Robust similarity fit with residuals measured in source (NOCS) space.

    Minimal samples are scored by the number of correspondences whose pulled-back
    depth lies within ``cfg.inlier_threshold`` of the source point. The best
    consensus set is refit with :func:`umeyama_fit`; the returned mask is recomputed
    under that refit.

    Returns:
        (SimilarityTransform, inlier mask of shape (n,))
    """
    src, dst = _check_pair(src, dst)
    n = src.shape[0]
    k = cfg.sample_size
    if n < k:
        raise SizeMismatch(f"need at least sample_size={k} correspondences, got {n}")

    rng = np.random.default_rng(cfg.rng_seed)
    idx = _draw_samples(rng, n, k, cfg.max_iterations)
    rot, trans, scale, degenerate = _umeyama_batch(src[idx], dst[idx])
    valid = np.flatnonzero(~degenerate)
    if valid.size == 0:
        raise DegenerateInput(f"no non-degenerate minimal sample in {cfg.max_iterations} draws")
    rot, trans, scale = rot[valid], trans[valid], scale[valid]

    # pull back dst through every hypothesis: R^T (d - t) / s
    diff = dst[None, :, :] - trans[:, None, :]
    back = np.einsum("kji,knj->kni", rot, diff) / scale[:, None, None]
    resid = np.linalg.norm(back - src[None], axis=2)
    counts = (resid <= cfg.inlier_threshold).sum(axis=1)
    best = int(np.argmax(counts))
    consensus = resid[best] <= cfg.inlier_threshold

    try:
        pose = umeyama_fit(src[consensus], dst[consensus])
    except DegenerateInput:
        pose = SimilarityTransform(rot[best], trans[best], scale[best])
    mask = nocs_residuals(pose, src, dst) <= cfg.inlier_threshold
    return pose, mask


def rotation_geodesic_deg(r1, r2) -> float:
    r1 = np.asarray(r1, dtype=np.float64)
    r2 = np.asarray(r2, dtype=np.float64)
    cos = (np.trace(r1.T @ r2) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def rotation_about_axis(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle_rad) * k + (1 - np.cos(angle_rad)) * (k @ k)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation via a random unit quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
