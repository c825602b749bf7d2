"""Per-frame pose/size accuracy in the NOCS evaluation style.

Scores are fractions of frames passing each threshold rather than detection
mAP: every frame holds a single pre-segmented object, so there is nothing to
rank.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInput
from .geometry import SimilarityTransform, rotation_geodesic_deg

METRIC_COLUMNS = ("iou50", "iou75", "deg5cm2", "deg5cm5", "deg10cm2", "deg10cm5")
_THRESHOLDS = {"deg5cm2": (5, 2), "deg5cm5": (5, 5), "deg10cm2": (10, 2), "deg10cm5": (10, 5)}


@dataclass(frozen=True)
class OrientedBox:
    """Box of ``extents`` (meters) centered at ``pose.translation``; pose scale is ignored."""

    pose: SimilarityTransform
    extents: np.ndarray

    def __post_init__(self):
        ext = np.asarray(self.extents, dtype=np.float64).reshape(3)
        if not np.all(ext > 0):
            raise ValueError("box extents must be positive")
        object.__setattr__(self, "extents", ext)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return (signs * self.extents / 2) @ self.pose.rotation.T + self.pose.translation

    def faces(self) -> list[np.ndarray]:
        """Six quads, counter-clockwise seen from outside."""
        c = self.corners()
        # corner index bits: x*4 + y*2 + z
        quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
        return [c[list(q)] for q in quads]

    def halfspaces(self):
        """Outward normals ``n`` and offsets ``d`` with the box = {x : n.x <= d}."""
        r, t, h = self.pose.rotation, self.pose.translation, self.extents / 2
        normals = np.vstack([r.T, -r.T])
        offsets = np.concatenate([r.T @ t + h, -(r.T @ t) + h])
        return normals, offsets

    def contains(self, pts) -> np.ndarray:
        local = (np.asarray(pts) - self.pose.translation) @ self.pose.rotation
        return np.all(np.abs(local) <= self.extents / 2, axis=-1)


def _clip_polygon(poly: np.ndarray, n: np.ndarray, d: float, eps: float):
    """Sutherland-Hodgman against n.x <= d.

    Returns (clipped polygon or None, points on the plane); the second item is
    None when the whole polygon lies in the plane.
    """
    out, cut = [], []
    k = len(poly)
    dist = poly @ n - d
    if np.all(np.abs(dist) <= eps):
        return poly, None
    for i in range(k):
        a, b = poly[i], poly[(i + 1) % k]
        da, db = dist[i], dist[(i + 1) % k]
        if da <= eps:
            out.append(a)
        if (da < -eps and db > eps) or (da > eps and db < -eps):
            p = a + (b - a) * (da / (da - db))
            out.append(p)
            cut.append(p)
        elif abs(da) <= eps:
            cut.append(a)
    return (np.array(out) if len(out) >= 3 else None), cut


def _order_cap(points: list, normal: np.ndarray):
    pts = np.unique(np.round(np.array(points), 12), axis=0)
    if len(pts) < 3:
        return None
    c = pts.mean(axis=0)
    u = pts[0] - c
    if np.linalg.norm(u) < 1e-15:
        u = pts[1] - c
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    ang = np.arctan2((pts - c) @ v, (pts - c) @ u)
    return pts[np.argsort(ang)]


def _polyhedron_volume(faces) -> float:
    vol = 0.0
    for f in faces:
        for i in range(1, len(f) - 1):
            vol += np.dot(f[0], np.cross(f[i], f[i + 1]))
    return vol / 6.0


def intersection_volume(a: OrientedBox, b: OrientedBox) -> float:
    """Volume of the convex intersection by clipping ``a`` with each face plane of ``b``."""
    scale = max(a.extents.max(), b.extents.max())
    eps = 1e-12 * scale
    # work relative to a's center to keep the divergence-theorem sum well conditioned
    origin = a.pose.translation
    faces = [f - origin for f in a.faces()]
    normals, offsets = b.halfspaces()
    offsets = offsets - normals @ origin
    for n, d in zip(normals, offsets):
        new_faces, cap = [], []
        coplanar = False
        for f in faces:
            clipped, cut = _clip_polygon(f, n, d, eps)
            if cut is None:
                coplanar = True
            else:
                cap.extend(cut)
            if clipped is not None:
                new_faces.append(clipped)
        # a face already lying in the plane closes the polyhedron there
        if not coplanar and len(cap) >= 3:
            ordered = _order_cap(cap, n)
            if ordered is not None:
                new_faces.append(ordered)
        # a corner cut off by one plane has three faces plus the cap
        if len(new_faces) < 4:  # flat or empty
            return 0.0
        faces = new_faces
    return max(0.0, _polyhedron_volume(faces))


def iou_3d(a: OrientedBox, b: OrientedBox) -> float:
    inter = intersection_volume(a, b)
    union = a.volume + b.volume - inter
    return float(np.clip(inter / union, 0.0, 1.0)) if union > 0 else 0.0


def pose_error(est: SimilarityTransform, gt: SimilarityTransform, symmetry: Optional[int] = None):
    """(rotation error in degrees, translation error in centimeters).

    With axial ``symmetry`` the rotation error is the angle between the images of
    the symmetry axis, so spinning about that axis is free.
    """
    t_cm = float(np.linalg.norm(est.translation - gt.translation) * 100.0)
    if symmetry is None:
        return rotation_geodesic_deg(est.rotation, gt.rotation), t_cm
    a = est.rotation[:, symmetry]
    b = gt.rotation[:, symmetry]
    cos = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))), t_cm


@dataclass
class FrameEval:
    """Everything :func:`summarize` needs about one frame."""

    est_pose: SimilarityTransform
    est_size: np.ndarray
    gt_pose: SimilarityTransform
    gt_size: np.ndarray
    category: str = ""
    symmetry: Optional[int] = None

    def errors(self):
        return pose_error(self.est_pose, self.gt_pose, self.symmetry)

    def iou(self) -> float:
        est = OrientedBox(self.est_pose, np.maximum(self.est_size, 1e-9))
        gt = OrientedBox(self.gt_pose, self.gt_size)
        return iou_3d(est, gt)


@dataclass
class EvalSummary:
    iou50: float
    iou75: float
    deg5cm2: float
    deg5cm5: float
    deg10cm2: float
    deg10cm5: float
    n_frames: int = 0
    mean_rot_deg: float = 0.0
    mean_trans_cm: float = 0.0
    per_category: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_COLUMNS}


def _fractions(rot, trans, iou) -> dict:
    out = {"iou50": float(np.mean(iou >= 0.5)), "iou75": float(np.mean(iou >= 0.75))}
    for name, (deg, cm) in _THRESHOLDS.items():
        out[name] = float(np.mean((rot < deg) & (trans < cm)))
    return out


def summarize(frames: Sequence[FrameEval]) -> EvalSummary:
    if not frames:
        raise EmptyInput("summarize needs at least one frame")
    errs = np.array([f.errors() for f in frames])
    iou = np.array([f.iou() for f in frames])
    rot, trans = errs[:, 0], errs[:, 1]
    per_cat = {}
    cats = np.array([f.category for f in frames])
    for c in sorted(set(cats)):
        sel = cats == c
        per_cat[c] = _fractions(rot[sel], trans[sel], iou[sel])
    return EvalSummary(
        **_fractions(rot, trans, iou),
        n_frames=len(frames),
        mean_rot_deg=float(rot.mean()),
        mean_trans_cm=float(trans.mean()),
        per_category=per_cat,
    )
