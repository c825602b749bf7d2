"""Synthetic category-level scenes with a controllable source/target shift.

Instances are parametric surfaces normalized into NOCS (tight bounding box
centered at 0.5, diagonal 1). A frame places an instance in front of a pinhole
camera at the origin looking down +z, keeps the part of the surface nearest the
camera, then applies depth noise, point dropout and a depth bias.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import TooFewPoints
from .geometry import SimilarityTransform, apply_similarity, rotation_about_axis
from .nocs import DEFAULT_BINS, NocsTarget, encode_bins

FAMILIES = ("box", "cylinder", "tapered-cylinder", "open-box")
UP_AXIS = 1  # NOCS y is the up / symmetry axis


@dataclass(frozen=True)
class CategorySpec:
    name: str
    generator: str
    scale_range: tuple[float, float] = (0.15, 0.3)  # bounding-box diagonal, meters
    symmetry: Optional[int] = None  # axis index for axial symmetry

    def __post_init__(self):
        if self.generator not in FAMILIES:
            raise ValueError(f"unknown shape family {self.generator!r}")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"bad scale range {self.scale_range}")


DEFAULT_CATEGORIES = (
    CategorySpec("box", "box", (0.15, 0.3)),
    CategorySpec("can", "cylinder", (0.12, 0.25), symmetry=UP_AXIS),
    CategorySpec("bowl", "tapered-cylinder", (0.12, 0.25), symmetry=UP_AXIS),
    CategorySpec("tray", "open-box", (0.15, 0.3)),
)


@dataclass(frozen=True)
class DomainParams:
    """Sensor corruption and scene layout of one domain."""

    noise_sigma: float = 0.002
    dropout: float = 0.0
    depth_bias: float = 0.0
    partial_view: float = 1.0
    rng_seed: int = 0
    distance_range: tuple[float, float] = (0.6, 0.9)
    lateral_range: tuple[float, float] = (0.15, 0.08)
    elevation_deg: float = 30.0
    yaw_jitter_deg: float = 0.0

    def __post_init__(self):
        vals = (self.noise_sigma, self.dropout, self.depth_bias, self.partial_view, self.elevation_deg, self.yaw_jitter_deg)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("domain parameters must be finite")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if not 0 < self.partial_view <= 1:
            raise ValueError("partial_view must be in (0, 1]")
        if not 0 < self.distance_range[0] <= self.distance_range[1]:
            raise ValueError("distance_range must be positive and ordered")


SOURCE_DOMAIN = DomainParams()
TARGET_DOMAIN = DomainParams(noise_sigma=0.01, dropout=0.3, depth_bias=0.01, partial_view=0.6, rng_seed=1)


@dataclass
class Instance:
    category: str
    instance_id: int
    nocs: np.ndarray  # (M, 3) surface samples in [0, 1]^3
    size: np.ndarray  # tight bounding-box extents, meters

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.size))


@dataclass
class Observation:
    """What the adaptation loop is allowed to see of a frame."""

    frame_id: int
    points: np.ndarray


@dataclass
class FrameRecord:
    frame_id: int
    category: str
    points: np.ndarray
    gt_pose: Optional[SimilarityTransform] = None
    gt_nocs: Optional[NocsTarget] = None
    gt_size: Optional[np.ndarray] = None
    instance_id: int = -1
    gt_coords: Optional[np.ndarray] = field(default=None, repr=False)

    def observation(self) -> Observation:
        return Observation(self.frame_id, self.points)


def _sample_box_faces(rng, dims, n, open_top=False):
    a, b, c = dims
    faces = [  # (axis, sign, area)
        (0, -1, b * c), (0, 1, b * c),
        (1, -1, a * c), (1, 1, a * c),
        (2, -1, a * b), (2, 1, a * b),
    ]
    if open_top:
        faces = [f for f in faces if not (f[0] == 1 and f[1] == 1)]
    areas = np.array([f[2] for f in faces])
    which = rng.choice(len(faces), size=n, p=areas / areas.sum())
    pts = (rng.random((n, 3)) - 0.5) * np.asarray(dims)
    for k, (axis, sign, _) in enumerate(faces):
        sel = which == k
        pts[sel, axis] = sign * dims[axis] / 2
    return pts


def _sample_tapered(rng, r_bottom, r_top, height, n):
    slant = np.hypot(height, r_top - r_bottom)
    side_area = np.pi * (r_top + r_bottom) * slant
    areas = np.array([side_area, np.pi * r_bottom**2, np.pi * r_top**2])
    which = rng.choice(3, size=n, p=areas / areas.sum())
    theta = rng.uniform(0, 2 * np.pi, n)
    pts = np.empty((n, 3))

    side = which == 0
    k = int(side.sum())
    # height fraction with density proportional to the local radius
    u = rng.random(k)
    if abs(r_top - r_bottom) > 1e-12:
        r2 = r_bottom**2 + u * (r_top**2 - r_bottom**2)
        frac = (np.sqrt(r2) - r_bottom) / (r_top - r_bottom)
    else:
        frac = u
    rad = r_bottom + frac * (r_top - r_bottom)
    pts[side] = np.column_stack([rad * np.cos(theta[side]), (frac - 0.5) * height, rad * np.sin(theta[side])])

    for code, r, y in ((1, r_bottom, -height / 2), (2, r_top, height / 2)):
        sel = which == code
        rr = r * np.sqrt(rng.random(int(sel.sum())))
        pts[sel] = np.column_stack([rr * np.cos(theta[sel]), np.full(sel.sum(), y), rr * np.sin(theta[sel])])
    return pts


def _metric_surface(spec: CategorySpec, rng: np.random.Generator, n: int) -> np.ndarray:
    g = spec.generator
    if g == "box":
        dims = rng.uniform([0.6, 0.4, 0.5], [1.0, 0.8, 0.9])
        return _sample_box_faces(rng, dims, n)
    if g == "open-box":
        dims = rng.uniform([0.8, 0.25, 0.5], [1.0, 0.45, 0.8])
        return _sample_box_faces(rng, dims, n, open_top=True)
    if g == "cylinder":
        r = rng.uniform(0.25, 0.4)
        h = rng.uniform(0.8, 1.2)
        return _sample_tapered(rng, r, r, h, n)
    # tapered: wide top, narrow base
    r_top = rng.uniform(0.45, 0.6)
    r_bottom = r_top * rng.uniform(0.4, 0.7)
    h = rng.uniform(0.3, 0.5)
    return _sample_tapered(rng, r_bottom, r_top, h, n)


def sample_instance(spec: CategorySpec, rng: np.random.Generator, instance_id: int = 0, n_surface: int = 1024) -> Instance:
    """Random instance of a category, returned in NOCS with its metric extents."""
    if n_surface < 4:
        raise ValueError("need at least 4 surface samples")
    pts = _metric_surface(spec, rng, n_surface)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = hi - lo
    diag = rng.uniform(*spec.scale_range)
    nocs = (pts - (lo + hi) / 2) / np.linalg.norm(extent) + 0.5
    size = extent / np.linalg.norm(extent) * diag
    return Instance(spec.name, instance_id, nocs, size)


def sample_pose(rng: np.random.Generator, domain: DomainParams, diagonal: float) -> SimilarityTransform:
    """Upright object on a table, seen from an elevated camera, front facing the lens."""
    z = rng.uniform(*domain.distance_range)
    lx, ly = domain.lateral_range
    x = rng.uniform(-lx, lx)
    y = rng.uniform(-ly, ly)
    yaw = np.radians(rng.uniform(-domain.yaw_jitter_deg, domain.yaw_jitter_deg))

    # object y up -> camera -y, object z (front) -> camera -z
    upright = np.diag([1.0, -1.0, -1.0])
    tilt = rotation_about_axis([1, 0, 0], -np.radians(domain.elevation_deg))
    face_az = rotation_about_axis([0, 1, 0], np.arctan2(x, z))
    face_el = rotation_about_axis([1, 0, 0], -np.arctan2(y, z))
    rot = face_az @ face_el @ tilt @ upright @ rotation_about_axis([0, 1, 0], yaw)
    return SimilarityTransform(rot, [x, y, z], diagonal)


def clean_points(instance: Instance, pose: SimilarityTransform, idx=None) -> np.ndarray:
    nocs = instance.nocs if idx is None else instance.nocs[idx]
    return apply_similarity(pose, nocs - 0.5)


def render_frame(
    instance: Instance,
    pose: SimilarityTransform,
    domain: DomainParams,
    n_points: int,
    rng: np.random.Generator,
    frame_id: int = 0,
    bin_count: int = DEFAULT_BINS,
) -> FrameRecord:
    """Observe ``instance`` under ``pose`` through the domain's sensor model.

    Raises:
        TooFewPoints: fewer than 4 points survive culling and dropout.
    """
    if n_points < 4:
        raise TooFewPoints(f"n_points={n_points} < 4")
    m = instance.nocs.shape[0]
    idx = rng.choice(m, size=n_points, replace=n_points > m)
    pts = clean_points(instance, pose, idx)

    keep = int(np.ceil(domain.partial_view * n_points))
    if keep < n_points:
        order = np.argsort(np.linalg.norm(pts, axis=1), kind="stable")
        sel = np.sort(order[:keep])
        idx, pts = idx[sel], pts[sel]

    rays = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    pts = pts + rays * rng.normal(0.0, domain.noise_sigma, size=(len(pts), 1)) if domain.noise_sigma > 0 else pts
    if domain.dropout > 0:
        alive = rng.random(len(pts)) >= domain.dropout
        idx, pts = idx[alive], pts[alive]
    if len(pts) < 4:
        raise TooFewPoints(f"only {len(pts)} points survive culling/dropout")
    pts = pts + np.array([0.0, 0.0, domain.depth_bias])

    coords = instance.nocs[idx]
    return FrameRecord(
        frame_id=frame_id,
        category=instance.category,
        points=pts,
        gt_pose=pose,
        gt_nocs=encode_bins(coords, bin_count),
        gt_size=instance.size.copy(),
        instance_id=instance.instance_id,
        gt_coords=coords,
    )


@dataclass(frozen=True)
class StreamConfig:
    domain: DomainParams = SOURCE_DOMAIN
    n_frames: int = 100
    n_points: int = 256
    instances_per_category: int = 6
    categories: tuple = DEFAULT_CATEGORIES
    bin_count: int = DEFAULT_BINS
    n_surface: int = 1024


@dataclass
class Stream:
    frames: list
    categories: tuple
    bin_count: int = DEFAULT_BINS

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def symmetry_of(self, category: str):
        for c in self.categories:
            if c.name == category:
                return c.symmetry
        raise KeyError(category)


def generate_stream(cfg: StreamConfig, stream_index: int) -> Stream:
    """Frames from a fixed instance pool; instance ids are offset by ``stream_index``."""
    rng = np.random.default_rng([cfg.domain.rng_seed, stream_index])
    pool = []
    for ci, spec in enumerate(cfg.categories):
        for k in range(cfg.instances_per_category):
            iid = stream_index * 1_000_000 + ci * 1000 + k
            pool.append(sample_instance(spec, rng, iid, cfg.n_surface))
    frames = []
    fid = 0
    while len(frames) < cfg.n_frames:
        inst = pool[rng.integers(len(pool))]
        pose = sample_pose(rng, cfg.domain, inst.diagonal)
        try:
            frames.append(render_frame(inst, pose, cfg.domain, cfg.n_points, rng, fid, cfg.bin_count))
        except TooFewPoints:
            pass
        fid += 1
    for i, f in enumerate(frames):
        f.frame_id = i
    return Stream(frames, tuple(cfg.categories), cfg.bin_count)


def make_streams(source: StreamConfig, target: StreamConfig, counts=None):
    """Source (stream index 0) and target (stream index 1) streams with disjoint instances."""
    if counts is not None:
        source = replace(source, n_frames=counts[0])
        target = replace(target, n_frames=counts[1])
    return generate_stream(source, 0), generate_stream(target, 1)
