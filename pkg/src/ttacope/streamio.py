"""Binary stream files and their text manifests.

Layout (all little-endian):

    header   magic b"TTCS", u16 version, u32 frame count, u16 bin count,
             u16 category count, then per category:
             u16 name length, utf-8 name, u8 family index,
             f64 scale lo, f64 scale hi, i8 symmetry axis (-1 = none)
    frame    u32 frame id, u16 category index, i64 instance id, u32 point count,
             u8 has-ground-truth flag, f32 points (n, 3),
             and when the flag is set: u16 bins (n, 3), f64 pose (9 rotation
             entries row-major, 3 translation, 1 scale), f64 size (3)

Points are stored as float32, so a loaded stream is what downstream commands
consume; regenerating in memory is not bit-identical to reading the file.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import StreamFormatError
from .geometry import SimilarityTransform
from .nocs import NocsTarget
from .synth import FAMILIES, CategorySpec, FrameRecord, Stream

MAGIC = b"TTCS"
VERSION = 1


def _pack_categories(categories) -> bytes:
    out = [struct.pack("<H", len(categories))]
    for c in categories:
        name = c.name.encode("utf-8")
        sym = -1 if c.symmetry is None else int(c.symmetry)
        out.append(struct.pack("<H", len(name)) + name)
        out.append(struct.pack("<Bddb", FAMILIES.index(c.generator), *c.scale_range, sym))
    return b"".join(out)


def encode_stream(stream: Stream, with_ground_truth: bool = True) -> bytes:
    cat_index = {c.name: i for i, c in enumerate(stream.categories)}
    parts = [MAGIC, struct.pack("<HIH", VERSION, len(stream.frames), stream.bin_count), _pack_categories(stream.categories)]
    for f in stream.frames:
        pts = np.asarray(f.points, dtype="<f4").reshape(-1, 3)
        has_gt = with_ground_truth and f.gt_pose is not None and f.gt_nocs is not None
        parts.append(struct.pack("<IHqIB", f.frame_id, cat_index[f.category], f.instance_id, len(pts), int(has_gt)))
        parts.append(pts.tobytes())
        if has_gt:
            parts.append(np.asarray(f.gt_nocs.bin_indices, dtype="<u2").tobytes())
            parts.append(np.asarray(f.gt_pose.to_list(), dtype="<f8").tobytes())
            parts.append(np.asarray(f.gt_size, dtype="<f8").reshape(3).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise StreamFormatError("truncated stream file")
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def array(self, dtype: str, count: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        if self.pos + size > len(self.data):
            raise StreamFormatError("truncated stream file")
        arr = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.pos)
        self.pos += size
        return arr


def decode_stream(data: bytes) -> Stream:
    if data[:4] != MAGIC:
        raise StreamFormatError("not a stream file (bad magic)")
    r = _Reader(data)
    r.pos = 4
    version, n_frames, bin_count = r.unpack("<HIH")
    if version != VERSION:
        raise StreamFormatError(f"unsupported stream version {version}")
    (n_cat,) = r.unpack("<H")
    categories = []
    for _ in range(n_cat):
        (name_len,) = r.unpack("<H")
        name = r.data[r.pos:r.pos + name_len].decode("utf-8")
        r.pos += name_len
        fam, lo, hi, sym = r.unpack("<Bddb")
        categories.append(CategorySpec(name, FAMILIES[fam], (lo, hi), None if sym < 0 else sym))

    frames = []
    for _ in range(n_frames):
        fid, ci, iid, n, has_gt = r.unpack("<IHqIB")
        pts = r.array("<f4", 3 * n).reshape(n, 3).astype(np.float64)
        rec = FrameRecord(fid, categories[ci].name, pts, instance_id=iid)
        if has_gt:
            bins = r.array("<u2", 3 * n).reshape(n, 3).astype(np.int64)
            rec.gt_nocs = NocsTarget(bins, bin_count)
            rec.gt_pose = SimilarityTransform.from_list(r.array("<f8", 13).tolist())
            rec.gt_size = r.array("<f8", 3).copy()
        frames.append(rec)
    if r.pos != len(data):
        raise StreamFormatError(f"{len(data) - r.pos} trailing bytes")
    return Stream(frames, tuple(categories), bin_count)


def write_stream(stream: Stream, path, manifest: dict | None = None) -> Path:
    """Write the stream file and ``<stem>.manifest.txt`` next to it."""
    path = Path(path)
    data = encode_stream(stream)
    path.write_bytes(data)
    info = {
        "frame_count": len(stream.frames),
        "bin_count": stream.bin_count,
        "point_count": sum(len(f.points) for f in stream.frames),
        "categories": ",".join(c.name for c in stream.categories),
        "sha256": hashlib.sha256(data).hexdigest(),
    }
    info.update(manifest or {})
    manifest_path(path).write_text("".join(f"{k}={v}\n" for k, v in info.items()))
    return path


def read_stream(path) -> Stream:
    return decode_stream(Path(path).read_bytes())


def manifest_path(stream_path) -> Path:
    p = Path(stream_path)
    return p.with_name(p.stem + ".manifest.txt")


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out
