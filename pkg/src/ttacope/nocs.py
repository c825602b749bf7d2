"""Binned NOCS representation and the probabilistic primitives behind every loss.

Each point carries three independent B-way classifications, one per NOCS axis.
Logits are stored as an (X, 3, B) array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMask, ShapeMismatch

DEFAULT_BINS = 32


@dataclass
class NocsMap:
    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 3 or self.logits.shape[1] != 3 or self.logits.shape[2] < 2:
            raise ShapeMismatch(f"logits must be (X, 3, B>=2), got {self.logits.shape}")

    @property
    def bin_count(self) -> int:
        return self.logits.shape[2]

    def __len__(self):
        return self.logits.shape[0]

    def subset(self, mask) -> "NocsMap":
        return NocsMap(self.logits[mask])


@dataclass
class NocsTarget:
    bin_indices: np.ndarray
    bin_count: int = DEFAULT_BINS

    def __post_init__(self):
        self.bin_indices = np.asarray(self.bin_indices, dtype=np.int64)
        if self.bin_indices.ndim != 2 or self.bin_indices.shape[1] != 3:
            raise ShapeMismatch(f"bin indices must be (X, 3), got {self.bin_indices.shape}")
        if self.bin_indices.size and (self.bin_indices.min() < 0 or self.bin_indices.max() >= self.bin_count):
            raise ValueError(f"bin indices outside [0, {self.bin_count})")

    def __len__(self):
        return self.bin_indices.shape[0]

    def subset(self, mask) -> "NocsTarget":
        return NocsTarget(self.bin_indices[mask], self.bin_count)


def encode_bins(coords, bin_count: int = DEFAULT_BINS) -> NocsTarget:
    """Bin index per axis, ``min(floor(c * B), B - 1)`` after clamping to [0, 1]."""
    c = np.clip(np.asarray(coords, dtype=np.float64), 0.0, 1.0)
    idx = np.minimum(np.floor(c * bin_count).astype(np.int64), bin_count - 1)
    return NocsTarget(idx.reshape(-1, 3), bin_count)


def bin_centers(target: NocsTarget) -> np.ndarray:
    return (target.bin_indices + 0.5) / target.bin_count


def argmax_bins(nmap: NocsMap) -> NocsTarget:
    # np.argmax returns the first maximal index, so ties go to the lower bin
    return NocsTarget(np.argmax(nmap.logits, axis=2), nmap.bin_count)


def decode_bins(nmap: NocsMap) -> np.ndarray:
    """Argmax bin centers in [0, 1]^3, shape (X, 3)."""
    return bin_centers(argmax_bins(nmap))


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(logits, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    e = np.exp(logits - logits.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _point_mask(mask, n: int) -> np.ndarray:
    if mask is None:
        return np.ones(n, dtype=bool)
    mask = np.asarray(mask)
    if mask.dtype != bool:
        sel = np.zeros(n, dtype=bool)
        sel[mask] = True
        mask = sel
    if mask.shape != (n,):
        raise ShapeMismatch(f"mask shape {mask.shape} does not match {n} points")
    return mask


def cross_entropy(nmap: NocsMap, target: NocsTarget, mask=None):
    """Mean over selected (point, axis) pairs of ``-log softmax(logits)[target]``.

    Args:
        nmap: predicted logits, (X, 3, B).
        target: bin indices, (X, 3).
        mask: optional boolean (X,) array or index array selecting points.

    Returns:
        (loss, grad) where grad has the shape of ``nmap.logits`` and is zero on
        unselected points.

    Raises:
        EmptyMask: the mask selects no point.
    """
    if nmap.logits.shape[:2] != target.bin_indices.shape or nmap.bin_count != target.bin_count:
        raise ShapeMismatch(
            f"map {nmap.logits.shape} vs target {target.bin_indices.shape} (B={target.bin_count})"
        )
    sel = _point_mask(mask, len(nmap))
    count = int(sel.sum()) * 3
    if count == 0:
        raise EmptyMask("cross-entropy mask selects zero points")

    logits = nmap.logits[sel]
    labels = target.bin_indices[sel]
    logp = log_softmax(logits)
    picked = np.take_along_axis(logp, labels[..., None], axis=2)[..., 0]
    loss = -picked.sum() / count

    g = np.exp(logp)
    np.put_along_axis(g, labels[..., None], np.take_along_axis(g, labels[..., None], axis=2) - 1.0, axis=2)
    grad = np.zeros_like(nmap.logits)
    grad[sel] = g / count
    return float(loss), grad


def entropy(nmap: NocsMap, with_grad: bool = False):
    """Mean over points and axes of the per-axis categorical entropy.

    With ``with_grad`` returns ``(value, d value / d logits)``.
    """
    logp = log_softmax(nmap.logits)
    p = np.exp(logp)
    # p * logp is exactly 0 when p underflows to 0, matching the 0 log 0 := 0 convention
    plogp = np.where(p > 0, p * logp, 0.0)
    h = -plogp.sum(axis=2)
    count = h.size
    value = float(h.sum() / count)
    if not with_grad:
        return value
    # dH/dz_k = -p_k (log p_k + H)
    grad = -(plogp + p * h[..., None]) / count
    return value, grad
