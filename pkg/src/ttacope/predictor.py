"""Toy per-point NOCS predictor: a tanh MLP with a learnable input affine layer.

The network is ``logits = MLP(features * norm_scale + norm_shift)``, evaluated
independently for every point. Gradients are hand-derived; parameters are held
in :class:`ModelParams`, which doubles as the gradient container.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch
from .nocs import DEFAULT_BINS, NocsMap

FEATURE_DIM = 6
DEFAULT_HIDDEN = (64, 64)


@dataclass
class ModelParams:
    norm_scale: np.ndarray
    norm_shift: np.ndarray
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    @property
    def bin_count(self) -> int:
        return self.dims[-1] // 3

    def named(self) -> list[tuple[str, np.ndarray]]:
        """Parameters in canonical order (also the checkpoint order)."""
        out = [("norm_scale", self.norm_scale), ("norm_shift", self.norm_shift)]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out += [(f"w{i}", w), (f"b{i}", b)]
        return out

    def arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.named()]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.norm_scale.copy(),
            self.norm_shift.copy(),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def map(self, fn, *others: "ModelParams") -> "ModelParams":
        """Apply ``fn`` array-wise across this and other same-shaped params."""
        for o in others:
            _check_same_shape(self, o)
        arrs = [fn(*xs) for xs in zip(self.arrays(), *(o.arrays() for o in others))]
        return ModelParams.from_arrays(arrs)

    def zeros_like(self) -> "ModelParams":
        return self.map(np.zeros_like)

    @classmethod
    def from_arrays(cls, arrs) -> "ModelParams":
        arrs = list(arrs)
        return cls(arrs[0], arrs[1], arrs[2::2], arrs[3::2])

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def equals(self, other: "ModelParams") -> bool:
        """Bit-for-bit equality."""
        if self.dims != other.dims:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


def _check_same_shape(a: ModelParams, b: ModelParams):
    if [x.shape for x in a.arrays()] != [x.shape for x in b.arrays()]:
        raise ShapeMismatch("parameter shapes differ")


def init_params(
    seed: int,
    hidden=DEFAULT_HIDDEN,
    in_dim: int = FEATURE_DIM,
    bin_count: int = DEFAULT_BINS,
) -> ModelParams:
    """Glorot-uniform weights, zero biases, identity input affine."""
    rng = np.random.default_rng(seed)
    dims = [in_dim, *hidden, 3 * bin_count]
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        lim = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-lim, lim, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return ModelParams(np.ones(in_dim), np.zeros(in_dim), weights, biases)


def point_features(points) -> np.ndarray:
    """Per-point input features, (X, 6).

    Columns 0-2 are the points centered on the cloud centroid and divided by the
    cloud RMS radius; columns 3-5 are the raw camera-frame coordinates.
    """
    points = np.asarray(points, dtype=np.float64)
    centered = points - points.mean(axis=0)
    rms = np.sqrt((centered**2).sum(axis=1).mean())
    if rms <= 0:
        rms = 1.0
    return np.hstack([centered / rms, points])


def _forward_cache(params: ModelParams, features: np.ndarray):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.dims[0]:
        raise ShapeMismatch(f"features {features.shape} do not match input width {params.dims[0]}")
    h = features * params.norm_scale + params.norm_shift
    acts = [h]
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        h = z if i == n_layers - 1 else np.tanh(z)
        acts.append(h)
    return acts


def forward(params: ModelParams, features, return_cache: bool = False):
    """Logits for every point; with ``return_cache`` also the activations for :func:`backward`."""
    acts = _forward_cache(params, features)
    out = acts[-1]
    nmap = NocsMap(out.reshape(out.shape[0], 3, -1))
    return (nmap, acts) if return_cache else nmap


def backward(params: ModelParams, features, upstream, cache=None) -> ModelParams:
    """Exact parameter gradients of ``sum(upstream * forward(params, features).logits)``.

    ``cache`` is the activation list from ``forward(..., return_cache=True)`` for
    the same params and features; without it the forward pass is recomputed.
    """
    features = np.asarray(features, dtype=np.float64)
    acts = _forward_cache(params, features) if cache is None else cache
    upstream = np.asarray(upstream, dtype=np.float64)
    out_shape = (features.shape[0], 3, params.bin_count)
    if upstream.shape != out_shape:
        raise ShapeMismatch(f"upstream gradient {upstream.shape} != output {out_shape}")

    delta = upstream.reshape(features.shape[0], -1)
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i].T
        if i > 0:
            delta = delta * (1.0 - acts[i] ** 2)
    g_scale = (delta * features).sum(axis=0)
    g_shift = delta.sum(axis=0)
    return ModelParams(g_scale, g_shift, gw, gb)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: ModelParams | None = None
    v: ModelParams | None = None

    @classmethod
    def for_params(cls, params: ModelParams, lr: float = 1e-4) -> "AdamState":
        return cls(lr=lr, m=params.zeros_like(), v=params.zeros_like())

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.step, self.m.copy(), self.v.copy())


def tent_parameter_mask(params: ModelParams) -> list[bool]:
    """Selector over :meth:`ModelParams.named` covering only the input affine layer."""
    return [name in ("norm_scale", "norm_shift") for name, _ in params.named()]


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState, mask=None, lr=None):
    """One Adam update with bias correction; returns new ``(params, state)``.

    ``mask`` (from :func:`tent_parameter_mask`) restricts which arrays change;
    unselected arrays and their moments are returned untouched. ``lr`` overrides
    the state's learning rate for this step (schedules).
    """
    _check_same_shape(params, grads)
    if state.m is None:
        state = AdamState.for_params(params, state.lr)
    lr = state.lr if lr is None else lr
    t = state.step + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    if mask is None:
        mask = [True] * len(params.arrays())

    new_p, new_m, new_v = [], [], []
    for sel, p, g, m, v in zip(mask, params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        if not sel:
            new_p.append(p.copy())
            new_m.append(m.copy())
            new_v.append(v.copy())
            continue
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        new_p.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(
        state.lr, state.beta1, state.beta2, state.eps, t,
        ModelParams.from_arrays(new_m), ModelParams.from_arrays(new_v),
    )
    return ModelParams.from_arrays(new_p), new_state


def ema_update(teacher: ModelParams, student: ModelParams, gamma: float) -> ModelParams:
    """Momentum update ``gamma * teacher + (1 - gamma) * student``.

    Written as ``teacher + (1 - gamma) * (student - teacher)`` so equal inputs
    stay bit-identical; ``gamma`` of exactly 0 or 1 returns an exact copy.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    if gamma == 1.0:
        _check_same_shape(teacher, student)
        return teacher.copy()
    if gamma == 0.0:
        _check_same_shape(teacher, student)
        return student.copy()
    return teacher.map(lambda t, s: t + (1.0 - gamma) * (s - t), student)


# checkpoint: int32 layer count L, int32 dims[L + 1], then float64 parameters in
# ModelParams.named() order, all little-endian
def save_checkpoint(params: ModelParams, path) -> None:
    dims = params.dims
    with open(path, "wb") as fh:
        fh.write(struct.pack("<i", len(dims) - 1))
        fh.write(np.asarray(dims, dtype="<i4").tobytes())
        fh.write(params.flatten().astype("<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    data = Path(path).read_bytes()
    (n_layers,) = struct.unpack_from("<i", data, 0)
    if n_layers < 1:
        raise ValueError(f"bad checkpoint header in {path}")
    dims = np.frombuffer(data, dtype="<i4", count=n_layers + 1, offset=4).astype(int)
    flat = np.frombuffer(data, dtype="<f8", offset=4 * (n_layers + 2)).astype(np.float64)
    shapes = [(dims[0],), (dims[0],)]
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        shapes += [(d_in, d_out), (d_out,)]
    expected = sum(int(np.prod(s)) for s in shapes)
    if flat.size != expected:
        raise ValueError(f"checkpoint {path} holds {flat.size} values, header implies {expected}")
    arrs, pos = [], 0
    for s in shapes:
        size = int(np.prod(s))
        arrs.append(flat[pos:pos + size].reshape(s).copy())
        pos += size
    return ModelParams.from_arrays(arrs)
