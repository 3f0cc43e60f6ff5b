"""Dense softmax classifier with flat parameter vectors.

Parameters are kept as one flat float64 array plus a segment layout so the
federation layers can average, subtract and measure updates without knowing
anything about layer shapes. Training is plain mini-batch SGD with an
optional per-sample weight, which is how labeled and pseudo-labeled samples
are balanced against each other.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

Shape = tuple[int, ...]
Segment = tuple[str, Shape]

_MAGIC = b"FPV1"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    """Rectifier hidden layers, softmax output, cross-entropy loss."""

    input_dim: int
    hidden: tuple[int, ...]
    num_classes: int

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.num_classes < 2:
            raise ModelError("input_dim must be >= 1 and num_classes >= 2")
        if len(self.hidden) < 1 or any(h < 1 for h in self.hidden):
            raise ModelError("need at least one hidden layer of width >= 1")

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per layer, input to output."""
        dims = [self.input_dim, *self.hidden, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))

    def segments(self) -> tuple[Segment, ...]:
        segs: list[Segment] = []
        for k, (fan_in, fan_out) in enumerate(self.layer_dims()):
            segs.append((f"W{k}", (fan_out, fan_in)))
            segs.append((f"b{k}", (fan_out,)))
        return tuple(segs)

    def param_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.segments())


def _segment_size(segments: Sequence[Segment]) -> int:
    return sum(int(np.prod(shape)) for _, shape in segments)


@dataclass
class ParamVector:
    """Flat parameter (or update) vector plus the layout it packs."""

    values: np.ndarray
    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        expect = _segment_size(self.segments)
        if self.values.ndim != 1 or self.values.size != expect:
            raise ModelError(f"expected flat vector of length {expect}, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ModelError("parameter vector contains non-finite entries")

    # Value semantics: arithmetic returns fresh vectors, inputs untouched.

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.segments)

    def same_layout(self, other: "ParamVector") -> bool:
        return self.segments == other.segments

    def _check_layout(self, other: "ParamVector") -> None:
        if not self.same_layout(other):
            raise ModelError("parameter vectors have mismatched layouts")

    def __add__(self, other: "ParamVector") -> "ParamVector":
        self._check_layout(other)
        return ParamVector(self.values + other.values, self.segments)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        self._check_layout(other)
        return ParamVector(self.values - other.values, self.segments)

    def scale(self, a: float) -> "ParamVector":
        return ParamVector(self.values * float(a), self.segments)

    def dot(self, other: "ParamVector") -> float:
        self._check_layout(other)
        return float(self.values @ other.values)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def to_bytes(self) -> bytes:
        """Little-endian serialization with a self-describing layout header."""
        out = [_MAGIC, struct.pack("<I", len(self.segments))]
        for name, shape in self.segments:
            raw = name.encode("utf-8")
            out.append(struct.pack("<B", len(raw)))
            out.append(raw)
            out.append(struct.pack("<B", len(shape)))
            out.append(struct.pack(f"<{len(shape)}I", *shape))
        out.append(self.values.astype("<f8").tobytes())
        return b"".join(out)

    @staticmethod
    def from_bytes(data: bytes) -> "ParamVector":
        if data[:4] != _MAGIC:
            raise ModelError("bad parameter-vector header")
        off = 4
        (nseg,) = struct.unpack_from("<I", data, off)
        off += 4
        segments: list[Segment] = []
        for _ in range(nseg):
            (nlen,) = struct.unpack_from("<B", data, off)
            off += 1
            name = data[off : off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            segments.append((name, tuple(int(d) for d in shape)))
        count = _segment_size(segments)
        values = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64)
        return ParamVector(values, tuple(segments))


def init_params(arch: Architecture, rng: np.random.Generator) -> ParamVector:
    """Uniform weights scaled by fan-in, zero biases."""
    chunks = []
    for fan_in, fan_out in arch.layer_dims():
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_out * fan_in))
        chunks.append(np.zeros(fan_out))
    return ParamVector(np.concatenate(chunks), arch.segments())


def _layer_views(values: np.ndarray, arch: Architecture) -> list[tuple[np.ndarray, np.ndarray]]:
    views = []
    off = 0
    for fan_in, fan_out in arch.layer_dims():
        w = values[off : off + fan_out * fan_in].reshape(fan_out, fan_in)
        off += fan_out * fan_in
        b = values[off : off + fan_out]
        off += fan_out
        views.append((w, b))
    return views


def _check_inputs(arch: Architecture, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise ModelError(f"expected features with {arch.input_dim} columns, got shape {x.shape}")
    return x


def forward(params: ParamVector, arch: Architecture, x: np.ndarray) -> np.ndarray:
    """Class probabilities, one row per sample. Rows sum to 1."""
    x = _check_inputs(arch, x)
    layers = _layer_views(params.values, arch)
    h = x
    for w, b in layers[:-1]:
        h = np.maximum(h @ w.T + b, 0.0)
    w, b = layers[-1]
    logits = h @ w.T + b
    logits = logits - logits.max(axis=1, keepdims=True)  # overflow guard
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def predict(params: ParamVector, arch: Architecture, x: np.ndarray) -> np.ndarray:
    """Hard labels; ties resolve to the lowest class index."""
    return np.argmax(forward(params, arch, x), axis=1)


def accuracy(params: ParamVector, arch: Architecture, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        raise ModelError("cannot score an empty batch")
    return float(np.mean(predict(params, arch, x) == np.asarray(y)))


def _prep_batch(
    arch: Architecture, x: np.ndarray, y: np.ndarray, sample_weight: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = _check_inputs(arch, x)
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise ModelError("labels must be a vector matching the batch size")
    if y.size == 0:
        raise ModelError("empty batch")
    if np.any(y < 0) or np.any(y >= arch.num_classes):
        raise ModelError("label outside class range")
    if sample_weight is None:
        w = np.ones(x.shape[0])
    else:
        w = np.asarray(sample_weight, dtype=np.float64)
        if w.shape != (x.shape[0],) or np.any(w < 0):
            raise ModelError("sample weights must be non-negative, one per sample")
    return x, y, w


def loss(
    params: ParamVector,
    arch: Architecture,
    x: np.ndarray,
    y: np.ndarray,
    sample_weight: np.ndarray | None = None,
) -> float:
    """Weight-averaged cross-entropy: sum(w * ce) / len(batch)."""
    x, y, w = _prep_batch(arch, x, y, sample_weight)
    probs = forward(params, arch, x)
    p = np.clip(probs[np.arange(len(y)), y], 1e-300, None)
    return float(np.sum(w * -np.log(p)) / len(y))


def gradient(
    params: ParamVector,
    arch: Architecture,
    x: np.ndarray,
    y: np.ndarray,
    sample_weight: np.ndarray | None = None,
) -> ParamVector:
    """Exact gradient of loss() via backpropagation."""
    x, y, w = _prep_batch(arch, x, y, sample_weight)
    layers = _layer_views(params.values, arch)
    n = x.shape[0]

    acts = [x]
    h = x
    for wm, b in layers[:-1]:
        h = np.maximum(h @ wm.T + b, 0.0)
        acts.append(h)
    wm, b = layers[-1]
    logits = h @ wm.T + b
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=1, keepdims=True)

    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta *= (w / n)[:, None]

    grads: list[np.ndarray] = []
    for k in range(len(layers) - 1, -1, -1):
        a_prev = acts[k]
        gw = delta.T @ a_prev
        gb = delta.sum(axis=0)
        grads.append(gb)
        grads.append(gw.ravel())
        if k > 0:
            delta = delta @ layers[k][0]
            delta[acts[k] <= 0.0] = 0.0  # rectifier gate
    grads.reverse()
    return ParamVector(np.concatenate(grads), params.segments)


def batches_per_epoch(n_samples: int, batch_size: int) -> int:
    """Number of SGD updates one pass over n_samples takes."""
    if n_samples < 1 or batch_size < 1:
        raise ModelError("need at least one sample and batch_size >= 1")
    return -(-n_samples // batch_size)


def local_train(
    params: ParamVector,
    arch: Architecture,
    x: np.ndarray,
    y: np.ndarray,
    sample_weight: np.ndarray | None,
    epochs: int,
    batch_size: int,
    lr: float,
    rng: np.random.Generator,
) -> tuple[ParamVector, int]:
    """Run SGD and return (update, steps) where update = theta_new - theta_in.

    The caller's vector is never mutated. Batch order is drawn from rng, so
    handing in the same generator state replays the same trajectory.
    """
    x, y, w = _prep_batch(arch, x, y, sample_weight)
    if epochs < 0 or lr < 0:
        raise ModelError("epochs and lr must be non-negative")
    n = x.shape[0]
    theta = params.copy()
    steps = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            g = gradient(theta, arch, x[idx], y[idx], w[idx])
            theta = ParamVector(theta.values - lr * g.values, theta.segments)
            steps += 1
    return theta - params, steps
