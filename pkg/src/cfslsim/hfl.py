"""Three-tier federation plumbing: worker updates roll up to edges, edge
models roll up to the cloud, and models are broadcast back down. Aggregation
is the data-size weighted mean of updates; reductions run in ascending id
order so results do not depend on container iteration order."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .nnmodel import ParamVector

log = logging.getLogger(__name__)

_CKPT_MAGIC = b"CKP1"


class AggregationError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    """Static worker-to-edge association. Every worker has exactly one edge."""

    num_workers: int
    num_edges: int
    edge_of_worker: tuple[int, ...]

    @staticmethod
    def contiguous(num_workers: int, num_edges: int) -> "Topology":
        """Workers in id order, split into near-equal contiguous blocks."""
        if num_workers < 1 or num_edges < 1 or num_edges > num_workers:
            raise AggregationError("need 1 <= num_edges <= num_workers")
        bounds = np.linspace(0, num_workers, num_edges + 1).astype(int)
        assign = []
        for edge in range(num_edges):
            assign.extend([edge] * (bounds[edge + 1] - bounds[edge]))
        return Topology(num_workers, num_edges, tuple(assign))

    def __post_init__(self) -> None:
        if len(self.edge_of_worker) != self.num_workers:
            raise AggregationError("association list must cover every worker")
        for e in self.edge_of_worker:
            if not 0 <= e < self.num_edges:
                raise AggregationError(f"edge index {e} out of range")

    def edge_of(self, worker: int) -> int:
        return self.edge_of_worker[worker]

    def workers_of(self, edge: int) -> list[int]:
        return [w for w in range(self.num_workers) if self.edge_of_worker[w] == edge]

    def association_matrix(self) -> np.ndarray:
        """Binary worker-by-edge matrix; rows sum to exactly 1."""
        mat = np.zeros((self.num_workers, self.num_edges), dtype=int)
        for w, e in enumerate(self.edge_of_worker):
            mat[w, e] = 1
        return mat


@dataclass
class GlobalState:
    """Cloud-side bookkeeping for one run."""

    round_index: int
    global_model: ParamVector
    edge_models: dict[int, ParamVector] = field(default_factory=dict)


def weighted_mean(pairs: Sequence[tuple[ParamVector, float]]) -> ParamVector:
    """sum(w_i * v_i) / sum(w_i), accumulated in the order given."""
    if not pairs:
        raise AggregationError("nothing to aggregate")
    total = 0.0
    acc = np.zeros_like(pairs[0][0].values)
    layout = pairs[0][0].segments
    for vec, w in pairs:
        if w <= 0:
            raise AggregationError("aggregation weights must be positive")
        if vec.segments != layout:
            raise AggregationError("mixed parameter layouts in one aggregate")
        acc += w * vec.values
        total += w
    return ParamVector(acc / total, layout)


def edge_aggregate(updates: Mapping[int, ParamVector], weights: Mapping[int, float]) -> ParamVector:
    """Combine worker updates at an edge, ascending worker id."""
    ids = sorted(updates)
    if not ids:
        raise AggregationError("edge aggregation needs at least one update")
    return weighted_mean([(updates[i], float(weights[i])) for i in ids])


def cloud_aggregate(models: Mapping[int, ParamVector], weights: Mapping[int, float]) -> ParamVector:
    """Combine edge (or cluster) models at the cloud, ascending id."""
    ids = sorted(models)
    if not ids:
        raise AggregationError("cloud aggregation needs at least one model")
    return weighted_mean([(models[i], float(weights[i])) for i in ids])


def broadcast(model: ParamVector, targets: Iterable[int]) -> dict[int, ParamVector]:
    """Independent copies per target; mutating one copy never leaks."""
    out = {t: model.copy() for t in targets}
    if not out:
        log.warning("broadcast to zero targets is a no-op")
    return out


def write_checkpoint(path: Path | str, models: Mapping[str, ParamVector]) -> None:
    """All named models of one round in a single little-endian file."""
    names = sorted(models)
    blob = [_CKPT_MAGIC, struct.pack("<I", len(names))]
    for name in names:
        raw = name.encode("utf-8")
        body = models[name].to_bytes()
        blob.append(struct.pack("<H", len(raw)))
        blob.append(raw)
        blob.append(struct.pack("<Q", len(body)))
        blob.append(body)
    Path(path).write_bytes(b"".join(blob))


def read_checkpoint(path: Path | str) -> dict[str, ParamVector]:
    data = Path(path).read_bytes()
    if data[:4] != _CKPT_MAGIC:
        raise AggregationError("bad checkpoint header")
    off = 4
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    out: dict[str, ParamVector] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        (blen,) = struct.unpack_from("<Q", data, off)
        off += 8
        out[name] = ParamVector.from_bytes(data[off : off + blen])
        off += blen
    return out
