"""Update-similarity clustering.

Workers whose local updates point the same way are treated as sharing a data
distribution. A cluster splits in two once its aggregated update has gone
flat while individual members still pull hard in different directions; it
stops refining once every member's update is small. Splits are found by
minimizing the largest cross-group cosine similarity, exhaustively for small
clusters and by a seeded-swap heuristic beyond that.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .nnmodel import ParamVector

log = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-12
EXHAUSTIVE_LIMIT = 15


class ClusterError(ValueError):
    pass


class Status(str, Enum):
    ACTIVE = "active"
    STATIONARY = "stationary"  # flat aggregate, split attempted or pending
    STOPPED = "stopped"


class SplitDecision(Enum):
    NO_SPLIT = "no_split"
    SPLIT = "split"
    STOP = "stop"


def cosine_similarity(u: np.ndarray | ParamVector, v: np.ndarray | ParamVector) -> float:
    """Cosine of the angle between two update vectors, clipped to [-1, 1].

    A vector with norm below 1e-12 carries no usable direction; similarity
    against it is defined as 0.
    """
    ua = u.values if isinstance(u, ParamVector) else np.asarray(u, dtype=np.float64)
    va = v.values if isinstance(v, ParamVector) else np.asarray(v, dtype=np.float64)
    if ua.shape != va.shape:
        raise ClusterError("similarity needs vectors of identical shape")
    nu = np.linalg.norm(ua)
    nv = np.linalg.norm(va)
    if nu < DEGENERATE_NORM or nv < DEGENERATE_NORM:
        return 0.0
    return float(np.clip(float(ua @ va) / (nu * nv), -1.0, 1.0))


@dataclass(frozen=True)
class SimilarityMatrix:
    """Pairwise cosine similarities over a fixed, sorted id order."""

    ids: tuple[int, ...]
    values: np.ndarray
    degenerate: tuple[int, ...] = ()  # ids whose update had ~zero norm

    def __post_init__(self) -> None:
        n = len(self.ids)
        v = self.values
        if v.shape != (n, n):
            raise ClusterError("similarity matrix shape must match id count")
        if not np.allclose(v, v.T, atol=1e-12):
            raise ClusterError("similarity matrix must be symmetric")
        if np.any(v < -1.0 - 1e-12) or np.any(v > 1.0 + 1e-12):
            raise ClusterError("similarity entries must lie in [-1, 1]")

    def sub(self, keep: Sequence[int]) -> "SimilarityMatrix":
        idx = [self.ids.index(i) for i in keep]
        return SimilarityMatrix(
            tuple(keep), self.values[np.ix_(idx, idx)], tuple(i for i in self.degenerate if i in keep)
        )


def similarity_matrix(updates: Mapping[int, ParamVector]) -> SimilarityMatrix:
    """Build the symmetric unit-diagonal similarity matrix, ids ascending."""
    ids = sorted(updates)
    if len(ids) < 1:
        raise ClusterError("no updates to compare")
    vecs = [updates[i].values for i in ids]
    degenerate = tuple(i for i, v in zip(ids, vecs) if np.linalg.norm(v) < DEGENERATE_NORM)
    if degenerate:
        log.warning("degenerate updates in similarity matrix: %s", degenerate)
    n = len(ids)
    mat = np.eye(n)
    for a in range(n):
        for b in range(a + 1, n):
            mat[a, b] = mat[b, a] = cosine_similarity(vecs[a], vecs[b])
    return SimilarityMatrix(tuple(ids), mat, degenerate)


@dataclass(frozen=True)
class SplitCheck:
    decision: SplitDecision
    aggregate_norm: float
    max_member_norm: float


def check_split(
    updates: Mapping[int, ParamVector],
    weights: Mapping[int, float],
    flat_eps: float,
    member_eps: float,
) -> SplitCheck:
    """Classify a cluster round.

    STOP when every member's update norm is below member_eps. SPLIT when the
    weighted-mean update has gone flat (norm < flat_eps) while some member
    still exceeds member_eps. Otherwise NO_SPLIT.
    """
    if not updates:
        raise ClusterError("split check needs at least one update")
    if flat_eps <= 0 or member_eps <= 0:
        raise ClusterError("thresholds must be positive")
    ids = sorted(updates)
    total = sum(float(weights[i]) for i in ids)
    if total <= 0:
        raise ClusterError("weights must sum to a positive value")
    acc = np.zeros_like(updates[ids[0]].values)
    for i in ids:
        acc += float(weights[i]) * updates[i].values
    agg_norm = float(np.linalg.norm(acc / total))
    max_norm = max(updates[i].norm() for i in ids)
    if max_norm < member_eps:
        decision = SplitDecision.STOP
    elif agg_norm < flat_eps:
        decision = SplitDecision.SPLIT
    else:
        decision = SplitDecision.NO_SPLIT
    return SplitCheck(decision, agg_norm, max_norm)


@dataclass(frozen=True)
class Bipartition:
    group_a: tuple[int, ...]
    group_b: tuple[int, ...]
    cross_similarity: float  # max similarity across the cut
    exact: bool


def _max_cross(values: np.ndarray, mask_a: np.ndarray) -> float:
    cross = values[np.ix_(mask_a, ~mask_a)]
    return float(cross.max())


def bipartition(sim: SimilarityMatrix) -> Bipartition:
    """Two-way split minimizing the largest cross-group similarity.

    Exhaustive for up to 15 members (member 0 pinned to group a, first
    optimum wins, so the result is deterministic). Larger clusters use the
    sign-of-anchor start plus single-move improvement and are flagged
    approximate.
    """
    n = len(sim.ids)
    if n < 2:
        raise ClusterError("cannot bipartition fewer than two members")
    ids = np.array(sim.ids)

    if n <= EXHAUSTIVE_LIMIT:
        best_mask: np.ndarray | None = None
        best_val = np.inf
        for code in range(2 ** (n - 1)):
            mask = np.zeros(n, dtype=bool)
            mask[0] = True
            for bit in range(n - 1):
                if code >> bit & 1:
                    mask[bit + 1] = True
            if mask.all():
                continue
            val = _max_cross(sim.values, mask)
            if val < best_val:
                best_val = val
                best_mask = mask
        assert best_mask is not None
        return Bipartition(
            tuple(int(i) for i in ids[best_mask]),
            tuple(int(i) for i in ids[~best_mask]),
            best_val,
            exact=True,
        )

    # Anchor on member 0: positive-similarity members start on its side.
    mask = sim.values[0] >= 0.0
    mask[0] = True
    if mask.all():
        mask[int(np.argmin(sim.values[0][1:])) + 1] = False  # least similar member leaves
    best_val = _max_cross(sim.values, mask)
    improved = True
    while improved:
        improved = False
        for k in range(n):
            trial = mask.copy()
            trial[k] = not trial[k]
            if trial.all() or not trial.any():
                continue
            val = _max_cross(sim.values, trial)
            if val < best_val - 1e-15:
                mask, best_val = trial, val
                improved = True
    if not mask[0]:
        mask = ~mask  # canonical orientation: member 0 in group a
    return Bipartition(
        tuple(int(i) for i in ids[mask]),
        tuple(int(i) for i in ids[~mask]),
        best_val,
        exact=False,
    )


def divergence_check(
    updates: Mapping[int, ParamVector],
    group_a: Sequence[int],
    group_b: Sequence[int],
    cross_similarity: float,
) -> bool:
    """Accept a proposed split only if members sit close to their own group.

    Each member's relative distance to its group-mean update must stay below
    sqrt((1 - s_max) / 2), where s_max is the largest cross-group similarity.
    Degenerate group means fail the check.
    """
    bound = float(np.sqrt(max(0.0, 1.0 - cross_similarity) / 2.0))
    for group in (group_a, group_b):
        if not group:
            raise ClusterError("divergence check needs two non-empty groups")
        mean = np.mean([updates[i].values for i in sorted(group)], axis=0)
        mean_norm = float(np.linalg.norm(mean))
        if mean_norm < DEGENERATE_NORM:
            log.warning("group mean update is degenerate; rejecting split")
            return False
        for i in group:
            gamma = float(np.linalg.norm(mean - updates[i].values)) / mean_norm
            if gamma >= bound:
                return False
    return True


def cross_model_groups(mean_updates: Mapping[int, ParamVector], threshold: float) -> dict[int, int]:
    """Group clusters whose mean updates agree (similarity >= threshold).

    Groups are connected components of the threshold graph, labeled 0..G-1
    in order of each component's smallest cluster id.
    """
    ids = sorted(mean_updates)
    if len(ids) < 2:
        return {i: k for k, i in enumerate(ids)}
    n = len(ids)
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a in range(n):
        for b in range(a + 1, n):
            if cosine_similarity(mean_updates[ids[a]], mean_updates[ids[b]]) >= threshold:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)

    label_of_root: dict[int, int] = {}
    out: dict[int, int] = {}
    for k in range(n):  # ascending id order fixes label assignment
        root = find(k)
        if root not in label_of_root:
            label_of_root[root] = len(label_of_root)
        out[ids[k]] = label_of_root[root]
    return out


@dataclass
class ClusterState:
    cluster_id: int
    edge: int
    members: tuple[int, ...]
    model: ParamVector
    status: Status = Status.ACTIVE
    parent: int | None = None
    created_round: int = 0
    stop_round: int | None = None
    split_round: int | None = None
    children: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if not self.members:
            raise ClusterError("a cluster needs at least one member")
        self.members = tuple(sorted(self.members))


class ClusterRegistry:
    """All clusters of a run, live and archived, plus the split lineage."""

    def __init__(self) -> None:
        self.clusters: dict[int, ClusterState] = {}
        self._next_id = 0

    def add_root(self, edge: int, members: Sequence[int], model: ParamVector) -> ClusterState:
        state = ClusterState(self._next_id, edge, tuple(members), model, created_round=0)
        self.clusters[state.cluster_id] = state
        self._next_id += 1
        return state

    def live(self) -> list[ClusterState]:
        """Clusters that currently train, ascending id."""
        return [c for _, c in sorted(self.clusters.items()) if c.children is None]

    def split(
        self,
        parent_id: int,
        round_index: int,
        group_a: Sequence[int],
        group_b: Sequence[int],
        model_a: ParamVector,
        model_b: ParamVector,
    ) -> tuple[ClusterState, ClusterState]:
        parent = self.clusters[parent_id]
        if parent.children is not None:
            raise ClusterError(f"cluster {parent_id} was already split")
        if sorted([*group_a, *group_b]) != sorted(parent.members):
            raise ClusterError("split groups must partition the parent's members")
        kids = []
        for members, model in ((group_a, model_a), (group_b, model_b)):
            child = ClusterState(
                self._next_id, parent.edge, tuple(members), model, parent=parent_id, created_round=round_index
            )
            self.clusters[child.cluster_id] = child
            self._next_id += 1
            kids.append(child)
        parent.children = (kids[0].cluster_id, kids[1].cluster_id)
        parent.split_round = round_index
        return kids[0], kids[1]

    def audit_partition(self, edge_workers: Mapping[int, Sequence[int]]) -> None:
        """Live clusters of each edge must partition that edge's workers."""
        for edge, workers in edge_workers.items():
            seen: list[int] = []
            for c in self.live():
                if c.edge == edge:
                    seen.extend(c.members)
            if sorted(seen) != sorted(workers):
                raise ClusterError(f"edge {edge}: clusters do not partition its workers")

    def lineage(self) -> dict:
        nodes = []
        for cid, c in sorted(self.clusters.items()):
            nodes.append(
                {
                    "cluster": cid,
                    "edge": c.edge,
                    "parent": c.parent,
                    "members": list(c.members),
                    "status": c.status.value,
                    "created_round": c.created_round,
                    "stop_round": c.stop_round,
                    "split_round": c.split_round,
                    "children": list(c.children) if c.children else None,
                }
            )
        return {"clusters": nodes}

    def lineage_json(self) -> str:
        return json.dumps(self.lineage(), indent=2, sort_keys=True)
