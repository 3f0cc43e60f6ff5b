"""Worker selection once a cluster has stopped refining.

Until its stopping point a cluster trains with every member. After that,
each round picks a small set of members per cluster: the fastest ones
(greedy), a rotating cursor (round_robin), or a seeded uniform draw
(random). Candidates that cannot meet the round deadline are filtered out
first; if nobody fits, the single fastest member is kept so the round can
still make progress.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

GREEDY = "greedy"
ROUND_ROBIN = "round_robin"
RANDOM = "random"
POLICIES = (GREEDY, ROUND_ROBIN, RANDOM)


class SchedulingError(ValueError):
    pass


@dataclass
class SelectionState:
    """Carries the rotation cursors, the seeded draw stream, and per-cluster
    selection tallies across rounds."""

    rng: np.random.Generator
    cursors: dict[int, int] = field(default_factory=dict)
    counts: dict[int, dict[int, int]] = field(default_factory=dict)
    fallback_rounds: int = 0

    def tally(self, cluster_id: int, chosen: Sequence[int]) -> None:
        bucket = self.counts.setdefault(cluster_id, {})
        for w in chosen:
            bucket[w] = bucket.get(w, 0) + 1


def feasibility_filter(
    latencies: Mapping[int, float], deadline: float, state: SelectionState | None = None
) -> tuple[list[int], bool]:
    """Candidates able to finish within the deadline, ascending id.

    An empty feasible set falls back to the single fastest candidate and
    reports the fallback, so a too-tight deadline slows the run instead of
    stalling it.
    """
    if not latencies:
        raise SchedulingError("no candidates to filter")
    if deadline <= 0:
        raise SchedulingError("deadline must be positive")
    feasible = [w for w in sorted(latencies) if latencies[w] <= deadline]
    if feasible:
        return feasible, False
    fastest = min(sorted(latencies), key=lambda w: (latencies[w], w))
    log.warning("no candidate meets deadline %.3g s; keeping fastest worker %d", deadline, fastest)
    if state is not None:
        state.fallback_rounds += 1
    return [fastest], True


def select(
    members: Sequence[int],
    policy: str,
    state: SelectionState,
    cluster_id: int,
    count: int,
    latencies: Mapping[int, float],
) -> list[int]:
    """Pick `count` members for this round under the given policy."""
    if policy not in POLICIES:
        raise SchedulingError(f"unknown selection policy {policy!r}")
    pool = sorted(members)
    if not pool:
        raise SchedulingError("cannot select from an empty cluster")
    if count < 1:
        raise SchedulingError("selection count must be >= 1")
    count = min(count, len(pool))

    if policy == GREEDY:
        chosen = sorted(pool, key=lambda w: (latencies[w], w))[:count]
    elif policy == ROUND_ROBIN:
        cursor = state.cursors.get(cluster_id, 0) % len(pool)
        chosen = [pool[(cursor + k) % len(pool)] for k in range(count)]
        state.cursors[cluster_id] = (cursor + count) % len(pool)
    else:
        idx = state.rng.choice(len(pool), size=count, replace=False)
        chosen = [pool[int(i)] for i in np.sort(idx)]

    chosen = sorted(chosen)
    state.tally(cluster_id, chosen)
    return chosen
