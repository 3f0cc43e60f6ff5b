"""Computation and communication costs of one training round.

Workers pay CPU time and dynamic switching energy per trained sample, then
upload their model over an orthogonal share of the edge's band. Edges relay
to the cloud on a fixed-rate backhaul. A round lasts as long as its slowest
edge, and an edge as long as its slowest scheduled worker plus the backhaul
hop; energies add up across everyone involved.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

log = logging.getLogger(__name__)


class CostError(ValueError):
    pass


@dataclass(frozen=True)
class WorkerHardware:
    cpu_hz: float
    tx_power_w: float
    capacitance: float  # effective switched capacitance of the CPU
    cycles_per_sample: float

    def __post_init__(self) -> None:
        if min(self.cpu_hz, self.tx_power_w, self.capacitance, self.cycles_per_sample) <= 0:
            raise CostError("hardware parameters must be positive")


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def comp_time(n_samples: int, cycles_per_sample: float, cpu_hz: float, epochs: int) -> float:
    """Seconds of local training: epochs * samples * cycles / clock."""
    if n_samples < 0 or epochs < 0:
        raise CostError("sample and epoch counts cannot be negative")
    if cycles_per_sample <= 0 or cpu_hz <= 0:
        raise CostError("cycles_per_sample and cpu_hz must be positive")
    return epochs * n_samples * cycles_per_sample / cpu_hz


def comp_energy(
    n_samples: int, cycles_per_sample: float, cpu_hz: float, epochs: int, capacitance: float
) -> float:
    """Joules of local training: (capacitance / 2) * epochs * samples * cycles * clock^2."""
    if capacitance <= 0:
        raise CostError("capacitance must be positive")
    return (capacitance / 2.0) * epochs * n_samples * cycles_per_sample * cpu_hz**2


def channel_gain(
    distance_m: float, ref_gain_db: float = -35.0, ref_distance_m: float = 2.0, exponent: float = 4.0
) -> float:
    """Linear power gain of the worker-to-edge link.

    Log-distance path loss anchored at a reference distance; distances
    inside the reference are clamped to it.
    """
    if distance_m <= 0 or ref_distance_m <= 0:
        raise CostError("distances must be positive")
    if distance_m < ref_distance_m:
        log.warning("distance %.3g m inside reference %.3g m; clamping", distance_m, ref_distance_m)
        distance_m = ref_distance_m
    return db_to_linear(ref_gain_db) * (ref_distance_m / distance_m) ** exponent


def data_rate(share: float, bandwidth_hz: float, gain: float, tx_power_w: float, noise_w: float) -> float:
    """Bits per second on an orthogonal sub-band: share * B * log2(1 + SNR)."""
    if not 0.0 < share <= 1.0:
        raise CostError("bandwidth share must be in (0, 1]")
    if min(bandwidth_hz, gain, tx_power_w, noise_w) <= 0:
        raise CostError("bandwidth, gain, power and noise must be positive")
    return share * bandwidth_hz * math.log2(1.0 + gain * tx_power_w / noise_w)


def comm_time_energy(size_bits: float, rate_bps: float, tx_power_w: float) -> tuple[float, float]:
    """Upload time and the energy it burns at constant transmit power."""
    if size_bits < 0:
        raise CostError("payload size cannot be negative")
    if rate_bps <= 0 or tx_power_w <= 0:
        raise CostError("rate and transmit power must be positive")
    t = size_bits / rate_bps
    return t, t * tx_power_w


def model_bits(param_count: int, bits_per_param: int = 32) -> int:
    """Over-the-air size of one model upload."""
    if param_count < 1 or bits_per_param < 1:
        raise CostError("param_count and bits_per_param must be positive")
    return param_count * bits_per_param


@dataclass(frozen=True)
class WorkerRoundCost:
    worker: int
    comp_s: float
    comm_s: float
    comp_j: float
    comm_j: float

    @property
    def time_s(self) -> float:
        return self.comp_s + self.comm_s

    @property
    def energy_j(self) -> float:
        return self.comp_j + self.comm_j


@dataclass(frozen=True)
class EdgeRoundCost:
    edge: int
    workers: tuple[WorkerRoundCost, ...]
    backhaul_s: float
    backhaul_j: float
    span_s: float  # slowest scheduled worker plus the backhaul hop
    energy_j: float


@dataclass(frozen=True)
class CostReport:
    edges: tuple[EdgeRoundCost, ...]
    round_time_s: float
    round_energy_j: float


def round_costs(
    edge_workers: Mapping[int, Sequence[WorkerRoundCost]],
    backhaul_s: Mapping[int, float],
    backhaul_j: Mapping[int, float],
) -> CostReport:
    """Fold per-worker costs into edge and round totals.

    The report re-derives its own totals from the leaves and refuses to
    return if they disagree, so a reported round can always be trusted.
    """
    edges = []
    for edge in sorted(edge_workers):
        workers = tuple(edge_workers[edge])
        bh_s = float(backhaul_s[edge])
        bh_j = float(backhaul_j[edge])
        if bh_s < 0 or bh_j < 0:
            raise CostError("backhaul costs cannot be negative")
        slowest = max((w.time_s for w in workers), default=0.0)
        energy = sum(w.energy_j for w in workers) + bh_j
        edges.append(EdgeRoundCost(edge, workers, bh_s, bh_j, slowest + bh_s, energy))
    round_time = max((e.span_s for e in edges), default=0.0)
    round_energy = sum(e.energy_j for e in edges)

    # Self-audit: recompute from the leaves along an independent path.
    check_energy = sum(w.comp_j + w.comm_j for e in edges for w in e.workers) + sum(
        e.backhaul_j for e in edges
    )
    check_time = 0.0
    for e in edges:
        worst = 0.0
        for w in e.workers:
            worst = max(worst, w.comp_s + w.comm_s)
        check_time = max(check_time, worst + e.backhaul_s)
    if not (math.isclose(check_energy, round_energy, rel_tol=1e-12, abs_tol=1e-15)
            and math.isclose(check_time, round_time, rel_tol=1e-12, abs_tol=1e-15)):
        raise CostError("cost aggregation failed self-audit")
    return CostReport(tuple(edges), round_time, round_energy)
