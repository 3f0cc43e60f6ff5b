"""Run configuration, scenario matrix, and profiles.

A config fully determines a run together with its seed. Field defaults are
the reference operating point of the system (200 workers over 3 edges, 10
local epochs, batch 32, 10 MHz band and so on); the desk profile shrinks
the population so a full scenario sweep stays in laptop territory. Every
field can be loaded from JSON and overridden from the command line.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import labeling, scheduling


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    """How one run combines labeling, prediction models, timing and selection."""

    name: str
    uses_clustering: bool
    uses_ssl: bool
    prediction_model: str | None  # "best" | "ensemble" | "global"
    timing: str | None  # labeling.SCHEME_*
    policy: str  # scheduling policy once clusters stop


def _integrated(name: str, model: str, timing: str, policy: str) -> Scenario:
    return Scenario(name, True, True, model, timing, policy)


SCENARIOS: dict[str, Scenario] = {
    s.name: s
    for s in [
        _integrated("BMSPGS", "best", labeling.SCHEME_SPLIT, scheduling.GREEDY),
        _integrated("BMSPRR", "best", labeling.SCHEME_SPLIT, scheduling.ROUND_ROBIN),
        _integrated("BMSTGS", "best", labeling.SCHEME_STOPPING, scheduling.GREEDY),
        _integrated("BMSTRR", "best", labeling.SCHEME_STOPPING, scheduling.ROUND_ROBIN),
        _integrated("EMSPGS", "ensemble", labeling.SCHEME_SPLIT, scheduling.GREEDY),
        _integrated("EMSPRR", "ensemble", labeling.SCHEME_SPLIT, scheduling.ROUND_ROBIN),
        _integrated("EMSTGS", "ensemble", labeling.SCHEME_STOPPING, scheduling.GREEDY),
        _integrated("EMSTRR", "ensemble", labeling.SCHEME_STOPPING, scheduling.ROUND_ROBIN),
        # Baselines: clustering without pseudo-labels, random selection, flat hierarchy.
        Scenario("labeled_CFL_greedy", True, False, None, None, scheduling.GREEDY),
        Scenario("labeled_CFL_rr", True, False, None, None, scheduling.ROUND_ROBIN),
        _integrated("CFSL_random", "best", labeling.SCHEME_SPLIT, scheduling.RANDOM),
        Scenario("HFSL", False, True, "global", labeling.SCHEME_ALWAYS, scheduling.GREEDY),
    ]
}


@dataclass
class SimConfig:
    # Population and schedule
    num_workers: int = 200
    num_edges: int = 3
    rounds: int = 200
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.01

    # Scenario under test
    scenario: str = "BMSPGS"
    seed: int = 0

    # Labeling
    conf_threshold: float = 0.7
    labeled_fraction: float = 0.10
    val_fraction: float = 0.2
    coverage_weight: float = 0.25
    latency_weight: float = 0.1
    ensemble_temp: float = 0.1
    utility_tradeoff: float = 1.0  # recorded in run metadata; not a control knob

    # Clustering thresholds. None means relative to the first round's
    # aggregate update norm: flat_eps = flat_eps_ratio * norm and
    # member_eps = member_eps_ratio * flat_eps.
    flat_eps: float | None = None
    member_eps: float | None = None
    flat_eps_ratio: float = 0.4
    member_eps_ratio: float = 1.6
    # Scale-free splitting backstop: a cluster whose mean update cancels to
    # below this fraction of its largest member norm (members still above
    # member_eps) is treated as flat even if the absolute threshold misses,
    # e.g. after pseudo-label injection has inflated all norms. None disables.
    split_cancel_ratio: float | None = 0.3
    tau_cloud: float = 0.5
    divergence_check: bool = True

    # Selection
    select_count: int = 1
    deadline_slack: float = 1.1
    deadline_override_s: float | None = None

    # Data
    feature_dim: int = 16
    num_classes: int = 4
    classes_per_worker: int = 2
    shared_centers: int = 0
    hard_centers: int = 0
    num_distributions: int = 2
    samples_per_worker: int = 200
    class_separation: float = 3.0
    hard_separation: float = 1.6
    class_spread: float = 1.0
    labeled_classes: int | None = None
    labeled_block: int | None = None
    labeled_anchor: bool = False
    labeled_floor: int = 0
    test_fraction: float = 0.2

    # Model
    hidden: tuple[int, ...] = (32, 32)

    # Radio and hardware
    bandwidth_hz: float = 1.0e7
    noise_w: float = 1.0e-8
    cycles_per_sample: float = 20.0
    capacitance: float = 2.0e-28
    cpu_hz_range: tuple[float, float] = (1.0e9, 9.0e9)
    tx_power_dbm_range: tuple[float, float] = (-10.0, 20.0)
    distance_range_m: tuple[float, float] = (2.0, 50.0)
    pathloss_ref_gain_db: float = -35.0
    pathloss_ref_distance_m: float = 2.0
    pathloss_exponent: float = 4.0
    channel_sigma_db: float = 0.0  # per-round log-normal shadowing; 0 disables
    edge_uplink_bps: float = 1.0e8
    edge_tx_power_w: float = 1.0

    # Run limits and artifacts
    time_budget_s: float | None = None
    checkpoint_every: int = 1

    @staticmethod
    def desk() -> "SimConfig":
        """Small profile used by tests and the acceptance suite.

        Two distributions with disjoint class pairs, one annotated class per
        edge block plus a single-shot floor on the other: each edge can only
        learn its unannotated class well by importing pseudo-labels produced
        on the other edge, which is the regime the semi-supervised scenarios
        are built for.
        """
        return SimConfig(
            num_workers=20,
            num_edges=2,
            rounds=40,
            feature_dim=16,
            num_classes=4,
            classes_per_worker=2,
            shared_centers=0,
            class_separation=3.2,
            class_spread=1.15,
            samples_per_worker=200,
            labeled_classes=1,
            labeled_block=5,
            labeled_floor=1,
            epochs=15,
            lr=0.08,
        )

    def copy(self, **changes: Any) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose one of {sorted(SCENARIOS)}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.num_workers < 1 or not 1 <= self.num_edges <= self.num_workers:
            raise ConfigError("need 1 <= num_edges <= num_workers")
        if self.rounds < 0:
            raise ConfigError("rounds cannot be negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr cannot be negative")
        if not 0.0 < self.conf_threshold <= 1.0:
            raise ConfigError("conf_threshold must be in (0, 1]")
        if not 0.0 < self.labeled_fraction < 1.0:
            raise ConfigError("labeled_fraction must be in (0, 1)")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in (0, 1)")
        if self.classes_per_worker > self.num_classes:
            raise ConfigError("classes_per_worker cannot exceed num_classes")
        if self.labeled_classes is not None and not (
            1 <= self.labeled_classes <= self.classes_per_worker
        ):
            raise ConfigError("labeled_classes must be in [1, classes_per_worker]")
        if self.labeled_block is not None and self.labeled_block < 1:
            raise ConfigError("labeled_block must be >= 1")
        if self.labeled_floor < 0:
            raise ConfigError("labeled_floor must be >= 0")
        if self.shared_centers < 0 or self.hard_centers < 0:
            raise ConfigError("center counts cannot be negative")
        if self.shared_centers + self.hard_centers > self.classes_per_worker:
            raise ConfigError("shared plus hard centers cannot exceed classes_per_worker")
        if self.hard_separation <= 0:
            raise ConfigError("hard_separation must be positive")
        if self.num_workers < self.num_distributions:
            raise ConfigError("need at least one worker per distribution")
        for name in ("flat_eps", "member_eps"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ConfigError(f"{name} must be positive when given")
        if self.flat_eps_ratio <= 0 or self.member_eps_ratio <= 0:
            raise ConfigError("threshold ratios must be positive")
        if self.split_cancel_ratio is not None and not 0.0 < self.split_cancel_ratio < 1.0:
            raise ConfigError("split_cancel_ratio must be in (0, 1) when given")
        if not -1.0 <= self.tau_cloud <= 1.0:
            raise ConfigError("tau_cloud must be in [-1, 1]")
        if self.select_count < 1:
            raise ConfigError("select_count must be >= 1")
        if self.deadline_slack < 1.0:
            raise ConfigError("deadline_slack below 1 would exclude the slowest candidate by construction")
        if self.deadline_override_s is not None and self.deadline_override_s <= 0:
            raise ConfigError("deadline_override_s must be positive when given")
        for name in (
            "bandwidth_hz",
            "noise_w",
            "cycles_per_sample",
            "capacitance",
            "edge_uplink_bps",
            "edge_tx_power_w",
            "pathloss_ref_distance_m",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("cpu_hz_range", "tx_power_dbm_range", "distance_range_m"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} must satisfy low <= high")
        if self.cpu_hz_range[0] <= 0 or self.distance_range_m[0] <= 0:
            raise ConfigError("cpu_hz and distance ranges must be positive")
        if self.channel_sigma_db < 0:
            raise ConfigError("channel_sigma_db cannot be negative")
        if self.time_budget_s is not None and self.time_budget_s <= 0:
            raise ConfigError("time_budget_s must be positive when given")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if len(self.hidden) < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError("hidden must name at least one positive layer width")

    def resolved_scenario(self) -> Scenario:
        return SCENARIOS[self.scenario]

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "SimConfig":
        known = {f.name: f for f in dataclasses.fields(SimConfig)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config fields: {unknown}")
        coerced = {k: _coerce(known[k], v) for k, v in data.items()}
        cfg = SimConfig(**coerced)
        cfg.validate()
        return cfg

    @staticmethod
    def from_json_file(path: Path | str) -> "SimConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return SimConfig.from_dict(data)

    def apply_overrides(self, pairs: list[str]) -> "SimConfig":
        """Apply key=value strings; values are parsed as JSON when possible."""
        data = dataclasses.asdict(self)
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} must look like key=value")
            key, raw = pair.split("=", 1)
            if key not in data:
                raise ConfigError(f"unknown config field {key!r}")
            try:
                data[key] = json.loads(raw)
            except json.JSONDecodeError:
                data[key] = raw  # bare strings, e.g. scenario names
        return SimConfig.from_dict(data)


def _coerce(f: dataclasses.Field, value: Any):
    # JSON has no tuples; accept lists for the tuple-typed fields.
    if isinstance(value, list):
        return tuple(value)
    return value
