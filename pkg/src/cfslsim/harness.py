"""End-to-end simulation runs.

One run takes a config plus seed and plays the whole protocol: synthetic
data goes out to workers, clusters train/split/stop, pseudo-labels get
injected, selection thins participation after stopping points, and every
round's accuracy, time, and energy land in fixed-order CSV rows. Identical
config and seed reproduce the artifacts byte for byte.

Constraint audits run inside the loop and raise AuditError on the first
violation, so a completed run certifies that deadlines, bandwidth shares,
choice weights, and the worker-edge association all held in every round.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import clustering, datagen, hfl, labeling, nnmodel, radio, scheduling
from .config import ConfigError, Scenario, SimConfig
from .streams import BATCH, CHANNEL, HARDWARE, INIT, SELECTION, substream

log = logging.getLogger(__name__)

METRICS_COLUMNS = [
    "round",
    "clusters",
    "stopped",
    "participants",
    "acc_min",
    "acc_mean",
    "acc_max",
    "label_acc",
    "label_cov",
    "pseudo_count",
    "round_time_s",
    "round_energy_j",
    "cum_time_s",
    "cum_energy_j",
]

SELECTION_COLUMNS = ["round", "cluster", "policy", "selected", "latencies"]

AUDIT_COLUMNS = ["round", "worker", "sample_id", "label", "confidence", "producer", "correct"]


class AuditError(RuntimeError):
    """A per-round constraint was violated; the run is not trustworthy."""


class RunError(RuntimeError):
    pass


@dataclass
class WorkerState:
    worker_id: int
    edge: int
    hardware: radio.WorkerHardware
    distance_m: float
    gain: float
    dataset: datagen.WorkerDataset
    distribution_id: int
    x_labeled: np.ndarray
    y_labeled: np.ndarray
    val_samples: list[datagen.Sample]
    x_unlabeled: np.ndarray
    unlabeled_ids: list[int]
    x_test: np.ndarray
    y_test: np.ndarray

    def effective_count(self) -> int:
        return len(self.y_labeled) + len(self.dataset.pseudo)

    def training_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Labeled plus pseudo-labeled samples with balancing weights.

        Each side is weighted so the full-pool objective is the sum of the
        two per-set mean losses.
        """
        n_lab = len(self.y_labeled)
        pseudo_ids = sorted(self.dataset.pseudo)
        n_ps = len(pseudo_ids)
        if n_ps == 0:
            return self.x_labeled, self.y_labeled, np.ones(n_lab)
        row_of = {sid: k for k, sid in enumerate(self.unlabeled_ids)}
        rows = [row_of[sid] for sid in pseudo_ids]
        x = np.vstack([self.x_labeled, self.x_unlabeled[rows]])
        y = np.concatenate(
            [self.y_labeled, [self.dataset.pseudo[sid].label for sid in pseudo_ids]]
        ).astype(np.int64)
        d_eff = n_lab + n_ps
        w = np.concatenate([np.full(n_lab, d_eff / n_lab), np.full(n_ps, d_eff / n_ps)])
        return x, y, w


@dataclass
class RoundMetrics:
    round_index: int
    clusters: int
    stopped: int
    participants: int
    acc_min: float
    acc_mean: float
    acc_max: float
    label_acc: float | None
    label_cov: float
    pseudo_count: int
    round_time_s: float
    round_energy_j: float
    cum_time_s: float
    cum_energy_j: float

    def row(self) -> list[str]:
        def fmt(v) -> str:
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)

        return [
            fmt(self.round_index),
            fmt(self.clusters),
            fmt(self.stopped),
            fmt(self.participants),
            fmt(self.acc_min),
            fmt(self.acc_mean),
            fmt(self.acc_max),
            fmt(self.label_acc),
            fmt(self.label_cov),
            fmt(self.pseudo_count),
            fmt(self.round_time_s),
            fmt(self.round_energy_j),
            fmt(self.cum_time_s),
            fmt(self.cum_energy_j),
        ]


@dataclass
class RunResult:
    config: SimConfig
    metrics: list[RoundMetrics]
    lineage: dict
    audit_checks: int
    fallback_rounds: int
    splits: int
    budget_stopped: bool
    selection_rows: list[list[str]]
    pseudo_rows: int
    selection_counts: dict[int, dict[int, int]]
    out_dir: Path | None

    @property
    def final(self) -> RoundMetrics | None:
        return self.metrics[-1] if self.metrics else None

    def mean_round_energy(self) -> float:
        if not self.metrics:
            return 0.0
        return float(np.mean([m.round_energy_j for m in self.metrics]))

    def mean_round_time(self) -> float:
        if not self.metrics:
            return 0.0
        return float(np.mean([m.round_time_s for m in self.metrics]))


def _build_workers(cfg: SimConfig, topo: hfl.Topology) -> list[WorkerState]:
    dspec = datagen.DistributionSpec(
        num_distributions=cfg.num_distributions,
        num_classes=cfg.num_classes,
        feature_dim=cfg.feature_dim,
        samples_per_worker=cfg.samples_per_worker,
        labeled_fraction=cfg.labeled_fraction,
        classes_per_worker=cfg.classes_per_worker,
        shared_centers=cfg.shared_centers,
        hard_centers=cfg.hard_centers,
        class_separation=cfg.class_separation,
        hard_separation=cfg.hard_separation,
        class_spread=cfg.class_spread,
        labeled_classes=cfg.labeled_classes,
        labeled_block=cfg.labeled_block,
        labeled_anchor=cfg.labeled_anchor,
        labeled_floor=cfg.labeled_floor,
    )
    generated = datagen.generate(dspec, cfg.num_workers, cfg.seed, cfg.test_fraction)
    workers = []
    for gw in generated:
        ds = gw.dataset
        i = ds.worker_id
        hw_rng = substream(cfg.seed, HARDWARE, i)
        cpu = hw_rng.uniform(*cfg.cpu_hz_range)
        tx_w = radio.dbm_to_watts(hw_rng.uniform(*cfg.tx_power_dbm_range))
        dist = hw_rng.uniform(*cfg.distance_range_m)
        gain = radio.channel_gain(
            dist, cfg.pathloss_ref_gain_db, cfg.pathloss_ref_distance_m, cfg.pathloss_exponent
        )
        train_lab, val = labeling.validation_split(ds.labeled, cfg.val_fraction)
        workers.append(
            WorkerState(
                worker_id=i,
                edge=topo.edge_of(i),
                hardware=radio.WorkerHardware(cpu, tx_w, cfg.capacitance, cfg.cycles_per_sample),
                distance_m=dist,
                gain=gain,
                dataset=ds,
                distribution_id=gw.distribution_id,
                x_labeled=np.stack([s.features for s in train_lab]),
                y_labeled=np.array([s.label for s in train_lab], dtype=np.int64),
                val_samples=val,
                x_unlabeled=(
                    np.stack([u.features for u in ds.unlabeled])
                    if ds.unlabeled
                    else np.zeros((0, cfg.feature_dim))
                ),
                unlabeled_ids=[u.sample_id for u in ds.unlabeled],
                x_test=(
                    np.stack([s.features for s in gw.test])
                    if gw.test
                    else np.zeros((0, cfg.feature_dim))
                ),
                y_test=np.array([s.label for s in gw.test], dtype=np.int64),
            )
        )
    return workers


@dataclass
class _LabelingModel:
    model_id: str
    params: nnmodel.ParamVector
    home_edges: frozenset[int]


class _Auditor:
    """In-loop constraint checks. Any failure kills the run."""

    def __init__(self) -> None:
        self.checks = 0

    def deadline(self, round_index: int, worker: int, latency: float, deadline: float, exempt: bool) -> None:
        self.checks += 1
        if exempt:
            return
        if latency > deadline * (1.0 + 1e-9):
            raise AuditError(
                f"round {round_index}: worker {worker} latency {latency:.6g}s exceeds deadline {deadline:.6g}s"
            )

    def bandwidth(self, round_index: int, edge: int, shares: Sequence[float]) -> None:
        self.checks += 1
        total = float(np.sum(shares))
        if np.any(np.asarray(shares) <= 0) or total > 1.0 + 1e-9:
            raise AuditError(f"round {round_index}: edge {edge} bandwidth shares sum to {total:.6g}")

    def choice(self, round_index: int, worker: int, choice: labeling.ModelChoice) -> None:
        # Construction already validates; re-check the sum so the audit
        # stays meaningful if ModelChoice ever loosens.
        self.checks += 1
        s = float(np.sum(choice.weights))
        if not np.isclose(s, 1.0, atol=1e-9):
            raise AuditError(f"round {round_index}: worker {worker} model weights sum to {s:.6g}")

    def association(self, round_index: int, ok: bool, detail: str = "") -> None:
        self.checks += 1
        if not ok:
            raise AuditError(f"round {round_index}: worker-edge association broken {detail}")


def run(cfg: SimConfig, out_dir: Path | str | None = None) -> RunResult:
    """Simulate one scenario end to end and (optionally) write artifacts."""
    cfg.validate()
    sc = cfg.resolved_scenario()
    arch = nnmodel.Architecture(cfg.feature_dim, tuple(cfg.hidden), cfg.num_classes)
    sigma_bits = radio.model_bits(arch.param_count())
    topo = hfl.Topology.contiguous(cfg.num_workers, cfg.num_edges)
    workers = _build_workers(cfg, topo)
    by_id = {w.worker_id: w for w in workers}

    theta0 = nnmodel.init_params(arch, substream(cfg.seed, INIT))
    registry = clustering.ClusterRegistry()
    for edge in range(cfg.num_edges):
        registry.add_root(edge, topo.workers_of(edge), theta0.copy())
    global_model = theta0.copy()
    global_phase = True  # all clusters track the cloud model until the first split or stop
    split_occurred = False
    splits = 0

    flat_eps = cfg.flat_eps
    member_eps = cfg.member_eps
    eps_anchor_round = 0  # round whose statistics set the default thresholds

    sel_state = scheduling.SelectionState(rng=substream(cfg.seed, SELECTION))
    auditor = _Auditor()
    metrics: list[RoundMetrics] = []
    selection_rows: list[list[str]] = []
    audit_rows: list[list[str]] = []
    cum_time = 0.0
    cum_energy = 0.0
    budget_stopped = False
    labeling_models: list[_LabelingModel] = []
    if not sc.uses_clustering:
        labeling_models = [_LabelingModel("global", global_model, frozenset(range(cfg.num_edges)))]

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "checkpoints").mkdir(exist_ok=True)
        (out_path / "config.json").write_text(cfg.to_json() + "\n")

    total_unlabeled = sum(len(w.unlabeled_ids) for w in workers)

    for r in range(1, cfg.rounds + 1):
        live = registry.live()
        cluster_of_worker = {w: c.cluster_id for c in live for w in c.members}

        # Channel shadowing for the round (defaults off).
        if cfg.channel_sigma_db > 0:
            shadow = {
                w.worker_id: radio.db_to_linear(
                    substream(cfg.seed, CHANNEL, r, w.worker_id).normal(0.0, cfg.channel_sigma_db)
                )
                for w in workers
            }
        else:
            shadow = {w.worker_id: 1.0 for w in workers}

        # --- Deadlines over the full candidate pool (provisional equal shares).
        candidates_of_edge: dict[int, list[int]] = {e: [] for e in range(cfg.num_edges)}
        for c in live:
            for w in c.members:
                candidates_of_edge[by_id[w].edge].append(w)
        latency: dict[int, float] = {}
        for edge, cand in candidates_of_edge.items():
            if not cand:
                continue
            share = 1.0 / len(cand)
            for w in cand:
                ws = by_id[w]
                t_cmp = radio.comp_time(
                    ws.effective_count(), cfg.cycles_per_sample, ws.hardware.cpu_hz, cfg.epochs
                )
                rate = radio.data_rate(
                    share, cfg.bandwidth_hz, ws.gain * shadow[w], ws.hardware.tx_power_w, cfg.noise_w
                )
                t_com, _ = radio.comm_time_energy(sigma_bits, rate, ws.hardware.tx_power_w)
                latency[w] = t_cmp + t_com
        deadline_of_edge = {}
        for edge, cand in candidates_of_edge.items():
            if not cand:
                continue
            deadline_of_edge[edge] = (
                cfg.deadline_override_s
                if cfg.deadline_override_s is not None
                else cfg.deadline_slack * max(latency[w] for w in cand)
            )

        # --- Participation: everyone until a cluster stops, then the policy.
        participants: dict[int, list[int]] = {}
        fallback_workers: set[int] = set()
        for c in live:
            if sc.uses_clustering and c.status is clustering.Status.STOPPED:
                edge_deadline = deadline_of_edge[c.edge]
                feasible, fell_back = scheduling.feasibility_filter(
                    {w: latency[w] for w in c.members}, edge_deadline, sel_state
                )
                chosen = scheduling.select(
                    feasible, sc.policy, sel_state, c.cluster_id, cfg.select_count, latency
                )
                if fell_back:
                    fallback_workers.update(chosen)
                participants[c.cluster_id] = chosen
                selection_rows.append(
                    [
                        str(r),
                        str(c.cluster_id),
                        sc.policy,
                        ";".join(str(w) for w in chosen),
                        ";".join(repr(latency[w]) for w in chosen),
                    ]
                )
            else:
                participants[c.cluster_id] = list(c.members)
                selection_rows.append(
                    [
                        str(r),
                        str(c.cluster_id),
                        "full",
                        ";".join(str(w) for w in c.members),
                        ";".join(repr(latency[w]) for w in c.members),
                    ]
                )

        # --- Local training.
        updates: dict[int, dict[int, nnmodel.ParamVector]] = {}
        trained_size: dict[int, int] = {}
        for c in live:
            cluster_updates: dict[int, nnmodel.ParamVector] = {}
            for w in sorted(participants[c.cluster_id]):
                ws = by_id[w]
                x, y, sw = ws.training_arrays()
                delta, _ = nnmodel.local_train(
                    c.model,
                    arch,
                    x,
                    y,
                    sw,
                    cfg.epochs,
                    cfg.batch_size,
                    cfg.lr,
                    substream(cfg.seed, BATCH, w, r),
                )
                cluster_updates[w] = delta
                trained_size[w] = len(y)
            updates[c.cluster_id] = cluster_updates

        # Default thresholds anchor on the first round's population-mean
        # update norm: early training descends in a direction common to all
        # workers, so the initial mean is large; once only distribution
        # conflicts remain, member updates cancel and the mean falls well
        # below that anchor.  The anchor round itself never triggers a
        # decision; the conditions apply from the next round on.
        if flat_eps is None or member_eps is None:
            all_updates = {w: u for cu in updates.values() for w, u in cu.items()}
            all_weights = {w: float(trained_size[w]) for w in all_updates}
            first = clustering.check_split(all_updates, all_weights, 1.0, 1.0)
            if flat_eps is None:
                flat_eps = cfg.flat_eps_ratio * first.aggregate_norm
            if member_eps is None:
                member_eps = cfg.member_eps_ratio * flat_eps
            if flat_eps <= 0:
                raise RunError("first-round updates are degenerate; set flat_eps explicitly")
            eps_anchor_round = r
            log.info("thresholds: flat_eps=%.6g member_eps=%.6g", flat_eps, member_eps)

        # --- Aggregate, split, stop.
        mean_updates: dict[int, nnmodel.ParamVector] = {}
        for c in live:
            cu = updates[c.cluster_id]
            weights = {w: float(trained_size[w]) for w in cu}
            delta = hfl.edge_aggregate(cu, weights)
            if not (sc.uses_clustering and c.status is not clustering.Status.STOPPED):
                c.model = c.model + delta
                mean_updates[c.cluster_id] = delta
                continue

            # Pseudo-label injection grows training sets mid-run, which
            # inflates every member's update norm together (more optimizer
            # steps per epoch) and can keep a genuinely cancelling cluster
            # above the absolute flatness threshold forever. The effective
            # threshold therefore also tracks the cluster's own update scale:
            # a mean that cancels to a small fraction of the largest member
            # norm reads as flat regardless of absolute size.
            eff_flat = flat_eps
            if cfg.split_cancel_ratio is not None:
                biggest = max(u.norm() for u in cu.values())
                eff_flat = max(flat_eps, cfg.split_cancel_ratio * biggest)
            chk = clustering.check_split(cu, weights, eff_flat, member_eps)
            if r <= eps_anchor_round:
                chk = replace(chk, decision=clustering.SplitDecision.NO_SPLIT)
            if chk.decision is clustering.SplitDecision.STOP:
                c.model = c.model + delta
                c.status = clustering.Status.STOPPED
                c.stop_round = r
                mean_updates[c.cluster_id] = delta
                global_phase = False
                log.info("round %d: cluster %d stopped (max norm %.4g)", r, c.cluster_id, chk.max_member_norm)
            elif chk.decision is clustering.SplitDecision.SPLIT and len(c.members) >= 2:
                sim = clustering.similarity_matrix(cu)
                bp = clustering.bipartition(sim)
                ok = (
                    clustering.divergence_check(cu, bp.group_a, bp.group_b, bp.cross_similarity)
                    if cfg.divergence_check
                    else True
                )
                if ok:
                    delta_a = hfl.edge_aggregate(
                        {w: cu[w] for w in bp.group_a}, {w: weights[w] for w in bp.group_a}
                    )
                    delta_b = hfl.edge_aggregate(
                        {w: cu[w] for w in bp.group_b}, {w: weights[w] for w in bp.group_b}
                    )
                    kid_a, kid_b = registry.split(
                        c.cluster_id, r, bp.group_a, bp.group_b, c.model + delta_a, c.model + delta_b
                    )
                    mean_updates[kid_a.cluster_id] = delta_a
                    mean_updates[kid_b.cluster_id] = delta_b
                    split_occurred = True
                    splits += 1
                    global_phase = False
                    log.info(
                        "round %d: cluster %d split into %s / %s (cross sim %.4g, exact=%s)",
                        r, c.cluster_id, bp.group_a, bp.group_b, bp.cross_similarity, bp.exact,
                    )
                else:
                    c.status = clustering.Status.STATIONARY
                    c.model = c.model + delta
                    mean_updates[c.cluster_id] = delta
            else:
                if c.status is clustering.Status.STATIONARY and chk.decision is clustering.SplitDecision.NO_SPLIT:
                    c.status = clustering.Status.ACTIVE
                c.model = c.model + delta
                mean_updates[c.cluster_id] = delta

        live = registry.live()  # refresh after any splits

        # --- Cloud tier: one shared model until specialization begins.
        cluster_data = {
            c.cluster_id: float(sum(by_id[w].effective_count() for w in c.members)) for c in live
        }
        global_model = hfl.cloud_aggregate({c.cluster_id: c.model for c in live}, cluster_data)
        if global_phase:
            for c in live:
                c.model = global_model.copy()

        # --- Candidate models for labeling.
        if sc.uses_ssl:
            if not sc.uses_clustering:
                labeling_models = [
                    _LabelingModel("global", global_model, frozenset(range(cfg.num_edges)))
                ]
            elif not global_phase:
                # Only split-born or converged clusters hold models that are
                # actually specialized to their members.  A root cluster that
                # has not split yet still trains a mixed compromise; merging
                # it into a labeling group would blend away exactly the
                # distinctions labeling depends on.  Roots stand in only
                # while no specialized model exists anywhere.
                cluster_by_id = {c.cluster_id: c for c in live}
                eligible = {
                    cid: upd
                    for cid, upd in mean_updates.items()
                    if cluster_by_id[cid].parent is not None
                    or cluster_by_id[cid].status is clustering.Status.STOPPED
                }
                groups = clustering.cross_model_groups(
                    eligible if eligible else mean_updates, cfg.tau_cloud
                )
                members_of_group: dict[int, list[int]] = {}
                for cid in sorted(groups):
                    members_of_group.setdefault(groups[cid], []).append(cid)
                labeling_models = []
                for g in sorted(members_of_group):
                    cids = sorted(members_of_group[g])
                    merged = hfl.weighted_mean(
                        [(cluster_by_id[cid].model, cluster_data[cid]) for cid in cids]
                    )
                    edges = frozenset(cluster_by_id[cid].edge for cid in cids)
                    labeling_models.append(_LabelingModel(f"g{g}", merged, edges))

        # --- Pseudo-labeling.
        new_rows = 0
        if sc.uses_ssl and labeling_models and (not sc.uses_clustering or not global_phase):
            for ws in workers:
                cid = cluster_of_worker.get(ws.worker_id)
                stopped = (
                    cid is not None
                    and registry.clusters[cid].status is clustering.Status.STOPPED
                )
                if not labeling.prediction_trigger(
                    sc.timing, split_occurred=split_occurred, cluster_stopped=stopped
                ):
                    continue
                if len(ws.unlabeled_ids) == 0:
                    continue
                probs_all = [
                    nnmodel.forward(m.params, arch, ws.x_unlabeled) for m in labeling_models
                ]
                lat_terms = []
                for m in labeling_models:
                    infer = len(ws.unlabeled_ids) * cfg.cycles_per_sample / ws.hardware.cpu_hz
                    fetch = sigma_bits / cfg.edge_uplink_bps if ws.edge not in m.home_edges else 0.0
                    lat_terms.append(infer + fetch)
                lat_max = max(lat_terms)
                utilities = []
                for m, lat in zip(labeling_models, lat_terms):
                    rep = labeling.model_utility(
                        m.params,
                        arch,
                        ws.val_samples,
                        ws.x_unlabeled,
                        cfg.conf_threshold,
                        cfg.coverage_weight,
                        cfg.latency_weight,
                        lat / lat_max if lat_max > 0 else 0.0,
                    )
                    utilities.append(rep.value)
                if sc.prediction_model == "ensemble":
                    choice = labeling.ensemble_weights(utilities, cfg.ensemble_temp)
                    probs = labeling.ensemble_predict(probs_all, choice.weights)
                    producer = "ensemble"
                else:
                    choice = labeling.select_best_model(utilities)
                    probs = probs_all[choice.chosen]
                    producer = labeling_models[choice.chosen].model_id
                auditor.choice(r, ws.worker_id, choice)
                accepted = labeling.confident_labels(
                    probs, ws.unlabeled_ids, cfg.conf_threshold, producer, r
                )
                labeling.inject(ws.dataset, accepted)
                for pl in accepted:
                    correct = int(pl.label == ws.dataset.oracle_label(pl.sample_id))
                    audit_rows.append(
                        [
                            str(r),
                            str(ws.worker_id),
                            str(pl.sample_id),
                            str(pl.label),
                            repr(pl.confidence),
                            pl.model_id,
                            str(correct),
                        ]
                    )
                    new_rows += 1

        # --- Costs with final equal shares per edge.
        edge_participants: dict[int, list[int]] = {e: [] for e in range(cfg.num_edges)}
        for cid, chosen in participants.items():
            for w in chosen:
                edge_participants[by_id[w].edge].append(w)
        edge_costs: dict[int, list[radio.WorkerRoundCost]] = {}
        backhaul_s: dict[int, float] = {}
        backhaul_j: dict[int, float] = {}
        for edge in range(cfg.num_edges):
            group = sorted(edge_participants[edge])
            if not group:
                continue
            share = 1.0 / len(group)
            auditor.bandwidth(r, edge, [share] * len(group))
            costs = []
            for w in group:
                ws = by_id[w]
                t_cmp = radio.comp_time(
                    trained_size[w], cfg.cycles_per_sample, ws.hardware.cpu_hz, cfg.epochs
                )
                e_cmp = radio.comp_energy(
                    trained_size[w],
                    cfg.cycles_per_sample,
                    ws.hardware.cpu_hz,
                    cfg.epochs,
                    ws.hardware.capacitance,
                )
                rate = radio.data_rate(
                    share, cfg.bandwidth_hz, ws.gain * shadow[w], ws.hardware.tx_power_w, cfg.noise_w
                )
                t_com, e_com = radio.comm_time_energy(sigma_bits, rate, ws.hardware.tx_power_w)
                costs.append(radio.WorkerRoundCost(w, t_cmp, t_com, e_cmp, e_com))
                auditor.deadline(
                    r, w, t_cmp + t_com, deadline_of_edge[edge], exempt=w in fallback_workers
                )
                cid = cluster_of_worker.get(w)
                auditor.association(
                    r,
                    cid is None or registry.clusters[cid].edge == ws.edge == topo.edge_of(w),
                    f"(worker {w})",
                )
            edge_costs[edge] = costs
            backhaul_s[edge] = sigma_bits / cfg.edge_uplink_bps
            backhaul_j[edge] = backhaul_s[edge] * cfg.edge_tx_power_w
        report = radio.round_costs(edge_costs, backhaul_s, backhaul_j)
        try:
            registry.audit_partition({e: topo.workers_of(e) for e in range(cfg.num_edges)})
            auditor.association(r, True)
        except clustering.ClusterError as exc:
            auditor.association(r, False, str(exc))

        # --- Metrics.
        accs = []
        for ws in workers:
            cid = cluster_of_worker.get(ws.worker_id)
            model = registry.clusters[cid].model if cid is not None else global_model
            if cid is not None and registry.clusters[cid].children is not None:
                # Worker's cluster split this round; use its new child.
                for kid in registry.clusters[cid].children:
                    if ws.worker_id in registry.clusters[kid].members:
                        model = registry.clusters[kid].model
                        break
            if len(ws.y_test):
                accs.append(nnmodel.accuracy(model, arch, ws.x_test, ws.y_test))
        pseudo_total = sum(len(w.dataset.pseudo) for w in workers)
        if pseudo_total:
            hits = sum(
                int(pl.label == w.dataset.oracle_label(sid))
                for w in workers
                for sid, pl in sorted(w.dataset.pseudo.items())
            )
            label_acc: float | None = hits / pseudo_total
        else:
            label_acc = None
        cum_time += report.round_time_s
        cum_energy += report.round_energy_j
        live = registry.live()
        metrics.append(
            RoundMetrics(
                round_index=r,
                clusters=len(live) if sc.uses_clustering else 1,
                stopped=sum(1 for c in live if c.status is clustering.Status.STOPPED),
                participants=sum(len(v) for v in participants.values()),
                acc_min=float(min(accs)) if accs else 0.0,
                acc_mean=float(np.mean(accs)) if accs else 0.0,
                acc_max=float(max(accs)) if accs else 0.0,
                label_acc=label_acc,
                label_cov=(pseudo_total / total_unlabeled) if total_unlabeled else 0.0,
                pseudo_count=pseudo_total,
                round_time_s=report.round_time_s,
                round_energy_j=report.round_energy_j,
                cum_time_s=cum_time,
                cum_energy_j=cum_energy,
            )
        )

        if out_path is not None and r % cfg.checkpoint_every == 0:
            models = {"global": global_model}
            for c in live:
                models[f"cluster_{c.cluster_id}"] = c.model
            hfl.write_checkpoint(out_path / "checkpoints" / f"round_{r}.bin", models)

        if cfg.time_budget_s is not None and cum_time > cfg.time_budget_s:
            budget_stopped = True
            log.info("round %d: simulated time budget exhausted; ending run", r)
            break

    result = RunResult(
        config=cfg,
        metrics=metrics,
        lineage=registry.lineage(),
        audit_checks=auditor.checks,
        fallback_rounds=sel_state.fallback_rounds,
        splits=splits,
        budget_stopped=budget_stopped,
        selection_rows=selection_rows,
        pseudo_rows=len(audit_rows),
        selection_counts=sel_state.counts,
        out_dir=out_path,
    )
    if out_path is not None:
        _write_artifacts(result, audit_rows)
    return result


def _write_artifacts(result: RunResult, audit_rows: list[list[str]]) -> None:
    out = result.out_dir
    assert out is not None
    with open(out / "metrics.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(METRICS_COLUMNS)
        for m in result.metrics:
            wr.writerow(m.row())
    with open(out / "selection.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(SELECTION_COLUMNS)
        wr.writerows(result.selection_rows)
    with open(out / "pseudo_audit.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(AUDIT_COLUMNS)
        wr.writerows(audit_rows)
    (out / "clusters.json").write_text(json.dumps(result.lineage, indent=2, sort_keys=True) + "\n")


SUMMARY_COLUMNS = [
    "scenario",
    "conf_threshold",
    "labeled_fraction",
    "seed",
    "rounds_run",
    "acc_min",
    "acc_mean",
    "acc_max",
    "label_acc",
    "label_cov",
    "pseudo_count",
    "mean_round_time_s",
    "mean_round_energy_j",
    "total_time_s",
    "total_energy_j",
    "splits",
    "fallback_rounds",
    "status",
    "error",
]


def _summary_row(cfg: SimConfig, res: RunResult | None, error: str = "") -> dict[str, str]:
    row = {
        "scenario": cfg.scenario,
        "conf_threshold": repr(cfg.conf_threshold),
        "labeled_fraction": repr(cfg.labeled_fraction),
        "seed": str(cfg.seed),
        "status": "ok" if res is not None else "error",
        "error": error,
    }
    if res is not None and res.final is not None:
        f = res.final
        row.update(
            {
                "rounds_run": str(f.round_index),
                "acc_min": repr(f.acc_min),
                "acc_mean": repr(f.acc_mean),
                "acc_max": repr(f.acc_max),
                "label_acc": "" if f.label_acc is None else repr(f.label_acc),
                "label_cov": repr(f.label_cov),
                "pseudo_count": str(f.pseudo_count),
                "mean_round_time_s": repr(res.mean_round_time()),
                "mean_round_energy_j": repr(res.mean_round_energy()),
                "total_time_s": repr(f.cum_time_s),
                "total_energy_j": repr(f.cum_energy_j),
                "splits": str(res.splits),
                "fallback_rounds": str(res.fallback_rounds),
            }
        )
    else:
        row.update({k: "" for k in SUMMARY_COLUMNS if k not in row})
    return row


GRID_KEYS = ("scenario", "conf_threshold", "labeled_fraction", "seeds")


def sweep(base: SimConfig, grid: dict, out_root: Path | str | None = None) -> list[dict[str, str]]:
    """Run the cross product of scenarios, thresholds, fractions, and seeds.

    One failed cell is recorded and skipped; the rest of the sweep still
    runs. Returns the summary rows, which are also written to summary.csv
    when an output root is given.
    """
    unknown = sorted(set(grid) - set(GRID_KEYS))
    if unknown:
        raise ConfigError(f"unknown grid keys: {unknown}; allowed: {list(GRID_KEYS)}")
    scenarios = grid.get("scenario", [base.scenario])
    thresholds = grid.get("conf_threshold", [base.conf_threshold])
    fractions = grid.get("labeled_fraction", [base.labeled_fraction])
    seeds = grid.get("seeds", [base.seed])
    for key, vals in (("scenario", scenarios), ("conf_threshold", thresholds),
                      ("labeled_fraction", fractions), ("seeds", seeds)):
        if not isinstance(vals, (list, tuple)) or not vals:
            raise ConfigError(f"grid key {key!r} must be a non-empty list")

    root = Path(out_root) if out_root is not None else None
    if root is not None:
        root.mkdir(parents=True, exist_ok=True)
    rows = []
    for scn, phi, lf, seed in itertools.product(scenarios, thresholds, fractions, seeds):
        cfg = base.copy(scenario=scn, conf_threshold=phi, labeled_fraction=lf, seed=seed)
        cell = f"{scn}_phi{phi}_lf{lf}_seed{seed}"
        cell_dir = root / cell if root is not None else None
        try:
            res = run(cfg, cell_dir)
            rows.append(_summary_row(cfg, res))
        except (ConfigError, AuditError, RunError, ValueError) as exc:
            log.error("sweep cell %s failed: %s", cell, exc)
            rows.append(_summary_row(cfg, None, str(exc)))
    if root is not None:
        with open(root / "summary.csv", "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
            wr.writeheader()
            wr.writerows(rows)
    return rows


def report(in_dir: Path | str, baseline: str) -> list[dict[str, str]]:
    """Compare swept scenarios against a named baseline on shared settings.

    Scenarios are matched to baseline rows with the same confidence
    threshold and labeled fraction; the seed sets must agree exactly or the
    comparison is refused.
    """
    in_path = Path(in_dir)
    summary = in_path / "summary.csv"
    if not summary.exists():
        raise ConfigError(f"no summary.csv under {in_path}")
    with open(summary, newline="") as fh:
        rows = [row for row in csv.DictReader(fh)]
    ok_rows = [row for row in rows if row["status"] == "ok"]
    if not any(row["scenario"] == baseline for row in ok_rows):
        raise ConfigError(f"baseline {baseline!r} has no successful runs in {summary}")

    def key(row: dict) -> tuple[str, str]:
        return (row["conf_threshold"], row["labeled_fraction"])

    base_rows: dict[tuple[str, str], list[dict]] = {}
    for row in ok_rows:
        if row["scenario"] == baseline:
            base_rows.setdefault(key(row), []).append(row)

    out = []
    scenarios = sorted({row["scenario"] for row in ok_rows})
    for scn in scenarios:
        for k in sorted({key(row) for row in ok_rows if row["scenario"] == scn}):
            mine = [row for row in ok_rows if row["scenario"] == scn and key(row) == k]
            base = base_rows.get(k)
            if base is None:
                raise ConfigError(
                    f"no baseline runs for conf_threshold={k[0]} labeled_fraction={k[1]}"
                )
            if {row["seed"] for row in mine} != {row["seed"] for row in base}:
                raise ConfigError(
                    f"seed sets differ between {scn} and {baseline} at settings {k}; refusing to compare"
                )
            acc = float(np.mean([float(row["acc_mean"]) for row in mine]))
            energy = float(np.mean([float(row["mean_round_energy_j"]) for row in mine]))
            time_s = float(np.mean([float(row["mean_round_time_s"]) for row in mine]))
            b_energy = float(np.mean([float(row["mean_round_energy_j"]) for row in base]))
            b_time = float(np.mean([float(row["mean_round_time_s"]) for row in base]))
            b_acc = float(np.mean([float(row["acc_mean"]) for row in base]))
            out.append(
                {
                    "scenario": scn,
                    "conf_threshold": k[0],
                    "labeled_fraction": k[1],
                    "seeds": str(len(mine)),
                    "acc_mean": repr(acc),
                    "acc_vs_baseline": repr(acc - b_acc),
                    "mean_round_energy_j": repr(energy),
                    "energy_savings_pct": repr((b_energy - energy) / b_energy * 100.0),
                    "mean_round_time_s": repr(time_s),
                    "time_savings_pct": repr((b_time - time_s) / b_time * 100.0),
                }
            )
    with open(in_path / "report.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(out[0].keys()))
        wr.writeheader()
        wr.writerows(out)
    return out
