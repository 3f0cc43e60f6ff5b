"""Synthetic non-IID worker data.

Each worker is pinned to one of K latent distributions. All distributions
share the same feature geometry: classes_per_worker isotropic Gaussian
centers, placed on mutually orthogonal directions when the feature
dimension allows it. What differs between distributions is the labeling
of the centers. The first shared_centers of them carry the same class id
everywhere, so early training descends in a common direction for every
worker. The next block of centers is named differently by each
distribution: workers of different distributions see the same feature
regions under conflicting labels there. One shared model first learns the
common part, then stalls at a compromise on the conflicting part; that is
exactly the regime where the mean update shrinks while individual updates
stay large and per-group specialization pays off.

The trailing hard_centers are shared-named like the first block but sit
at a smaller separation (hard_separation). They carry no group conflict;
they exist to soak up the labeled budget. A model trained on the sparse
labeled subset alone estimates their boundaries poorly, while the much
larger unlabeled pool covers them densely, so label propagation has
something real to add over labeled-only training.

Ground-truth labels of the unlabeled pool are sealed: training code gets
features only, while evaluation reads labels through an audited accessor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .streams import CLASS_MEANS, DATA, SPLIT_LABEL, SPLIT_TEST, substream

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int
    sample_id: int


@dataclass(frozen=True)
class UnlabeledSample:
    """Features only. The true label lives in the owning dataset's oracle."""

    features: np.ndarray
    sample_id: int


@dataclass(frozen=True)
class DistributionSpec:
    """Knobs for the synthetic population."""

    num_distributions: int
    num_classes: int
    feature_dim: int
    samples_per_worker: int
    labeled_fraction: float
    classes_per_worker: int = 2
    shared_centers: int = 0
    hard_centers: int = 0
    class_separation: float = 3.0
    hard_separation: float = 1.6
    class_spread: float = 1.0
    labeled_classes: int | None = None
    labeled_block: int | None = None
    labeled_anchor: bool = False
    labeled_floor: int = 0

    def __post_init__(self) -> None:
        if self.num_distributions < 1:
            raise DataError("need at least one distribution")
        if self.classes_per_worker < 1 or self.classes_per_worker > self.num_classes:
            raise DataError("classes_per_worker must be in [1, num_classes]")
        if self.labeled_classes is not None and not (
            1 <= self.labeled_classes <= self.classes_per_worker
        ):
            raise DataError("labeled_classes must be in [1, classes_per_worker]")
        if self.labeled_block is not None and self.labeled_block < 1:
            raise DataError("labeled_block must be >= 1")
        if self.shared_centers < 0 or self.hard_centers < 0:
            raise DataError("center counts cannot be negative")
        if self.shared_centers + self.hard_centers > self.classes_per_worker:
            raise DataError("shared plus hard centers cannot exceed classes_per_worker")
        if self.conflicting_centers > 0 and self.conflict_pool < 1:
            raise DataError("conflicting centers need class ids beyond the shared and hard blocks")
        if (
            self.num_distributions > 1
            and self.conflicting_centers > 0
            and self.conflicting_centers % self.conflict_pool == 0
        ):
            raise DataError(
                "conflicting_centers is a multiple of the conflict pool, so the "
                "name cycle wraps to the identity and all distributions coincide"
            )
        if not 0.0 < self.labeled_fraction < 1.0:
            raise DataError("labeled_fraction must be in (0, 1)")
        if self.samples_per_worker < 2:
            raise DataError("samples_per_worker must be >= 2")
        if self.class_separation <= 0 or self.class_spread <= 0:
            raise DataError("class_separation and class_spread must be positive")
        if self.hard_separation <= 0:
            raise DataError("hard_separation must be positive")
        if self.labeled_floor < 0:
            raise DataError("labeled_floor must be >= 0")

    @property
    def conflicting_centers(self) -> int:
        return self.classes_per_worker - self.shared_centers - self.hard_centers

    @property
    def conflict_pool(self) -> int:
        """Class ids available for distribution-specific center names."""
        return self.num_classes - self.shared_centers - self.hard_centers

    def classes_of(self, distribution_id: int) -> list[int]:
        """Class id this distribution assigns to each center, in center order.

        Centers below shared_centers keep one global name. The next block of
        centers gets distribution-specific names drawn from the class ids
        between the shared and hard blocks (wrapping when K * conflicting
        exceeds the pool). The trailing hard_centers reuse the last class ids
        globally: every distribution agrees on them, they are just placed
        closer together than the rest.
        """
        s = self.shared_centers
        conflicting = self.conflicting_centers
        pool = self.conflict_pool
        out = list(range(s))
        for j in range(conflicting):
            out.append(s + (distribution_id * conflicting + j) % pool)
        for j in range(self.hard_centers):
            out.append(self.num_classes - self.hard_centers + j)
        return out


class WorkerDataset:
    """One worker's training-side data: labeled samples, unlabeled pool,
    injected pseudo-labels, and a sealed oracle for audits."""

    def __init__(self, worker_id: int, labeled: list[Sample], unlabeled: list[UnlabeledSample], oracle: dict[int, int]):
        if not labeled:
            raise DataError(f"worker {worker_id} has no labeled samples")
        if set(oracle) != {u.sample_id for u in unlabeled}:
            raise DataError("oracle keys must match the unlabeled pool exactly")
        self.worker_id = worker_id
        self.labeled = labeled
        self.unlabeled = unlabeled
        self.pseudo: dict[int, object] = {}  # sample_id -> PseudoLabel
        self._oracle = oracle
        self.oracle_reads = 0

    def unlabeled_ids(self) -> set[int]:
        return set(self._oracle)

    def oracle_label(self, sample_id: int) -> int:
        """Evaluation-only access to a hidden label. Every read is counted so
        tests can assert the training path never peeks."""
        self.oracle_reads += 1
        return self._oracle[sample_id]

    def counts(self) -> tuple[int, int, int]:
        return len(self.labeled), len(self.unlabeled), len(self.pseudo)


@dataclass(frozen=True)
class GeneratedWorker:
    dataset: WorkerDataset
    test: list[Sample]
    distribution_id: int


def class_centers(spec: DistributionSpec, seed: int) -> np.ndarray:
    """Shared Gaussian centers, one per within-distribution class slot.

    Deterministic in (spec, seed). Random directions are orthonormalized
    while the dimension allows, so pairwise center distances are
    separation * sqrt(2) by construction rather than by luck of the draw.
    """
    rng = substream(seed, CLASS_MEANS)
    k = spec.classes_per_worker
    raw = rng.standard_normal((k, spec.feature_dim))
    if k <= spec.feature_dim:
        q, _ = np.linalg.qr(raw.T)
        dirs = q.T[:k]
    else:
        dirs = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    scale = np.full(k, spec.class_separation)
    if spec.hard_centers:
        scale[k - spec.hard_centers:] = spec.hard_separation
    return scale[:, None] * dirs


def train_test_split(
    samples: Sequence[Sample], test_fraction: float, rng: np.random.Generator
) -> tuple[list[Sample], list[Sample]]:
    """Shuffle and cut. round(n * test_fraction) samples land in the test side."""
    if len(samples) == 0:
        raise DataError("cannot split an empty dataset")
    if not 0.0 < test_fraction < 1.0:
        raise DataError("test_fraction must be in (0, 1)")
    n_test = int(round(len(samples) * test_fraction))
    order = rng.permutation(len(samples))
    test = [samples[i] for i in order[:n_test]]
    train = [samples[i] for i in order[n_test:]]
    return train, test


def labeled_count(n: int, labeled_fraction: float) -> int:
    """At least one sample stays labeled regardless of rounding."""
    return max(1, int(round(n * labeled_fraction)))


def generate(
    spec: DistributionSpec,
    num_workers: int,
    seed: int,
    test_fraction: float = 0.0,
) -> list[GeneratedWorker]:
    """Build every worker's data for one run.

    Workers are assigned to distributions round-robin (worker i joins
    distribution i mod K), which keeps group sizes balanced. Sample ids are
    unique across the whole run.

    The labeled/unlabeled partition applies to the worker's full dataset:
    with 200 samples at fraction 0.10, exactly 20 are labeled and 180 go to
    the hidden pool. A test_fraction > 0 then moves round(0.2 * 200) = 40
    samples out of the hidden pool into a held-out test list whose true
    labels are open for evaluation only; the rest stay available for pseudo
    labeling. Labeled training data is never diverted to the test side.
    """
    if num_workers < spec.num_distributions:
        raise DataError("need at least one worker per distribution")
    centers = class_centers(spec, seed)
    out: list[GeneratedWorker] = []
    next_id = 0
    for worker in range(num_workers):
        dist_id = worker % spec.num_distributions
        classes = spec.classes_of(dist_id)
        rng = substream(seed, DATA, worker)
        # Cycle through the centers so every worker carries the same balanced
        # class mix; unbalanced draws would make update norms vary wildly
        # between workers and destabilise the similarity structure.
        picks = np.arange(spec.samples_per_worker) % len(classes)
        samples: list[Sample] = []
        for pick in picks:
            # Slot index picks the shared center; the distribution supplies
            # its own class id for it.
            label = classes[int(pick)]
            feats = centers[int(pick)] + spec.class_spread * rng.standard_normal(spec.feature_dim)
            samples.append(Sample(feats, label, next_id))
            next_id += 1

        n_lab = labeled_count(len(samples), spec.labeled_fraction)
        # Stratified pick: cycle over the classes while consuming shuffled
        # per-class queues, so the labeled subset is balanced within one
        # sample even when it is tiny.
        #
        # With labeled_classes set, annotation is rationed: each worker's
        # labeled subset covers only that many of its classes. The unlabeled
        # pool and the test cut keep the full class mix. Which classes get
        # annotated rotates with the worker's rank inside its distribution:
        # by default every consecutive rank advances the window (stride
        # interleave), while labeled_block advances it once per block of
        # ranks, so whole blocks of same-distribution workers share one
        # annotation window and different blocks cover different classes.
        allowed = set(classes)
        if spec.labeled_classes is not None and spec.labeled_classes < len(classes):
            rank = worker // spec.num_distributions
            block = rank if spec.labeled_block is None else rank // spec.labeled_block
            if spec.labeled_anchor:
                # Slot 0 is always annotated; the remaining budget rotates
                # over the other slots. Keeping the first slot anchored
                # everywhere means the one class every distribution agrees
                # on is never left for somebody else to annotate.
                rest = len(classes) - 1
                allowed = {classes[0]} | {
                    classes[1 + (block + j) % rest]
                    for j in range(spec.labeled_classes - 1)
                }
            elif spec.labeled_block is not None:
                allowed = {
                    classes[(block + j) % len(classes)]
                    for j in range(spec.labeled_classes)
                }
            else:
                stride = max(1, len(classes) // spec.labeled_classes)
                allowed = {
                    classes[(block + j * stride) % len(classes)]
                    for j in range(spec.labeled_classes)
                }
        lab_rng = substream(seed, SPLIT_LABEL, worker)
        order = lab_rng.permutation(len(samples))
        queues: dict[int, list[int]] = {}
        for i in order:
            queues.setdefault(samples[i].label, []).append(int(i))
        lab_idx: list[int] = []
        outside = sorted(set(classes) - allowed)
        if spec.labeled_floor > 0 and outside:
            # A few-shot floor for the classes the window skips. They are
            # picked first so they end up on the training side of any
            # validation carve-off taken from the tail of the labeled list.
            if spec.labeled_floor * len(outside) >= n_lab:
                raise DataError(
                    f"worker {worker}: labeled_floor reserves the whole "
                    "labeled budget, leaving nothing for the window classes"
                )
            for label in outside:
                for _ in range(min(spec.labeled_floor, len(queues.get(label, [])))):
                    lab_idx.append(queues[label].pop(0))
        while len(lab_idx) < n_lab:
            progressed = False
            for label in sorted(q for q in queues if q in allowed):
                if queues[label] and len(lab_idx) < n_lab:
                    lab_idx.append(queues[label].pop(0))
                    progressed = True
            if not progressed:
                raise DataError(f"worker {worker} cannot fill the labeled subset")
        chosen = set(lab_idx)
        labeled = [samples[i] for i in lab_idx]
        hidden = [samples[i] for i in range(len(samples)) if i not in chosen]

        if test_fraction > 0.0:
            n_test = int(round(len(samples) * test_fraction))
            if n_test >= len(hidden):
                raise DataError(f"worker {worker} test split would consume the whole hidden pool")
            hidden, test = _stratified_cut(hidden, n_test, substream(seed, SPLIT_TEST, worker))
        else:
            test = []

        unlabeled = [UnlabeledSample(s.features, s.sample_id) for s in hidden]
        oracle = {s.sample_id: s.label for s in hidden}
        ds = WorkerDataset(worker, labeled, unlabeled, oracle)
        out.append(GeneratedWorker(ds, test, dist_id))
    return out


def _stratified_cut(
    samples: list[Sample], n_cut: int, rng: np.random.Generator
) -> tuple[list[Sample], list[Sample]]:
    """Move n_cut samples out, keeping both sides class-balanced."""
    order = rng.permutation(len(samples))
    queues: dict[int, list[int]] = {}
    for i in order:
        queues.setdefault(samples[i].label, []).append(int(i))
    cut_idx: list[int] = []
    while len(cut_idx) < n_cut:
        progressed = False
        for label in sorted(queues):
            if queues[label] and len(cut_idx) < n_cut:
                cut_idx.append(queues[label].pop(0))
                progressed = True
        if not progressed:
            raise DataError("cannot cut more samples than are available")
    chosen = set(cut_idx)
    kept = [samples[i] for i in range(len(samples)) if i not in chosen]
    cut = [samples[i] for i in cut_idx]
    return kept, cut
