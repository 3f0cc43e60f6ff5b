"""Confidence-gated pseudo-labeling and prediction-model choice.

Workers label their own unlabeled pool with either the single specialized
model that scores best for them (one-hot choice) or a softmax-weighted
ensemble of all specialized models (simplex choice). Labeling starts either
once the first cluster split has happened or per cluster once it stops
refining. Only predictions whose top probability clears the confidence
threshold are injected.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datagen import Sample, WorkerDataset
from .nnmodel import Architecture, ParamVector, accuracy, forward

log = logging.getLogger(__name__)

SCHEME_SPLIT = "split_based"
SCHEME_STOPPING = "stopping_based"
SCHEME_ALWAYS = "always"

ONE_HOT = "one_hot"
SIMPLEX = "simplex"


class LabelingError(ValueError):
    pass


@dataclass(frozen=True)
class PseudoLabel:
    sample_id: int
    label: int
    confidence: float
    model_id: str
    round_index: int


@dataclass(frozen=True)
class ModelChoice:
    """Per-worker weighting over the candidate prediction models."""

    kind: str
    weights: np.ndarray
    utilities: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if self.kind == ONE_HOT:
            if not (np.isin(w, (0.0, 1.0)).all() and w.sum() == 1.0):
                raise LabelingError("one-hot choice must have exactly one weight of 1")
        elif self.kind == SIMPLEX:
            if np.any(w < 0) or np.any(w > 1) or not np.isclose(w.sum(), 1.0, atol=1e-9):
                raise LabelingError("simplex weights must lie in [0, 1] and sum to 1")
        else:
            raise LabelingError(f"unknown choice kind {self.kind!r}")
        if w.shape != np.asarray(self.utilities).shape:
            raise LabelingError("weights and utilities must align")

    @property
    def chosen(self) -> int:
        """Index of the selected model (one-hot only)."""
        if self.kind != ONE_HOT:
            raise LabelingError("only a one-hot choice selects a single model")
        return int(np.argmax(self.weights))


def validation_split(labeled: Sequence[Sample], fraction: float = 0.2) -> tuple[list[Sample], list[Sample]]:
    """Carve a held-out fold off the labeled set; the fold is never trained on.

    floor(n * fraction) samples from the end of the (already shuffled)
    labeled list form the fold, so at least one sample always remains for
    training. Small labeled sets can leave the fold empty.
    """
    if not 0.0 <= fraction < 1.0:
        raise LabelingError("validation fraction must be in [0, 1)")
    n_val = int(len(labeled) * fraction)
    n_train = len(labeled) - n_val
    return list(labeled[:n_train]), list(labeled[n_train:])


def confident_labels(
    probs: np.ndarray,
    sample_ids: Sequence[int],
    threshold: float,
    model_id: str,
    round_index: int,
) -> list[PseudoLabel]:
    """Keep predictions whose top probability is >= threshold.

    The boundary case counts as accepted. Ties on the top class resolve to
    the lowest class index.
    """
    if not 0.0 < threshold <= 1.0:
        raise LabelingError("confidence threshold must be in (0, 1]")
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != len(sample_ids):
        raise LabelingError("need one probability row per sample")
    conf = probs.max(axis=1)
    labels = probs.argmax(axis=1)
    out = []
    for i, sid in enumerate(sample_ids):
        if conf[i] >= threshold:
            out.append(PseudoLabel(int(sid), int(labels[i]), float(conf[i]), model_id, round_index))
    return out


@dataclass(frozen=True)
class UtilityReport:
    value: float
    val_accuracy: float
    coverage: float
    norm_latency: float
    empty_validation: bool


def coverage_at(params: ParamVector, arch: Architecture, features: np.ndarray, threshold: float) -> float:
    """Fraction of the pool this model would label at the given threshold."""
    if len(features) == 0:
        return 0.0
    probs = forward(params, arch, features)
    return float(np.mean(probs.max(axis=1) >= threshold))


def model_utility(
    params: ParamVector,
    arch: Architecture,
    val_samples: Sequence[Sample],
    unlabeled_features: np.ndarray,
    threshold: float,
    coverage_weight: float = 0.25,
    latency_weight: float = 0.1,
    norm_latency: float = 0.0,
) -> UtilityReport:
    """Score one candidate model for one worker.

    utility = validation accuracy + coverage_weight * coverage
            - latency_weight * normalized labeling latency.

    With an empty validation fold the accuracy term is dropped and the
    report is flagged.
    """
    cov = coverage_at(params, arch, unlabeled_features, threshold)
    if val_samples:
        xv = np.stack([s.features for s in val_samples])
        yv = np.array([s.label for s in val_samples])
        val_acc = accuracy(params, arch, xv, yv)
        empty = False
    else:
        val_acc = 0.0
        empty = True
        log.warning("empty validation fold; utility falls back to coverage only")
    value = val_acc + coverage_weight * cov - latency_weight * norm_latency
    return UtilityReport(value, val_acc, cov, norm_latency, empty)


def select_best_model(utilities: Sequence[float]) -> ModelChoice:
    """One-hot pick of the highest-utility model; ties go to the lowest index."""
    u = np.asarray(utilities, dtype=np.float64)
    if u.size == 0:
        raise LabelingError("no candidate models to select from")
    w = np.zeros_like(u)
    w[int(np.argmax(u))] = 1.0
    return ModelChoice(ONE_HOT, w, u)


def ensemble_weights(utilities: Sequence[float], temperature: float = 0.1) -> ModelChoice:
    """Softmax of utility / temperature over the candidate models."""
    if temperature <= 0:
        raise LabelingError("temperature must be positive")
    u = np.asarray(utilities, dtype=np.float64)
    if u.size == 0:
        raise LabelingError("no candidate models to weight")
    z = u / temperature
    z = z - z.max()  # shift-invariant, avoids overflow
    e = np.exp(z)
    return ModelChoice(SIMPLEX, e / e.sum(), u)


def ensemble_predict(prob_rows: Sequence[np.ndarray], weights: np.ndarray) -> np.ndarray:
    """Convex combination of per-model probability matrices."""
    if len(prob_rows) == 0:
        raise LabelingError("ensemble needs at least one model's probabilities")
    if len(prob_rows) != len(weights):
        raise LabelingError("one weight per probability matrix required")
    out = np.zeros_like(np.asarray(prob_rows[0], dtype=np.float64))
    for p, w in zip(prob_rows, weights):
        out += float(w) * np.asarray(p, dtype=np.float64)
    return out


def prediction_trigger(scheme: str, *, split_occurred: bool, cluster_stopped: bool) -> bool:
    """Whether a worker labels this round.

    split_based latches on the first split anywhere; stopping_based applies
    per cluster from the round that cluster stops; always is unconditional
    labeling for the flat-hierarchy baseline.
    """
    if scheme == SCHEME_SPLIT:
        return split_occurred
    if scheme == SCHEME_STOPPING:
        return cluster_stopped
    if scheme == SCHEME_ALWAYS:
        return True
    raise LabelingError(f"unknown prediction-time scheme {scheme!r}")


def inject(dataset: WorkerDataset, labels: Sequence[PseudoLabel]) -> WorkerDataset:
    """Store accepted pseudo-labels on the worker; latest label wins.

    Samples keep earlier pseudo-labels until overwritten, so the effective
    training set only grows between rounds.
    """
    pool = dataset.unlabeled_ids()
    for pl in labels:
        if pl.sample_id not in pool:
            raise LabelingError(f"sample {pl.sample_id} is not in worker {dataset.worker_id}'s unlabeled pool")
        dataset.pseudo[pl.sample_id] = pl
    return dataset


def effective_size(n_labeled_train: int, dataset: WorkerDataset) -> int:
    """Samples the next local training pass will actually touch."""
    return n_labeled_train + len(dataset.pseudo)
