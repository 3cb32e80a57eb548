"""Four-class activity recognition and the activity-then-verify pipeline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neural import Network, TrainConfig, train_classifier
from .signals import ACTIVITIES
from .verification import network_input


@dataclass
class ActivityModel:
    net: Network
    signal_kind: str
    position: str
    classes: tuple = ACTIVITIES

    def probabilities(self, phis: np.ndarray) -> np.ndarray:
        """Per-frame softmax vectors, shape (N, 4)."""
        return self.net.predict_proba(network_input(self.net.arch, phis))


def train_activity_classifier(net: Network, phis_by_activity: dict, cfg: TrainConfig,
                              signal_kind: str = "SCG", position: str = "Pulmonary") -> ActivityModel:
    """Fit ``net`` with a 4-way softmax head on frames grouped by activity name."""
    missing = [a for a in ACTIVITIES if len(phis_by_activity.get(a, ())) == 0]
    if missing:
        raise ValueError(f"no training frames for activity {', '.join(missing)}")
    unknown = set(phis_by_activity) - set(ACTIVITIES)
    if unknown:
        raise ValueError(f"unknown activity {sorted(unknown)[0]!r}")
    x = np.concatenate([network_input(net.arch, phis_by_activity[a]) for a in ACTIVITIES])
    y = np.concatenate([np.full(len(phis_by_activity[a]), i) for i, a in enumerate(ACTIVITIES)])
    train_classifier(net, x.astype(net.dtype), y, cfg, n_classes=len(ACTIVITIES))
    return ActivityModel(net, signal_kind, position)


def fuse_probabilities(prob_sets) -> np.ndarray:
    """Average each model's per-frame softmax over frames, then sum across models.

    ``prob_sets`` holds one (n_frames, 4) array per model, all for the same frames.
    """
    prob_sets = list(prob_sets)
    if not prob_sets:
        raise ValueError("activity classification needs at least one model")
    return np.sum([np.asarray(p, dtype=np.float64).mean(axis=0) for p in prob_sets], axis=0)


def classify_activity(phis: np.ndarray, models: list[tuple[ActivityModel, np.ndarray]] | None = None,
                      prob_sets=None) -> tuple[str, np.ndarray]:
    """Label a run of consecutive frames.

    Either pass ``models`` as ``(model, frames)`` pairs (each model sees the
    frames of its own signal kind) or precomputed ``prob_sets``. Ties go to
    the first class in ``ACTIVITIES`` order.
    """
    if prob_sets is None:
        if not models:
            raise ValueError("activity classification needs at least one model")
        prob_sets = [m.probabilities(f) for m, f in models]
    score = fuse_probabilities(prob_sets)
    return ACTIVITIES[int(np.argmax(score))], score


def window_labels(prob_sets, n: int) -> np.ndarray:
    """Predicted class index for every run of ``n`` consecutive frames."""
    total = None
    for p in prob_sets:
        p = np.asarray(p, dtype=np.float64)
        if n < 1 or n > len(p):
            raise ValueError(f"cannot form {n}-frame windows from {len(p)} frames")
        csum = np.concatenate([np.zeros((1, p.shape[1])), np.cumsum(p, axis=0)])
        mean = (csum[n:] - csum[:-n]) / n
        total = mean if total is None else total + mean
    if total is None:
        raise ValueError("activity classification needs at least one model")
    return np.argmax(total, axis=1)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: predicted class, columns: target class
    classes: tuple = ACTIVITIES

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    @property
    def recall(self) -> np.ndarray:
        col = self.counts.sum(axis=0)
        return np.divide(np.diag(self.counts), col, out=np.zeros(len(col)), where=col > 0)

    @property
    def precision(self) -> np.ndarray:
        row = self.counts.sum(axis=1)
        return np.divide(np.diag(self.counts), row, out=np.zeros(len(row)), where=row > 0)

    def off_diagonal_share(self, a: str, b: str) -> float:
        """Fraction of all errors that confuse ``a`` and ``b`` (either direction)."""
        errors = self.total - np.trace(self.counts)
        if errors == 0:
            return 0.0
        i, j = self.classes.index(a), self.classes.index(b)
        return float((self.counts[i, j] + self.counts[j, i]) / errors)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts, self.classes)


def confusion(predicted, target, n_classes: int = len(ACTIVITIES)) -> ConfusionMatrix:
    predicted = np.asarray(predicted, dtype=int).ravel()
    target = np.asarray(target, dtype=int).ravel()
    if predicted.shape != target.shape:
        raise ValueError("predicted and target labels differ in length")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (predicted, target), 1)
    return ConfusionMatrix(counts)


def two_stage_verify(activity_prob_sets, verifiers: dict) -> tuple[str, float]:
    """Classify the probe's activity, then score it with that activity's verifier.

    ``activity_prob_sets`` are the probe's per-frame softmax arrays (one per
    activity model); ``verifiers`` maps activity name -> zero-argument callable
    returning the probe's verification score under that activity's models.
    """
    activity, _ = classify_activity(None, prob_sets=activity_prob_sets)
    if activity not in verifiers:
        raise KeyError(f"no verification gallery for predicted activity {activity}")
    return activity, float(verifiers[activity]())
