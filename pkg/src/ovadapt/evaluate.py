"""Inference rule, metrics, baseline anomaly scores and histogram export.

Decision rule: the closed-set head names the nearest known class, then that
class's open-set head decides known vs unknown. The boundary sits at 0.5 on
the known probability, i.e. exactly where the head's own two-way softmax
flips; it is exposed only for analysis sweeps. A fixed-ratio rejector (drop
the top-q anomaly quantile) is included as a reference baseline for
stability comparisons, not as a supported mode.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from .model import ModelParams
from .numerics import clamp_prob, softmax


class UndefinedMetricError(ValueError):
    """A metric was requested on data that cannot define it."""


@dataclass
class PredictionOutcome:
    """Per-sample decisions for a batch, stored as aligned arrays.

    final_label equals closed_argmax where the argmax class's open-set head
    says known (known_prob >= threshold) and unknown_label otherwise;
    anomaly_score = 1 - known_prob.
    """

    closed_argmax: np.ndarray  # (B,) int
    known_prob: np.ndarray  # (B,) float in (0, 1)
    final_label: np.ndarray  # (B,) int, unknown encoded as unknown_label
    anomaly_score: np.ndarray  # (B,) float
    unknown_label: int
    threshold: float
    closed_logits: np.ndarray  # (B, C), kept for baseline scores

    @property
    def n(self) -> int:
        return self.final_label.shape[0]


def predict(params: ModelParams, x: np.ndarray, threshold: float = 0.5) -> PredictionOutcome:
    """Classify a batch: nearest known class, then accept/reject by its head."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"predict: threshold must lie in (0, 1), got {threshold}")
    fwd = model_mod.forward(params, x)
    closed_argmax = np.argmax(fwd.closed_logits, axis=1)  # ties to lowest index
    rows = np.arange(closed_argmax.shape[0])
    known_prob = fwd.ova_known_prob[rows, closed_argmax]
    unknown_label = params.num_classes
    final = np.where(known_prob >= threshold, closed_argmax, unknown_label)
    return PredictionOutcome(
        closed_argmax=closed_argmax,
        known_prob=known_prob,
        final_label=final,
        anomaly_score=1.0 - known_prob,
        unknown_label=unknown_label,
        threshold=threshold,
        closed_logits=fwd.closed_logits,
    )


def predict_fixed_ratio(
    params: ModelParams, x: np.ndarray, reject_quantile: float = 0.5
) -> PredictionOutcome:
    """Reference baseline: reject the top reject_quantile of anomaly scores.

    Mirrors methods that assume a fixed fraction of the target is unknown;
    the cutoff therefore depends on the batch, not on a learned boundary.
    """
    if not 0.0 < reject_quantile < 1.0:
        raise ValueError(f"predict_fixed_ratio: quantile must be in (0, 1), got {reject_quantile}")
    base = predict(params, x, threshold=0.5)
    cut = np.quantile(base.anomaly_score, 1.0 - reject_quantile)
    final = np.where(base.anomaly_score >= cut, base.unknown_label, base.closed_argmax)
    return PredictionOutcome(
        closed_argmax=base.closed_argmax,
        known_prob=base.known_prob,
        final_label=final,
        anomaly_score=base.anomaly_score,
        unknown_label=base.unknown_label,
        threshold=float(1.0 - cut),
        closed_logits=base.closed_logits,
    )


def h_score(acc_known: float, acc_unknown: float) -> float:
    """Harmonic mean of known-class and unknown-rejection accuracy; 0 when
    both are 0."""
    for v in (acc_known, acc_unknown):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"h_score: accuracies must lie in [0, 1], got {v}")
    if acc_known == 0.0 and acc_unknown == 0.0:
        return 0.0
    return 2.0 * acc_known * acc_unknown / (acc_known + acc_unknown)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the group mean."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.shape[0])
    sx = x[order]
    i = 0
    while i < sx.shape[0]:
        j = i
        while j + 1 < sx.shape[0] and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(anomaly_scores: np.ndarray, is_unknown: np.ndarray) -> float:
    """Mann-Whitney statistic: the fraction of (unknown, known) pairs where
    the unknown sample scores strictly higher, plus half of the tied pairs.

    Computed via average ranks, which equals the pairwise count exactly.
    """
    scores = np.asarray(anomaly_scores, dtype=np.float64)
    flags = np.asarray(is_unknown, dtype=bool)
    if scores.shape != flags.shape or scores.ndim != 1:
        raise ValueError("auroc: scores and flags must be aligned 1-D arrays")
    n_unknown = int(flags.sum())
    n_known = scores.shape[0] - n_unknown
    if n_unknown == 0 or n_known == 0:
        raise UndefinedMetricError(
            f"auroc undefined: need both classes, got {n_known} known / {n_unknown} unknown"
        )
    ranks = _average_ranks(scores)
    u = ranks[flags].sum() - n_unknown * (n_unknown + 1) / 2.0
    return float(u / (n_unknown * n_known))


def baseline_scores(closed_logits: np.ndarray, kind: str) -> np.ndarray:
    """Anomaly scores computable from the closed-set head alone.

    kind="softmax": 1 - max softmax probability. kind="entropy": Shannon
    entropy of the closed softmax normalized by log(C) into [0, 1].
    """
    logits = np.asarray(closed_logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ValueError(f"baseline_scores: expected (B, C) logits, got {logits.shape}")
    probs = softmax(logits, axis=1)
    if kind == "softmax":
        return 1.0 - probs.max(axis=1)
    if kind == "entropy":
        pc = clamp_prob(probs)
        ent = -(pc * np.log(pc)).sum(axis=1)
        return ent / np.log(logits.shape[1])
    raise ValueError(f"baseline_scores: unknown kind {kind!r}")


@dataclass
class MetricsReport:
    """All headline metrics; undefined ones are None, never silently 0."""

    h_score: float | None
    acc_common: float | None  # known-sample accuracy, rejection counts as error
    unk_accuracy: float | None  # fraction of unknown samples rejected
    acc_close: float | None  # closed-set argmax accuracy, rejection ignored
    overall_acc: float  # instance accuracy with unknown as its own class
    auroc: float | None
    n_known: int
    n_unknown: int
    per_class_accuracy: dict[int, float]
    per_class_count: dict[int, int]

    def to_json_dict(self) -> dict:
        return {
            "h_score": self.h_score,
            "acc_common": self.acc_common,
            "unk_accuracy": self.unk_accuracy,
            "acc_close": self.acc_close,
            "overall_acc": self.overall_acc,
            "auroc": self.auroc,
            "n_known": self.n_known,
            "n_unknown": self.n_unknown,
            "per_class_accuracy": {str(k): v for k, v in self.per_class_accuracy.items()},
            "per_class_count": {str(k): v for k, v in self.per_class_count.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"

    CSV_COLUMNS = ("h_score", "acc_common", "unk_accuracy", "acc_close",
                   "overall_acc", "auroc", "n_known", "n_unknown")

    def to_csv_row(self) -> list:
        vals = self.to_json_dict()
        return ["" if vals[c] is None else vals[c] for c in self.CSV_COLUMNS]


def compute_metrics(
    pred: PredictionOutcome, eval_labels: np.ndarray, num_known: int
) -> MetricsReport:
    """Score predictions against ground truth carrying the unknown sentinel.

    eval_labels must already map target-private classes to the sentinel
    num_known (see data.map_to_eval_labels). The reported h_score recombines
    exactly as h_score(acc_common, unk_accuracy).
    """
    labels = np.asarray(eval_labels, dtype=np.int64)
    if labels.shape != pred.final_label.shape:
        raise ValueError("compute_metrics: predictions and labels must be aligned")
    if num_known != pred.unknown_label:
        raise ValueError(
            f"compute_metrics: sentinel mismatch (labels use {num_known}, "
            f"predictions use {pred.unknown_label})"
        )
    if labels.min() < 0 or labels.max() > num_known:
        raise ValueError("compute_metrics: labels must lie in [0, num_known]")

    known_mask = labels < num_known
    unknown_mask = ~known_mask
    n_known = int(known_mask.sum())
    n_unknown = int(unknown_mask.sum())

    correct = pred.final_label == labels
    acc_common = float(correct[known_mask].mean()) if n_known else None
    unk_acc = float(correct[unknown_mask].mean()) if n_unknown else None
    acc_close = (
        float((pred.closed_argmax[known_mask] == labels[known_mask]).mean())
        if n_known
        else None
    )
    overall = float(correct.mean())
    h = h_score(acc_common, unk_acc) if (acc_common is not None and unk_acc is not None) else None
    auc = (
        auroc(pred.anomaly_score, unknown_mask) if (n_known and n_unknown) else None
    )

    per_acc: dict[int, float] = {}
    per_count: dict[int, int] = {}
    for cls in np.unique(labels):
        m = labels == cls
        per_acc[int(cls)] = float(correct[m].mean())
        per_count[int(cls)] = int(m.sum())

    return MetricsReport(
        h_score=h,
        acc_common=acc_common,
        unk_accuracy=unk_acc,
        acc_close=acc_close,
        overall_acc=overall,
        auroc=auc,
        n_known=n_known,
        n_unknown=n_unknown,
        per_class_accuracy=per_acc,
        per_class_count=per_count,
    )


def emit_histogram(
    pred: PredictionOutcome, eval_labels: np.ndarray, n_bins: int = 20
) -> list[tuple[float, float, int, int]]:
    """Anomaly-score histogram rows (bin_low, bin_high, known, unknown).

    Bins are equal-width over [0, 1]; n_bins must be even so the 0.5
    decision boundary always falls on a bin edge.
    """
    if n_bins < 2 or n_bins % 2 != 0:
        raise ValueError(f"emit_histogram: n_bins must be even and >= 2, got {n_bins}")
    labels = np.asarray(eval_labels, dtype=np.int64)
    if labels.shape != pred.anomaly_score.shape:
        raise ValueError("emit_histogram: predictions and labels must be aligned")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    unknown_mask = labels == pred.unknown_label
    known_counts, _ = np.histogram(pred.anomaly_score[~unknown_mask], bins=edges)
    unknown_counts, _ = np.histogram(pred.anomaly_score[unknown_mask], bins=edges)
    return [
        (float(edges[i]), float(edges[i + 1]), int(known_counts[i]), int(unknown_counts[i]))
        for i in range(n_bins)
    ]


def write_histogram_csv(rows: list[tuple[float, float, int, int]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "known", "unknown"])
        for low, high, known, unknown in rows:
            writer.writerow([repr(low), repr(high), known, unknown])


def write_metrics_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MetricsReport.CSV_COLUMNS)
        writer.writerow(report.to_csv_row())
