"""Multilabel evaluation: micro/macro AUC, micro/macro F1 with validation-set
threshold search, precision/recall at k, and cost-sensitive thresholds.

AUC is the Mann-Whitney statistic with 0.5 credit for ties, computed by
sort-and-midrank in O(n log n); it equals brute-force pair counting exactly.
A label whose test column is single-class has undefined AUC and is excluded
from the macro average.

F1 thresholds predict positive when score >= threshold.  The sweep examines
the midpoints of adjacent sorted unique scores plus {0, 1}; ties in F1 break
toward the larger threshold (fewer predicted positives).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError


@dataclass
class PredictionMatrix:
    """Scores and ground truth, both (n_examples, n_labels)."""

    scores: np.ndarray
    labels: np.ndarray

    def validate(self) -> None:
        if self.scores.shape != self.labels.shape or self.scores.ndim != 2:
            raise DataError(
                f"scores {self.scores.shape} and labels {self.labels.shape} "
                f"must be matching 2-d arrays"
            )
        if not np.all(np.isfinite(self.scores)):
            raise DataError("scores contain non-finite values")
        if self.scores.min() < 0.0 or self.scores.max() > 1.0:
            raise DataError("scores must lie in [0, 1]")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise DataError("labels must be binary")

    @property
    def n_labels(self) -> int:
        return self.scores.shape[1]


@dataclass
class ThresholdSet:
    global_threshold: float
    per_label_thresholds: np.ndarray

    def validate(self) -> None:
        vals = np.append(self.per_label_thresholds, self.global_threshold)
        if vals.min() < 0.0 or vals.max() > 1.0:
            raise ConfigError("thresholds must lie in [0, 1]")


@dataclass
class MetricReport:
    micro_auc: float | None
    macro_auc: float | None
    micro_f1: float
    macro_f1: float
    precision_at_k: float
    recall_at_k: float
    k: int
    thresholds: ThresholdSet
    per_label: list[dict]  # {"label", "auc", "f1", "precision", "recall"}

    def to_dict(self) -> dict:
        return {
            "micro_auc": self.micro_auc,
            "macro_auc": self.macro_auc,
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            f"precision_at_{self.k}": self.precision_at_k,
            f"recall_at_{self.k}": self.recall_at_k,
            "k": self.k,
            "thresholds": {
                "global": self.thresholds.global_threshold,
                "per_label": [float(t) for t in self.thresholds.per_label_thresholds],
            },
            "per_label": self.per_label,
        }


# ---------------------------------------------------------------------------
# AUC
# ---------------------------------------------------------------------------


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Mann-Whitney AUC with midrank tie handling; None if single-class."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DataError(f"shape mismatch: {scores.shape} vs {labels.shape}")
    pos = int(np.sum(labels == 1))
    neg = labels.size - pos
    if pos == 0 or neg == 0:
        return None
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    cum = np.cumsum(counts)
    midrank = cum - (counts - 1) / 2.0  # average rank within each tie group
    rank_sum_pos = float(np.sum(midrank[inverse][labels == 1]))
    return (rank_sum_pos - pos * (pos + 1) / 2.0) / (pos * neg)


def micro_auc(pm: PredictionMatrix) -> float | None:
    """AUC on the flattened score and label matrices."""
    return roc_auc(pm.scores.ravel(), pm.labels.ravel())


def macro_auc(pm: PredictionMatrix) -> float | None:
    """Mean of defined per-label AUCs; None when every label is single-class."""
    aucs = [
        roc_auc(pm.scores[:, l], pm.labels[:, l]) for l in range(pm.n_labels)
    ]
    defined = [a for a in aucs if a is not None]
    if not defined:
        return None
    return float(np.mean(defined))


# ---------------------------------------------------------------------------
# F1 and threshold search
# ---------------------------------------------------------------------------


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    if min(tp, fp, fn) < 0:
        raise DataError(f"negative confusion counts: tp={tp}, fp={fp}, fn={fn}")
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2.0 * tp / denom


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """Midpoints of adjacent sorted unique scores, plus 0 and 1, descending."""
    uniq = np.unique(np.asarray(scores, dtype=float).ravel())
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    return np.unique(np.concatenate([[0.0, 1.0], mids]))[::-1]


def sweep_f1_threshold(scores: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Best (threshold, F1) over the candidate set; F1 ties pick the larger
    threshold."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if scores.size == 0:
        raise DataError("cannot sweep thresholds on an empty set")
    total_pos = int(np.sum(labels == 1))
    order = np.argsort(-scores, kind="stable")
    s_desc = scores[order]
    y_desc = labels[order]
    # Group boundaries of equal scores, descending.
    boundary = np.flatnonzero(np.diff(s_desc)) + 1
    group_ends = np.append(boundary, s_desc.size)  # cumulative item counts
    cum_tp = np.cumsum(y_desc)[group_ends - 1]
    uniq_desc = s_desc[np.append(0, boundary)]

    def f1_at(tp: int, pp: int) -> float:
        denom = pp + total_pos
        return 0.0 if denom == 0 else 2.0 * tp / denom

    # Candidate 1.0: predicted positive iff score >= 1.0.
    j_one = int(np.sum(uniq_desc >= 1.0))
    tp = int(cum_tp[j_one - 1]) if j_one > 0 else 0
    pp = int(group_ends[j_one - 1]) if j_one > 0 else 0
    best_thr = 1.0
    best_f1 = f1_at(tp, pp)
    # Midpoints between unique scores, then candidate 0.0 (everything positive).
    for j in range(len(uniq_desc) - 1):
        thr = (uniq_desc[j] + uniq_desc[j + 1]) / 2.0
        f1 = f1_at(int(cum_tp[j]), int(group_ends[j]))
        if f1 > best_f1:
            best_f1, best_thr = f1, float(thr)
    f1_all = f1_at(total_pos, int(scores.size))
    if f1_all > best_f1:
        best_f1, best_thr = f1_all, 0.0
    return best_thr, best_f1


def select_threshold_micro(pm: PredictionMatrix) -> float:
    """One global threshold maximizing flattened F1 on the given set."""
    if pm.scores.size == 0:
        raise DataError("empty validation set")
    thr, _ = sweep_f1_threshold(pm.scores.ravel(), pm.labels.ravel())
    return thr


def select_thresholds_macro(pm: PredictionMatrix) -> np.ndarray:
    """Per-label thresholds, each maximizing that label's F1 independently."""
    if pm.scores.size == 0:
        raise DataError("empty validation set")
    return np.array(
        [
            sweep_f1_threshold(pm.scores[:, l], pm.labels[:, l])[0]
            for l in range(pm.n_labels)
        ]
    )


def _confusion(scores, labels, threshold: float) -> tuple[int, int, int]:
    if not (0.0 <= threshold <= 1.0):
        raise ConfigError(f"threshold must be in [0, 1], got {threshold}")
    pred = scores >= threshold
    actual = labels == 1
    tp = int(np.sum(pred & actual))
    fp = int(np.sum(pred & ~actual))
    fn = int(np.sum(~pred & actual))
    return tp, fp, fn


def micro_f1(pm: PredictionMatrix, global_threshold: float) -> float:
    """F1 with confusion counts pooled over every (example, label) cell."""
    tp, fp, fn = _confusion(pm.scores.ravel(), pm.labels.ravel(), global_threshold)
    return f1_from_counts(tp, fp, fn)


def macro_f1(pm: PredictionMatrix, per_label_thresholds: np.ndarray) -> float:
    """Mean of per-label F1 scores at per-label thresholds (0/0 counts as 0)."""
    if len(per_label_thresholds) != pm.n_labels:
        raise DataError(
            f"expected {pm.n_labels} thresholds, got {len(per_label_thresholds)}"
        )
    f1s = []
    for l in range(pm.n_labels):
        tp, fp, fn = _confusion(
            pm.scores[:, l], pm.labels[:, l], float(per_label_thresholds[l])
        )
        f1s.append(f1_from_counts(tp, fp, fn))
    return float(np.mean(f1s))


# ---------------------------------------------------------------------------
# Ranking metrics
# ---------------------------------------------------------------------------


def _topk_hits(pm: PredictionMatrix, k: int) -> np.ndarray:
    if not (1 <= k <= pm.n_labels):
        raise ConfigError(f"k must be in [1, {pm.n_labels}], got {k}")
    # Stable sort on negated scores: equal scores keep the lower label index.
    top = np.argsort(-pm.scores, axis=1, kind="stable")[:, :k]
    rows = np.arange(pm.scores.shape[0])[:, None]
    return pm.labels[rows, top].sum(axis=1)


def precision_at_k(pm: PredictionMatrix, k: int) -> float:
    """Fraction of true positives among each example's k highest-scoring
    labels, averaged over all examples."""
    hits = _topk_hits(pm, k)
    return float(hits.mean() / k)


def recall_at_k(pm: PredictionMatrix, k: int) -> float:
    """Fraction of each example's positives captured in its top k, averaged
    over examples that have at least one positive (0.0 if none do)."""
    hits = _topk_hits(pm, k)
    positives = pm.labels.sum(axis=1)
    has_pos = positives > 0
    if not has_pos.any():
        return 0.0
    return float(np.mean(hits[has_pos] / positives[has_pos]))


def precision_at_k_bound(pm: PredictionMatrix, k: int) -> float:
    """Best achievable precision@k: mean(min(positives_i, k)) / k."""
    positives = pm.labels.sum(axis=1)
    return float(np.mean(np.minimum(positives, k)) / k)


def cost_threshold(cost_ratio: float) -> float:
    """Optimal calibrated threshold for a false-positive/false-negative cost
    ratio: ratio / (1 + ratio)."""
    if cost_ratio < 0:
        raise ConfigError(f"cost ratio must be nonnegative, got {cost_ratio}")
    return cost_ratio / (1.0 + cost_ratio)


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------


def evaluate(
    pm: PredictionMatrix,
    thresholds: ThresholdSet,
    k: int,
    label_names: list[str] | None = None,
) -> MetricReport:
    """Assemble the full metric report with a per-label breakdown sorted by F1."""
    pm.validate()
    thresholds.validate()
    if label_names is None:
        label_names = [f"label_{l:03d}" for l in range(pm.n_labels)]
    if len(label_names) != pm.n_labels:
        raise DataError(
            f"expected {pm.n_labels} label names, got {len(label_names)}"
        )

    per_label = []
    for l in range(pm.n_labels):
        thr = float(thresholds.per_label_thresholds[l])
        tp, fp, fn = _confusion(pm.scores[:, l], pm.labels[:, l], thr)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        per_label.append(
            {
                "label": label_names[l],
                "f1": f1_from_counts(tp, fp, fn),
                "auc": roc_auc(pm.scores[:, l], pm.labels[:, l]),
                "precision": precision,
                "recall": recall,
            }
        )
    per_label.sort(key=lambda row: -row["f1"])

    return MetricReport(
        micro_auc=micro_auc(pm),
        macro_auc=macro_auc(pm),
        micro_f1=micro_f1(pm, thresholds.global_threshold),
        macro_f1=macro_f1(pm, thresholds.per_label_thresholds),
        precision_at_k=precision_at_k(pm, k),
        recall_at_k=recall_at_k(pm, k),
        k=k,
        thresholds=thresholds,
        per_label=per_label,
    )


def write_report_json(path: str, report: MetricReport) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def write_per_label_csv(path: str, report: MetricReport) -> None:
    """Per-label table: condition, F1, AUC, precision, recall (F1-descending)."""
    tmp = path + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["condition", "f1", "auc", "precision", "recall"])
        for row in report.per_label:
            auc = "" if row["auc"] is None else repr(row["auc"])
            writer.writerow(
                [row["label"], repr(row["f1"]), auc, repr(row["precision"]),
                 repr(row["recall"])]
            )
    os.replace(tmp, path)
