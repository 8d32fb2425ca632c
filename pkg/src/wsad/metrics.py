"""Image-level evaluation: AUROC, accuracy and F1 from scored results.

AUROC is the rank statistic (Mann-Whitney) with average ranks for ties, so it
is invariant under any strictly monotone transform of the scores.  Accuracy
and F1 are reported at the threshold that maximizes F1 over all distinct
scores (predict anomaly when score >= threshold, smaller threshold wins
ties); the convention is stated here because cross-paper comparisons depend
on it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .inference import ImageResult

__all__ = [
    "UndefinedMetricError",
    "EvalReport",
    "rank_auroc",
    "auroc",
    "threshold_and_classify",
    "build_report",
    "aggregate_runs",
    "report_markdown",
]


class UndefinedMetricError(ValueError):
    """Metric undefined because only one class is present."""


def _tied_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the average of their rank range."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        # ranks i+1 .. j+1 share the average (i + j) / 2 + 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def rank_auroc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Rank-based AUROC with tie correction.

    (sum of positive ranks - n_pos*(n_pos+1)/2) / (n_pos * n_neg), with
    average ranks for tied scores.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise ValueError("labels and scores must be 1-D and equally long")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUROC needs both classes, got {n_pos} positives and {n_neg} negatives"
        )
    ranks = _tied_ranks(scores)
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _labels_scores(results: Sequence[ImageResult]):
    labels, scores = [], []
    for r in results:
        if r.label is None:
            raise ValueError(f"result {r.image_id!r} has no label")
        labels.append(int(r.label))
        scores.append(float(r.score))
    return np.asarray(labels), np.asarray(scores, dtype=np.float64)


def auroc(results: Sequence[ImageResult]) -> float:
    """Rank-based AUROC over labeled image results."""
    labels, scores = _labels_scores(results)
    return rank_auroc(labels, scores)


def threshold_and_classify(results: Sequence[ImageResult]) -> tuple[float, float, float]:
    """Pick the F1-maximizing threshold and report (threshold, accuracy, f1).

    Every distinct score is a candidate threshold; predictions are anomalous
    when score >= threshold; ties on F1 go to the smaller threshold.
    """
    labels, scores = _labels_scores(results)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"classification metrics need both classes, got {n_pos}/{n_neg}"
        )
    best = None  # (f1, -threshold) maximized
    for t in np.unique(scores):
        pred = scores >= t
        tp = int(np.sum(pred & (labels == 1)))
        fp = int(np.sum(pred & (labels == 0)))
        fn = int(np.sum(~pred & (labels == 1)))
        f1 = 2.0 * tp / (2.0 * tp + fp + fn) if tp > 0 else 0.0
        acc = (tp + (n_neg - fp)) / (n_pos + n_neg)
        # strictly-greater keeps the smallest threshold among F1 ties
        if best is None or f1 > best[0]:
            best = (f1, float(t), acc)
    return best[1], best[2], best[0]


@dataclass
class EvalReport:
    """Image-level metrics, optionally aggregated over repeated runs."""

    auroc: float
    accuracy: float
    f1: float
    threshold: float
    n_normal: int
    n_anomaly: int
    runs: list["EvalReport"] = field(default_factory=list)
    std: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "auroc": self.auroc,
            "accuracy": self.accuracy,
            "f1": self.f1,
            "threshold": self.threshold,
            "n_normal": self.n_normal,
            "n_anomaly": self.n_anomaly,
        }
        if self.runs:
            out["runs"] = [r.to_dict() for r in self.runs]
            out["std"] = self.std
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "EvalReport":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        return cls(
            auroc=obj["auroc"],
            accuracy=obj["accuracy"],
            f1=obj["f1"],
            threshold=obj["threshold"],
            n_normal=obj["n_normal"],
            n_anomaly=obj["n_anomaly"],
            runs=[cls.from_dict(r) for r in obj.get("runs", [])],
            std=obj.get("std", {}),
        )


def build_report(results: Sequence[ImageResult]) -> EvalReport:
    """Compute all image-level metrics for one scored run."""
    labels, _ = _labels_scores(results)
    threshold, accuracy, f1 = threshold_and_classify(results)
    return EvalReport(
        auroc=auroc(results),
        accuracy=accuracy,
        f1=f1,
        threshold=threshold,
        n_normal=int(np.sum(labels == 0)),
        n_anomaly=int(np.sum(labels == 1)),
    )


def aggregate_runs(reports: Sequence[EvalReport]) -> EvalReport:
    """Mean and sample standard deviation over repeated runs.

    A single run aggregates to itself with zero std.
    """
    if len(reports) == 0:
        raise ValueError("need at least one report")

    def stats(values: list[float]) -> tuple[float, float]:
        mean = float(np.mean(values))
        std = 0.0 if len(values) < 2 else float(np.std(values, ddof=1))
        return mean, std

    metric_names = ("auroc", "accuracy", "f1", "threshold")
    means, stds = {}, {}
    for name in metric_names:
        means[name], stds[name] = stats([getattr(r, name) for r in reports])
    return EvalReport(
        auroc=means["auroc"],
        accuracy=means["accuracy"],
        f1=means["f1"],
        threshold=means["threshold"],
        n_normal=reports[0].n_normal,
        n_anomaly=reports[0].n_anomaly,
        runs=list(reports),
        std=stds,
    )


def report_markdown(report: EvalReport) -> str:
    """A small Markdown table of the report (mean +/- std when aggregated)."""
    def cell(name: str) -> str:
        value = getattr(report, name) * 100.0
        if report.runs and name in report.std:
            return f"{value:.1f}±{report.std[name] * 100.0:.1f}"
        return f"{value:.1f}"

    lines = [
        "| Metric | Value |",
        "|--------|-------|",
        f"| AUROC | {cell('auroc')} |",
        f"| ACC | {cell('accuracy')} |",
        f"| F1 | {cell('f1')} |",
    ]
    return "\n".join(lines) + "\n"
