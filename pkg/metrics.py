#!/usr/bin/env python3
"""
SpecTf Cloud Screening - Metrics
================================

Binary cloud-detection evaluation with cloud as the positive class:

- Confusion counts under the rule score ≥ threshold → cloud
- ROC curve over every distinct score, AUC by the trapezoid rule (equal to
  the pairwise ranking probability with ties counted ½)
- F-beta family and the best-F1 threshold search
- The report table (TPR, FPR, ROC AUC, F1.0, F0.5, F0.25, F0.1,
  Binary Thresh., Learned Params.) and ROC points for plotting
"""

import json
import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from constants import CloudLabel, REPORT_BETAS, REPORT_ROWS
from errors import ContractError, UndefinedMetricError

logger = logging.getLogger(__name__)


@dataclass
class ScoredSet:
    """Per-record cloud scores (p_cloud) and true labels"""
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.scores.size != self.labels.size:
            raise ContractError(f"{self.scores.size} scores for {self.labels.size} labels")
        if not np.all(np.isfinite(self.scores)) or np.any((self.scores < 0) | (self.scores > 1)):
            raise ContractError("scores must be finite and in [0, 1]")
        if np.any((self.labels != CloudLabel.CLEAR) & (self.labels != CloudLabel.CLOUD)):
            raise ContractError("labels must be 0 (clear) or 1 (cloud)")

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def positives(self) -> int:
        return int(np.sum(self.labels == CloudLabel.CLOUD))

    @property
    def negatives(self) -> int:
        return int(np.sum(self.labels == CloudLabel.CLEAR))

    def require_both_classes(self, metric: str) -> None:
        if self.positives == 0 or self.negatives == 0:
            raise UndefinedMetricError(
                f"{metric} needs both classes; got {self.positives} cloud and "
                f"{self.negatives} clear records")


@dataclass(frozen=True)
class ConfusionCounts:
    """Counts with cloud as the positive class"""
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def tpr(self) -> float:
        if self.tp + self.fn == 0:
            raise UndefinedMetricError("TPR needs at least one cloud record")
        return self.tp / (self.tp + self.fn)

    @property
    def fpr(self) -> float:
        if self.fp + self.tn == 0:
            raise UndefinedMetricError("FPR needs at least one clear record")
        return self.fp / (self.fp + self.tn)


def confusion(scored: ScoredSet, threshold: float) -> ConfusionCounts:
    predicted = scored.scores >= threshold
    actual = scored.labels == CloudLabel.CLOUD
    return ConfusionCounts(
        tp=int(np.sum(predicted & actual)),
        fp=int(np.sum(predicted & ~actual)),
        tn=int(np.sum(~predicted & ~actual)),
        fn=int(np.sum(~predicted & actual)),
    )


@dataclass
class RocCurve:
    """
    ROC points from (0, 0) to (1, 1), one per distinct score.

    ``thresholds[i]`` produced point i under the ≥ rule; the first point
    uses +inf (nothing predicted cloud).
    """
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"fpr": self.fpr, "tpr": self.tpr})


def roc_auc(scored: ScoredSet) -> RocCurve:
    """
    ROC curve and trapezoid AUC.

    Raises:
        UndefinedMetricError: single-class set
    """
    scored.require_both_classes("ROC AUC")
    order = np.argsort(-scored.scores, kind="mergesort")
    scores = scored.scores[order]
    positive = (scored.labels[order] == CloudLabel.CLOUD).astype(np.int64)

    # last index of each run of tied scores
    ends = np.flatnonzero(np.diff(scores) != 0)
    ends = np.append(ends, scores.size - 1)
    tp = np.cumsum(positive)[ends]
    fp = np.cumsum(1 - positive)[ends]

    tpr = np.concatenate([[0.0], tp / scored.positives])
    fpr = np.concatenate([[0.0], fp / scored.negatives])
    thresholds = np.concatenate([[np.inf], scores[ends]])
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)


def f_beta_score(precision: float, recall: float, beta: float = 1.0) -> float:
    """(1 + β²)·P·R / (β²·P + R) from precision and recall directly."""
    if beta <= 0:
        raise ContractError(f"beta must be positive, got {beta}")
    if precision == 0 and recall == 0:
        return 0.0
    b2 = beta * beta
    return (1.0 + b2) * precision * recall / (b2 * precision + recall)


def f_beta(counts: ConfusionCounts, beta: float = 1.0) -> float:
    """
    F-beta from confusion counts.

    Returns 0 when TP = 0 and there is at least one error.

    Raises:
        UndefinedMetricError: TP = FP = FN = 0
        ContractError: beta ≤ 0
    """
    if beta <= 0:
        raise ContractError(f"beta must be positive, got {beta}")
    if counts.tp == 0:
        if counts.fp == 0 and counts.fn == 0:
            raise UndefinedMetricError("F-beta is undefined with no positives predicted or present")
        return 0.0
    precision = counts.tp / (counts.tp + counts.fp)
    recall = counts.tp / (counts.tp + counts.fn)
    return f_beta_score(precision, recall, beta)


def candidate_thresholds(scored: ScoredSet) -> np.ndarray:
    """Distinct scores plus 0 and 1, ascending."""
    return np.unique(np.concatenate([scored.scores, [0.0, 1.0]]))


def best_threshold(scored: ScoredSet, beta: float = 1.0) -> Tuple[float, float]:
    """
    Threshold maximizing F-beta over the distinct scores plus 0 and 1.

    Returns:
        (threshold, score); ties go to the lowest threshold

    Raises:
        UndefinedMetricError: single-class set
    """
    scored.require_both_classes("best threshold")
    best_t, best_score = 0.0, -1.0
    for threshold in candidate_thresholds(scored):
        score = f_beta(confusion(scored, threshold), beta)
        if score > best_score:
            best_t, best_score = float(threshold), score
    return best_t, best_score


# =============================================================================
# REPORT
# =============================================================================

@dataclass
class MetricReport:
    """One evaluated score source, in report row order"""
    tpr: float
    fpr: float
    roc_auc: float
    f_scores: Dict[float, float]
    threshold: float
    learned_params: Optional[int]
    records: int

    def rows(self) -> List[Tuple[str, str]]:
        values = [f"{self.tpr:.6f}", f"{self.fpr:.6f}", f"{self.roc_auc:.6f}"]
        values += [f"{self.f_scores[beta]:.6f}" for beta in REPORT_BETAS]
        values.append(f"≥ {self.threshold:.6f}")
        values.append("n/a" if self.learned_params is None else f"{self.learned_params:,}")
        return list(zip(REPORT_ROWS, values))

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["f_scores"] = {f"F{beta}": score for beta, score in self.f_scores.items()}
        return data


def build_report(scored: ScoredSet, threshold: Optional[float] = None,
                 learned_params: Optional[int] = None) -> MetricReport:
    """
    Evaluate one score source.

    Every row uses one decision threshold: the best-F1 threshold unless
    ``threshold`` is given.
    """
    curve = roc_auc(scored)
    if threshold is None:
        threshold, _ = best_threshold(scored, 1.0)
    counts = confusion(scored, threshold)
    report = MetricReport(
        tpr=counts.tpr,
        fpr=counts.fpr,
        roc_auc=curve.auc,
        f_scores={beta: f_beta(counts, beta) for beta in REPORT_BETAS},
        threshold=float(threshold),
        learned_params=learned_params,
        records=len(scored),
    )
    logger.info("evaluated %d records: AUC %.4f, F1 %.4f at threshold %.4f",
                len(scored), report.roc_auc, report.f_scores[1.0], report.threshold)
    return report


def format_report(reports: Dict[str, MetricReport]) -> str:
    """Plain-text table: one row per metric, one column per score source."""
    frame = pd.DataFrame({"Metric": REPORT_ROWS})
    for name, report in reports.items():
        frame[name] = [value for _, value in report.rows()]
    return frame.to_string(index=False)


def write_report(reports: Dict[str, MetricReport], path: str,
                 json_path: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(format_report(reports) + "\n")
    if json_path:
        with open(json_path, "w", encoding="utf-8") as handle:
            json.dump({name: report.to_dict() for name, report in reports.items()}, handle, indent=2)


def write_roc_points(curve: RocCurve, path: str) -> None:
    curve.to_frame().to_csv(path, index=False, float_format="%.9g")


def pairwise_auc(scored: ScoredSet) -> float:
    """Mann-Whitney statistic with ties counted ½; O(P·N), for cross-checks."""
    scored.require_both_classes("pairwise AUC")
    pos = scored.scores[scored.labels == CloudLabel.CLOUD]
    neg = scored.scores[scored.labels == CloudLabel.CLEAR]
    greater = np.sum(pos[:, None] > neg[None, :])
    ties = np.sum(pos[:, None] == neg[None, :])
    return float((greater + 0.5 * ties) / (pos.size * neg.size))
