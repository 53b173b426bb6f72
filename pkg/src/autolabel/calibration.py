"""Expected calibration error and related aggregates.

ECE = sum_r (|B_r|/m) * |acc(B_r) - conf(B_r)| over R equal-width confidence
bins partitioning (0, 1] with right-closed edges r/R. A confidence of
exactly 0 lands in bin 1 so the binning is total. All statistics are
accumulated in float64.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import AutoLabelError


@dataclass
class BinStats:
    count: int
    acc: float
    conf: float


@dataclass
class CalibrationReport:
    ece: float
    accuracy: float
    mean_confidence: float
    bins: list[BinStats] = field(default_factory=list)
    n_bins: int = 0
    n_samples: int = 0


def report_from_confidence(confidence: np.ndarray, correct: np.ndarray,
                           n_bins: int) -> CalibrationReport:
    """Build the report from per-sample confidence and 0/1 correctness."""
    confidence = np.asarray(confidence, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    m = confidence.shape[0]
    if m < 1:
        raise AutoLabelError("empty prediction set")
    if n_bins < 1:
        raise AutoLabelError(f"need at least one bin, got {n_bins}")
    edges = np.arange(1, n_bins + 1, dtype=np.float64) / n_bins
    # right-closed bins ((r-1)/R, r/R]; conf 0 falls in bin 1, conf 1 in bin R
    idx = np.searchsorted(edges, confidence, side="left")
    idx = np.minimum(idx, n_bins - 1)

    bins: list[BinStats] = []
    ece = 0.0
    for r in range(n_bins):
        mask = idx == r
        count = int(mask.sum())
        if count == 0:
            bins.append(BinStats(count=0, acc=0.0, conf=0.0))
            continue
        acc = float(correct[mask].mean())
        conf = float(confidence[mask].mean())
        bins.append(BinStats(count=count, acc=acc, conf=conf))
        ece += (count / m) * abs(acc - conf)

    return CalibrationReport(ece=float(ece),
                             accuracy=float(correct.mean()),
                             mean_confidence=float(confidence.mean()),
                             bins=bins, n_bins=n_bins, n_samples=m)


def calibration_report(predictions, labels, n_bins: int = 15) -> CalibrationReport:
    """Report over a list of nn.Prediction against integer class labels."""
    if len(predictions) == 0:
        raise AutoLabelError("empty prediction set")
    confidence = np.array([p.confidence for p in predictions], dtype=np.float64)
    correct = np.array([p.predicted_class == y for p, y in zip(predictions, labels)],
                       dtype=np.float64)
    if len(labels) != len(predictions):
        raise AutoLabelError("predictions and labels differ in length")
    return report_from_confidence(confidence, correct, n_bins)


def corrupted_aggregate(reports) -> tuple[float, float]:
    """Unweighted mean (accuracy, ece) over per-(kind, severity) reports."""
    if not reports:
        raise AutoLabelError("no reports to aggregate")
    acc = float(np.mean([r.accuracy for r in reports]))
    ece = float(np.mean([r.ece for r in reports]))
    return acc, ece


def accuracy_difference(method_clean: float, method_adv: float,
                        base_clean: float, base_adv: float) -> float:
    """(clean + adversarial accuracy) of the method minus the same sum for
    the baseline, in percentage points."""
    return (method_clean + method_adv) - (base_clean + base_adv)


def bins_csv(report: CalibrationReport) -> str:
    """Reliability-bin data as CSV: r, count, acc, conf."""
    buf = io.StringIO()
    buf.write("r,count,acc,conf\n")
    for r, b in enumerate(report.bins, start=1):
        buf.write(f"{r},{b.count},{b.acc!r},{b.conf!r}\n")
    return buf.getvalue()
