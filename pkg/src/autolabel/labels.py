"""Adaptive per-bucket soft labels.

One confidence value per transformation-distance bucket, initialized at 1.0
(one-hot) and nudged once per epoch by the calibration measured on that
bucket's augmented validation set:

    y'(S) <- y(S) - alpha * ECE(Q(S)) * sign(Conf(Q(S)) - Acc(Q(S)))

then clipped to [Acc(Q(S)), 1]. sign(0) is 0, so zero calibration error is a
fixed point. The full soft label puts the bucket confidence on the true
class and spreads the remainder uniformly over the other K-1 classes; mixup
needs an asymmetric two-class variant. Static baselines (one-hot, label
smoothing, power-transition) live here too.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .augment import BucketKey
from .calibration import CalibrationReport
from .errors import ConfigError, InvalidBucketError

LABEL_MODES = ("one_hot", "ls", "ccat", "autolabel")


@dataclass
class LabelTable:
    """BucketKey -> true-class confidence, plus the update step size."""

    n_classes: int
    alpha: float
    entries: dict = field(default_factory=dict)
    epoch: int = 0

    def confidence(self, bucket: BucketKey) -> float:
        try:
            return self.entries[bucket]
        except KeyError:
            raise InvalidBucketError(f"unknown bucket {bucket}") from None

    def snapshot(self) -> dict:
        return dict(self.entries)


def init_label_table(n_classes: int, buckets, alpha: float) -> LabelTable:
    """Every bucket starts at confidence 1.0 (one-hot), epoch 0."""
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    buckets = list(buckets)
    if not buckets:
        raise ConfigError("bucket list is empty")
    if len(set(buckets)) != len(buckets):
        raise ConfigError("duplicate buckets in label table")
    table = LabelTable(n_classes=n_classes, alpha=alpha)
    table.entries = {b: 1.0 for b in buckets}
    return table


def update_bucket(table: LabelTable, bucket: BucketKey,
                  val_report: CalibrationReport) -> LabelTable:
    """One epoch-boundary update from the bucket's validation calibration.

    Step magnitude is alpha * ECE; direction opposes the over/under
    confidence sign; the result is clipped to [Acc, 1]. Other buckets are
    untouched."""
    current = table.confidence(bucket)
    gap = val_report.mean_confidence - val_report.accuracy
    direction = 0.0 if gap == 0.0 else float(np.sign(gap))
    raw = current - table.alpha * val_report.ece * direction
    table.entries[bucket] = min(1.0, max(val_report.accuracy, raw))
    return table


def soft_label(table: LabelTable, bucket: BucketKey, true_class: int) -> np.ndarray:
    """Bucket confidence on the true class, remainder spread uniformly."""
    k = table.n_classes
    if not 0 <= true_class < k:
        raise InvalidBucketError(f"class {true_class} outside [0, {k})")
    conf = table.confidence(bucket)
    out = np.full(k, (1.0 - conf) / (k - 1), dtype=np.float64)
    out[true_class] = conf
    return out


def mixup_soft_label(table: LabelTable, bucket: BucketKey, y_i: int, y_j: int,
                     gamma_prime: float) -> np.ndarray:
    """Two-class variant for mixed pairs with gamma' in [0, 0.5].

    The dominant class y_j takes the bucket confidence; y_i takes
    min(1 - conf_j, gamma'/(1-gamma') * conf_j); the rest is spread over the
    remaining K-2 classes. Falls back to soft_label when the pair shares a
    class."""
    if not 0.0 <= gamma_prime <= 0.5:
        raise ConfigError(f"gamma' must be in [0, 0.5], got {gamma_prime}")
    if y_i == y_j:
        return soft_label(table, bucket, y_j)
    k = table.n_classes
    conf_j = table.confidence(bucket)
    conf_i = min(1.0 - conf_j, gamma_prime / (1.0 - gamma_prime) * conf_j)
    rest = 1.0 - conf_i - conf_j
    assert rest >= -1e-12, "mixup remainder went negative"
    out = np.full(k, max(rest, 0.0) / (k - 2) if k > 2 else 0.0, dtype=np.float64)
    out[y_j] = conf_j
    out[y_i] = conf_i
    return out


@dataclass
class BaselineConfig:
    mode: str = "one_hot"
    rho: float = 0.0

    def __post_init__(self):
        if self.mode not in LABEL_MODES:
            raise ConfigError(f"unknown label mode {self.mode!r}")
        if self.rho < 0:
            raise ConfigError(f"rho must be >= 0, got {self.rho}")


def baseline_label(config: BaselineConfig, true_class: int, n_classes: int,
                   delta_inf: float = 0.0, eps: float = 0.0) -> np.ndarray:
    """Static label schedules: one_hot, label smoothing (1-rho on the true
    class), or the power transition g(delta) = (1 - min(1, |delta|/eps))^rho
    blending one-hot with uniform for adversarial examples."""
    k = n_classes
    onehot = np.zeros(k, dtype=np.float64)
    onehot[true_class] = 1.0
    if config.mode == "one_hot":
        return onehot
    if config.mode == "ls":
        out = np.full(k, config.rho / (k - 1), dtype=np.float64)
        out[true_class] = 1.0 - config.rho
        return out
    if config.mode == "ccat":
        if eps <= 0:
            raise ConfigError("power-transition labels need eps > 0")
        g = (1.0 - min(1.0, delta_inf / eps)) ** config.rho
        return g * onehot + (1.0 - g) * np.full(k, 1.0 / k)
    raise ConfigError(f"baseline_label cannot produce mode {config.mode!r}")


def labels_csv(history) -> str:
    """Label-table trajectory as CSV: epoch, family, coords, y_true_conf.

    `history` is a list of (epoch, snapshot dict) pairs."""
    buf = io.StringIO()
    buf.write("epoch,family,coords,y_true_conf\n")
    for epoch, snapshot in history:
        for bucket in sorted(snapshot, key=lambda b: (b.family, b.coords)):
            coords = "/".join(str(c) for c in bucket.coords)
            buf.write(f"{epoch},{bucket.family},{coords},{snapshot[bucket]!r}\n")
    return buf.getvalue()
