"""L-inf projected-gradient attacks and perturbation-distance buckets.

Training draws a fresh bound eps ~ U(0, eps_max] per sample; evaluation uses
a fixed eps with several random restarts. Every attack also considers the
unperturbed input as a candidate, so the returned loss never falls below the
clean loss.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .augment import BucketKey
from .errors import ConfigError
from . import nn

log = logging.getLogger(__name__)


@dataclass
class AttackConfig:
    eps_max: float = 0.01
    iterations: int = 10
    step_divisor: float = 4.0
    restarts: int = 1
    n_buckets: int = 10

    def __post_init__(self):
        if not 0.0 < self.eps_max <= 1.0:
            raise ConfigError(f"eps_max must be in (0, 1], got {self.eps_max}")
        if self.iterations < 1 or self.restarts < 1:
            raise ConfigError("iterations and restarts must be >= 1")
        if self.step_divisor <= 0:
            raise ConfigError("step_divisor must be positive")


def sample_eps(rng, eps_max: float) -> float:
    """One draw from U(0, eps_max] (zero excluded)."""
    if eps_max <= 0:
        raise ConfigError(f"eps_max must be positive, got {eps_max}")
    return float(eps_max * (1.0 - rng.random()))


def adv_bucket(eps: float, eps_max: float, n_buckets: int) -> BucketKey:
    """n = ceil(eps * N / eps_max); eps = 0 merges into bucket 1."""
    if eps < 0 or eps > eps_max:
        raise ConfigError(f"eps {eps} outside [0, {eps_max}]")
    if n_buckets < 1:
        raise ConfigError("bucket count must be >= 1")
    if eps == 0.0:
        return BucketKey("adversarial", (1,))
    n = math.ceil(Fraction(eps) * n_buckets / Fraction(eps_max))
    return BucketKey("adversarial", (n,))


def adv_bucket_space(n_buckets: int):
    return [BucketKey("adversarial", (n,)) for n in range(1, n_buckets + 1)]


def _batch_losses(model, x, y_onehot):
    """Per-sample soft-CE losses in float64 (no graph)."""
    probs = nn.probabilities(model, x)
    p = np.maximum(probs, nn.LOG_FLOOR)
    return -(y_onehot * np.log(p)).sum(axis=1)


def pgd_attack(model, x: np.ndarray, y: np.ndarray, eps, iterations: int,
               step, restarts: int, rng, zero_restart: bool = True) -> np.ndarray:
    """Best-of-restarts sign-gradient ascent inside the L-inf ball.

    x: batch (B, C, H, W) in [0, 1]; y: integer labels. eps and step may be
    scalars or per-sample vectors. Each restart starts at x + U(-eps, eps)
    (plus one delta=0 start when zero_restart is set), runs `iterations`
    sign steps on the one-hot cross entropy, and projects onto the ball and
    [0, 1] after every step. Per sample, the candidate with the largest loss
    wins; the unperturbed input always competes, so the attack never returns
    anything weaker than x itself. Samples whose gradients go non-finite are
    passed through unattacked (logged).
    """
    x = np.asarray(x)
    b = x.shape[0]
    tail = (1,) * (x.ndim - 1)

    def per_sample(v):
        arr = np.asarray(v, dtype=np.float64)
        return arr.reshape((b,) + tail) if arr.ndim else arr.reshape((1,) + tail)

    eps_v = per_sample(eps)
    step_v = per_sample(step)
    onehot = np.eye(model.n_classes, dtype=np.float64)[np.asarray(y)]

    # ball bounds in the output dtype; endpoints are quantized and reprojected
    # before the best-of comparison so the loss guarantee is exact as stored
    x64 = x.astype(np.float64)
    lo = np.clip(x64 - eps_v, 0.0, 1.0).astype(x.dtype)
    hi = np.clip(x64 + eps_v, 0.0, 1.0).astype(x.dtype)

    best = x.copy()
    best_loss = _batch_losses(model, x, onehot)

    starts = ["zero"] * int(zero_restart) + ["random"] * restarts
    for kind in starts:
        if kind == "zero":
            adv = x64.copy()
        else:
            noise = rng.uniform(-1.0, 1.0, size=x.shape) * eps_v
            adv = np.clip(x64 + noise, 0.0, 1.0)
        dead = np.zeros(b, dtype=bool)
        for _ in range(iterations):
            g = nn.gradients(model, adv, onehot, wrt="input").inputs
            finite = np.isfinite(g).reshape(b, -1).all(axis=1)
            if not finite.all():
                dead |= ~finite
                g = np.where(finite.reshape((b,) + tail), g, 0.0)
            adv = adv + step_v * np.sign(g)
            adv = np.clip(adv, x64 - eps_v, x64 + eps_v)
            adv = np.clip(adv, 0.0, 1.0)
        if dead.any():
            log.warning("pgd: %d sample(s) skipped due to non-finite gradients",
                        int(dead.sum()))
            adv[dead] = x64[dead]
        cand = np.minimum(np.maximum(adv.astype(x.dtype), lo), hi)
        losses = _batch_losses(model, cand, onehot)
        better = losses > best_loss
        best[better] = cand[better]
        best_loss = np.where(better, losses, best_loss)

    return best


def attack_dataset(model, images: np.ndarray, labels: np.ndarray,
                   eps, config: AttackConfig, rng,
                   zero_restart: bool = True, batch_size: int = 256) -> np.ndarray:
    """PGD over a whole array in batches; eps may be scalar or per-sample."""
    out = np.empty_like(images)
    eps_arr = np.broadcast_to(np.asarray(eps, dtype=np.float64), (len(images),))
    for start in range(0, len(images), batch_size):
        sl = slice(start, start + batch_size)
        e = eps_arr[sl]
        out[sl] = pgd_attack(model, images[sl], labels[sl], e,
                             iterations=config.iterations,
                             step=e / config.step_divisor,
                             restarts=config.restarts, rng=rng,
                             zero_restart=zero_restart)
    return out
