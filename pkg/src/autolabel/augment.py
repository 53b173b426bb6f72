"""Image augmentations and their transformation-distance bucket keys.

Images are float32 (C, H, W) arrays in [0, 1]. Every augmented output stays
in [0, 1] and keeps its shape. Geometry ops use bilinear interpolation with
zero fill outside the frame.

Magnitude-to-parameter maps, linear in m (1..10):
    rotation      +/- 3m degrees
    shear x/y     +/- 0.03m shear factor
    translate x/y +/- 0.03m * dim pixels
    posterize     8 - floor(4m/10) bits, floored at 1 bit
    solarize      invert above threshold 1 - m/10
    color         saturation blend factor 1 +/- 0.09m
    autocontrast, equalize: parameterless (magnitude pinned to 1)
Signs are chosen uniformly at random when an rng is supplied, positive
otherwise. Magnitude 0 is a test-only identity setting for every op.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigError, ShapeMismatchError

RANDAUG_OPS = ("color", "rotation", "autocontrast", "equalize", "posterize",
               "solarize", "shear_x", "shear_y", "translate_x", "translate_y")
PARAMETERLESS_OPS = ("autocontrast", "equalize")


class BucketKey(NamedTuple):
    """Discrete transformation-distance coordinate: an augmentation family
    plus its per-family indices. Keys the adaptive label table."""

    family: str
    coords: tuple

    def __str__(self):
        return ":".join([self.family] + [str(c) for c in self.coords])


def parse_bucket(text: str) -> BucketKey:
    parts = text.split(":")
    family, raw = parts[0], parts[1:]
    coords = tuple(int(c) if c.lstrip("-").isdigit() else c for c in raw)
    return BucketKey(family, coords)


@dataclass
class RandAugParams:
    op_type: str
    magnitude: int


@dataclass
class AugMixParams:
    depth: int
    lam: float
    chain_ops: tuple


@dataclass
class MixupPair:
    gamma: float
    beta: Optional[float] = None
    partner_index: Optional[int] = None


# ---------------------------------------------------------------------------
# raw transforms

def _bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample img (C,H,W) at float source coords, zero outside the frame."""
    _, h, w = img.shape
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    out = np.zeros((img.shape[0],) + xs.shape, dtype=np.float64)
    for dy, dx, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                        (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        xi = x0 + dx
        yi = y0 + dy
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        vals = img[:, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        out += (wgt * valid)[None] * vals
    return out.astype(img.dtype)


def _warp(img: np.ndarray, a: float, b: float, c: float, d: float,
          tx: float = 0.0, ty: float = 0.0) -> np.ndarray:
    """Inverse-map affine warp about the image center: an output pixel with
    centered coords (u, v) samples the source at (a*u + b*v + tx, c*u + d*v + ty)."""
    _, h, w = img.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    u, v = np.meshgrid(np.arange(w, dtype=np.float64) - cx,
                       np.arange(h, dtype=np.float64) - cy)
    xs = a * u + b * v + tx + cx
    ys = c * u + d * v + ty + cy
    return _bilinear(img, xs, ys)


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    if degrees == 0.0:
        return img.copy()
    t = math.radians(degrees)
    return _warp(img, math.cos(t), math.sin(t), -math.sin(t), math.cos(t))


def shear_x(img: np.ndarray, factor: float) -> np.ndarray:
    if factor == 0.0:
        return img.copy()
    return _warp(img, 1.0, factor, 0.0, 1.0)


def shear_y(img: np.ndarray, factor: float) -> np.ndarray:
    if factor == 0.0:
        return img.copy()
    return _warp(img, 1.0, 0.0, factor, 1.0)


def translate_x(img: np.ndarray, pixels: float) -> np.ndarray:
    if pixels == 0.0:
        return img.copy()
    return _warp(img, 1.0, 0.0, 0.0, 1.0, tx=-pixels)


def translate_y(img: np.ndarray, pixels: float) -> np.ndarray:
    if pixels == 0.0:
        return img.copy()
    return _warp(img, 1.0, 0.0, 0.0, 1.0, ty=-pixels)


def posterize(img: np.ndarray, bits: int) -> np.ndarray:
    """Quantize to 2**bits levels: x -> min(floor(x * 2^b), 2^b - 1) / 2^b."""
    levels = 2 ** bits
    q = np.minimum(np.floor(img * levels), levels - 1)
    return (q / levels).astype(img.dtype)


def solarize(img: np.ndarray, threshold: float) -> np.ndarray:
    """Invert every pixel strictly above the threshold."""
    return np.where(img > threshold, 1.0 - img, img).astype(img.dtype)


def autocontrast(img: np.ndarray) -> np.ndarray:
    out = img.copy()
    for c in range(img.shape[0]):
        lo = img[c].min()
        hi = img[c].max()
        if hi > lo:
            out[c] = (img[c] - lo) / (hi - lo)
    return out


def equalize(img: np.ndarray) -> np.ndarray:
    """Histogram equalization per channel over 256 quantized levels."""
    out = img.copy()
    for c in range(img.shape[0]):
        v = np.clip(np.round(img[c] * 255.0), 0, 255).astype(np.int64)
        hist = np.bincount(v.ravel(), minlength=256)
        nonzero = np.flatnonzero(hist)
        if nonzero.size <= 1:
            continue
        step = (hist.sum() - hist[nonzero[-1]]) // 255
        if step == 0:
            continue
        lut = (np.concatenate([[0], np.cumsum(hist)[:-1]]) + step // 2) // step
        out[c] = (np.clip(lut[v], 0, 255) / 255.0).astype(img.dtype)
    return out


def color_saturation(img: np.ndarray, factor: float) -> np.ndarray:
    """Blend toward/away from the per-pixel luminance; identity on 1-channel
    images."""
    if img.shape[0] != 3:
        return img.copy()
    gray = (0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2])[None]
    return np.clip(gray + factor * (img - gray), 0.0, 1.0).astype(img.dtype)


# ---------------------------------------------------------------------------
# magnitude dispatch

def _signed(value: float, rng) -> float:
    if rng is not None and rng.random() < 0.5:
        return -value
    return value


def apply_randaug_op(image: np.ndarray, params: RandAugParams, rng=None) -> np.ndarray:
    """Apply one transformation at the given integer magnitude. `rng` only
    decides the sign of the signed ops; without it the sign is positive."""
    op = params.op_type
    m = params.magnitude
    if op not in RANDAUG_OPS:
        raise ConfigError(f"unknown transformation {op!r}")
    if m < 0:
        raise ConfigError(f"magnitude must be >= 0, got {m}")
    if m == 0:
        return image.copy()
    _, h, w = image.shape
    if op == "rotation":
        out = rotate(image, _signed(3.0 * m, rng))
    elif op == "shear_x":
        out = shear_x(image, _signed(0.03 * m, rng))
    elif op == "shear_y":
        out = shear_y(image, _signed(0.03 * m, rng))
    elif op == "translate_x":
        out = translate_x(image, _signed(0.03 * m * w, rng))
    elif op == "translate_y":
        out = translate_y(image, _signed(0.03 * m * h, rng))
    elif op == "posterize":
        out = posterize(image, max(1, 8 - (4 * m) // 10))
    elif op == "solarize":
        out = solarize(image, 1.0 - m / 10.0)
    elif op == "color":
        out = color_saturation(image, 1.0 + _signed(0.09 * m, rng))
    elif op == "autocontrast":
        out = autocontrast(image)
    else:  # equalize
        out = equalize(image)
    return np.clip(out, 0.0, 1.0)


def randaug_bucket(op_type: str, magnitude: int) -> BucketKey:
    m = 1 if op_type in PARAMETERLESS_OPS else magnitude
    return BucketKey("randaug", (op_type, m))


def sample_randaug(image: np.ndarray, rng, m_max: int,
                   ops: Optional[Sequence[str]] = None):
    """Uniformly pick an op and a magnitude in {1..m_max}; returns the
    augmented image and its bucket key."""
    if m_max < 1:
        raise ConfigError(f"m_max must be >= 1, got {m_max}")
    ops = tuple(ops) if ops is not None else RANDAUG_OPS
    op = ops[int(rng.integers(len(ops)))]
    m = int(rng.integers(1, m_max + 1))
    out = apply_randaug_op(image, RandAugParams(op, m), rng)
    return out, randaug_bucket(op, m)


# ---------------------------------------------------------------------------
# chain-mix (convex combination of the input with an augmentation chain)

def convex_mix(x: np.ndarray, x_aug: np.ndarray, lam: float) -> np.ndarray:
    return (lam * x + (1.0 - lam) * x_aug).astype(x.dtype)


def _ceil_exact(value) -> int:
    """Ceiling of an exact rational; Fraction keeps float inputs exact so
    bucket edges never depend on float product rounding."""
    return math.ceil(value)


def augmix_bucket(depth: int, lam: float, n_buckets: int) -> BucketKey:
    """Bucket (d, n) with n = ceil(lam * N); lam = 0 merges into n = 1."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"mixing weight must be in [0,1], got {lam}")
    if depth < 1 or n_buckets < 1:
        raise ConfigError("depth and bucket count must be >= 1")
    n = 1 if lam == 0.0 else _ceil_exact(Fraction(lam) * n_buckets)
    return BucketKey("augmix", (depth, n))


def augmix(image: np.ndarray, rng, d_max: int, fixed_magnitude: int = 3,
           n_buckets: int = 5):
    """One augmentation chain of uniform depth d in {1..d_max}, each op at the
    fixed magnitude, convex-mixed with the original by lam ~ U(0,1)."""
    if d_max < 1:
        raise ConfigError(f"d_max must be >= 1, got {d_max}")
    d = int(rng.integers(1, d_max + 1))
    chain = tuple(RANDAUG_OPS[int(rng.integers(len(RANDAUG_OPS)))] for _ in range(d))
    x_aug = image
    for op in chain:
        x_aug = apply_randaug_op(x_aug, RandAugParams(op, fixed_magnitude), rng)
    lam = float(rng.random())
    out = convex_mix(image, x_aug, lam)
    params = AugMixParams(depth=d, lam=lam, chain_ops=chain)
    return out, params, augmix_bucket(d, lam, n_buckets)


# ---------------------------------------------------------------------------
# mixup

def mixup_bucket(gamma: float, n_buckets: int) -> BucketKey:
    """n = ceil(2N * min(gamma, 1-gamma)); the degenerate gamma in {0,1}
    merges into n = 1."""
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma must be in [0,1], got {gamma}")
    if n_buckets < 1:
        raise ConfigError("bucket count must be >= 1")
    g = min(Fraction(gamma), 1 - Fraction(gamma))
    n = 1 if g == 0 else _ceil_exact(2 * n_buckets * g)
    return BucketKey("mixup", (n,))


def mixup(x_i: np.ndarray, x_j: np.ndarray, y_i: int, y_j: int, gamma: float,
          n_buckets: int = 5):
    """Convex combination gamma*x_i + (1-gamma)*x_j keyed by its distance
    bucket. gamma is drawn upstream (Beta(beta, beta) during training)."""
    if x_i.shape != x_j.shape:
        raise ShapeMismatchError(f"mixup shapes differ: {x_i.shape} vs {x_j.shape}")
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma must be in [0,1], got {gamma}")
    out = (gamma * x_i + (1.0 - gamma) * x_j).astype(x_i.dtype)
    return out, MixupPair(gamma=gamma), mixup_bucket(gamma, n_buckets)


# ---------------------------------------------------------------------------
# bucket enumeration

def randaug_bucket_space(m_max: int, ops: Optional[Sequence[str]] = None):
    ops = tuple(ops) if ops is not None else RANDAUG_OPS
    keys = []
    for op in ops:
        if op in PARAMETERLESS_OPS:
            keys.append(BucketKey("randaug", (op, 1)))
        else:
            keys.extend(BucketKey("randaug", (op, m)) for m in range(1, m_max + 1))
    return keys


def augmix_bucket_space(d_max: int, n_buckets: int):
    return [BucketKey("augmix", (d, n))
            for d in range(1, d_max + 1) for n in range(1, n_buckets + 1)]


def mixup_bucket_space(n_buckets: int):
    return [BucketKey("mixup", (n,)) for n in range(1, n_buckets + 1)]
