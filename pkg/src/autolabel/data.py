"""Datasets, corruption suite and per-bucket augmented validation sets.

The synthetic generator produces class-conditional oriented gratings
(distinct frequency/orientation per class) plus pixel noise, so everything
downstream can run fully offline. IDX and CIFAR-style binary files are
supported for real data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy import ndimage

from . import augment
from .attacks import AttackConfig, attack_dataset
from .augment import BucketKey, RandAugParams, apply_randaug_op
from .errors import ConfigError, DataFormatError

CORRUPTION_KINDS = ("gaussian_noise", "impulse_noise", "gaussian_blur",
                    "brightness", "contrast", "pixelate")

# corruption kinds must not overlap the augmentation op set
assert not set(CORRUPTION_KINDS) & set(augment.RANDAUG_OPS)

SEVERITY_TABLES = {
    "gaussian_noise": (0.04, 0.06, 0.08, 0.09, 0.10),   # noise sigma
    "impulse_noise": (0.01, 0.02, 0.03, 0.05, 0.07),    # salt/pepper fraction
    "gaussian_blur": (0.4, 0.6, 0.8, 1.0, 1.2),         # blur sigma, px
    "brightness": (0.05, 0.10, 0.15, 0.20, 0.25),       # additive offset
    "contrast": (0.75, 0.6, 0.5, 0.4, 0.3),             # scale about 0.5
    "pixelate": (0.9, 0.8, 0.7, 0.6, 0.5),              # downsample scale
}


@dataclass
class Dataset:
    images: np.ndarray          # (n, C, H, W) float32 in [0, 1]
    labels: np.ndarray          # (n,) int64 in [0, n_classes)
    n_classes: int
    name: str = "dataset"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ConfigError("images and labels differ in length")

    def __len__(self):
        return len(self.images)

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def subset(self, indices, name=None) -> "Dataset":
        return Dataset(self.images[indices], self.labels[indices],
                       self.n_classes, name or self.name)


@dataclass
class CorruptionSpec:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ConfigError(f"unknown corruption {self.kind!r}")
        if not 1 <= self.severity <= 5:
            raise ConfigError(f"severity must be 1..5, got {self.severity}")


def corruption_space():
    return [CorruptionSpec(kind, s) for kind in CORRUPTION_KINDS
            for s in range(1, 6)]


# ---------------------------------------------------------------------------
# synthetic data

def synthetic_dataset(n: int, n_classes: int, size: int = 16, seed: int = 0,
                      noise: float = 0.08, freq: float = 4.0,
                      name: Optional[str] = None) -> Dataset:
    """Oriented sinusoidal gratings: class k fixes the orientation
    pi*k/K (classes sit 180/K degrees apart, so large rotations genuinely
    cross class boundaries); phase and pixel noise vary per sample. Labels
    are exactly balanced (round-robin)."""
    if n_classes < 2:
        raise ConfigError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    rows, cols = np.meshgrid(np.arange(size) / size, np.arange(size) / size,
                             indexing="ij")
    images = np.empty((n, 1, size, size), dtype=np.float32)
    labels = np.arange(n, dtype=np.int64) % n_classes
    for i in range(n):
        k = labels[i]
        theta = np.pi * k / n_classes
        phase = rng.uniform(0.0, 2 * np.pi)
        wave = cols * np.cos(theta) + rows * np.sin(theta)
        img = 0.5 + 0.35 * np.sin(2 * np.pi * freq * wave + phase)
        img = img + noise * rng.standard_normal((size, size))
        images[i, 0] = np.clip(img, 0.0, 1.0)
    return Dataset(images, labels, n_classes,
                   name or f"gratings(n={n},K={n_classes},seed={seed})")


# stroke skeletons for the glyph generator, one list of polylines per digit,
# in unit coordinates (x right, y down)
_GLYPHS = {
    0: [[(0.5 + 0.21 * np.cos(a), 0.5 + 0.30 * np.sin(a))
         for a in np.linspace(0, 2 * np.pi, 13)]],
    1: [[(0.38, 0.34), (0.54, 0.20), (0.54, 0.80)]],
    2: [[(0.32, 0.32), (0.38, 0.22), (0.52, 0.18), (0.64, 0.24), (0.66, 0.36),
         (0.56, 0.50), (0.34, 0.80), (0.68, 0.80)]],
    3: [[(0.34, 0.24), (0.48, 0.18), (0.64, 0.26), (0.62, 0.42), (0.48, 0.50),
         (0.64, 0.58), (0.64, 0.74), (0.48, 0.82), (0.33, 0.75)]],
    4: [[(0.60, 0.80), (0.60, 0.20), (0.32, 0.58), (0.74, 0.58)]],
    5: [[(0.66, 0.20), (0.36, 0.20), (0.34, 0.46), (0.52, 0.42), (0.66, 0.52),
         (0.66, 0.68), (0.50, 0.80), (0.34, 0.74)]],
    6: [[(0.62, 0.18), (0.46, 0.30), (0.36, 0.50), (0.36, 0.66), (0.46, 0.80),
         (0.60, 0.78), (0.66, 0.64), (0.60, 0.50), (0.46, 0.48), (0.36, 0.58)]],
    7: [[(0.32, 0.20), (0.68, 0.20), (0.50, 0.50), (0.42, 0.80)]],
    8: [[(0.5 + 0.15 * np.cos(a), 0.34 + 0.15 * np.sin(a))
         for a in np.linspace(0, 2 * np.pi, 11)],
        [(0.5 + 0.18 * np.cos(a), 0.66 + 0.17 * np.sin(a))
         for a in np.linspace(0, 2 * np.pi, 11)]],
    9: [[(0.5 + 0.16 * np.cos(a), 0.36 + 0.17 * np.sin(a))
         for a in np.linspace(0, 2 * np.pi, 11)],
        [(0.66, 0.40), (0.64, 0.60), (0.56, 0.80)]],
}


def _render_strokes(polylines, size, width):
    """Rasterize polylines with an anti-aliased stroke of the given width."""
    ys, xs = np.meshgrid((np.arange(size) + 0.5) / size,
                         (np.arange(size) + 0.5) / size, indexing="ij")
    canvas = np.zeros((size, size))
    for line in polylines:
        pts = np.asarray(line)
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            dx, dy = x1 - x0, y1 - y0
            l2 = dx * dx + dy * dy
            if l2 == 0:
                d = np.hypot(xs - x0, ys - y0)
            else:
                t = np.clip(((xs - x0) * dx + (ys - y0) * dy) / l2, 0.0, 1.0)
                d = np.hypot(xs - (x0 + t * dx), ys - (y0 + t * dy))
            canvas = np.maximum(canvas, np.clip((width - d) / (0.35 * width), 0, 1))
    return canvas


def synthetic_digits_dataset(n: int, n_classes: int = 10, size: int = 20,
                             seed: int = 0, noise: float = 0.08,
                             name: Optional[str] = None) -> Dataset:
    """Procedurally rendered digit glyphs on a black background with random
    affine jitter, stroke width and pixel noise. Geometric augmentations of
    these images blend into the data manifold (no fill artifacts), so heavy
    distortions genuinely collide with other classes."""
    if not 2 <= n_classes <= 10:
        raise ConfigError("digit generator supports 2..10 classes")
    rng = np.random.default_rng(seed)
    images = np.empty((n, 1, size, size), dtype=np.float32)
    labels = np.arange(n, dtype=np.int64) % n_classes
    for i in range(n):
        k = int(labels[i])
        angle = rng.uniform(-0.17, 0.17)          # ~ +/-10 degrees
        scale = rng.uniform(0.85, 1.10)
        shear = rng.uniform(-0.08, 0.08)
        tx, ty = rng.uniform(-0.06, 0.06, size=2)
        width = rng.uniform(0.05, 0.08)
        ca, sa = np.cos(angle), np.sin(angle)
        moved = []
        for line in _GLYPHS[k]:
            pts = np.asarray(line) - 0.5
            x = scale * (ca * pts[:, 0] - sa * pts[:, 1]) + shear * pts[:, 1]
            y = scale * (sa * pts[:, 0] + ca * pts[:, 1])
            moved.append(np.stack([x + 0.5 + tx, y + 0.5 + ty], axis=1))
        img = _render_strokes(moved, size, width)
        img = img + noise * rng.standard_normal((size, size))
        images[i, 0] = np.clip(img, 0.0, 1.0)
    return Dataset(images, labels, n_classes,
                   name or f"digits(n={n},K={n_classes},seed={seed})")


# ---------------------------------------------------------------------------
# file formats

def read_idx(path) -> np.ndarray:
    """Parse an IDX file of unsigned bytes (big-endian dims)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4:
        raise DataFormatError("truncated IDX header", offset=len(blob))
    zero1, zero2, dtype, ndim = struct.unpack_from(">BBBB", blob, 0)
    if zero1 != 0 or zero2 != 0:
        raise DataFormatError("bad IDX magic", offset=0)
    if dtype != 0x08:
        raise DataFormatError(f"unsupported IDX dtype 0x{dtype:02x}", offset=2)
    off = 4
    if len(blob) < off + 4 * ndim:
        raise DataFormatError("truncated IDX dimension list", offset=len(blob))
    dims = struct.unpack_from(f">{ndim}I", blob, off)
    off += 4 * ndim
    count = int(np.prod(dims)) if ndim else 0
    if len(blob) != off + count:
        raise DataFormatError(
            f"IDX payload length {len(blob) - off}, expected {count}", offset=off)
    return np.frombuffer(blob, dtype=np.uint8, count=count, offset=off).reshape(dims)


def load_idx_dataset(images_path, labels_path, name: Optional[str] = None) -> Dataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise DataFormatError(f"IDX image file must be 3-d, got {images.ndim}-d",
                              offset=3)
    if labels.ndim != 1 or len(labels) != len(images):
        raise DataFormatError("IDX label file does not match image count", offset=3)
    imgs = (images.astype(np.float32) / 255.0)[:, None, :, :]
    return Dataset(imgs, labels.astype(np.int64), int(labels.max()) + 1,
                   name or "idx")


def load_cifar_binary(paths, name: Optional[str] = None) -> Dataset:
    """CIFAR-10-style binary: per record one label byte then 3072 pixel bytes
    (row-major RGB, 32x32)."""
    if isinstance(paths, (str, bytes)) or hasattr(paths, "read_bytes"):
        paths = [paths]
    record = 1 + 3072
    images, labels = [], []
    for path in paths:
        with open(path, "rb") as f:
            blob = f.read()
        if len(blob) == 0 or len(blob) % record:
            raise DataFormatError(
                f"file size {len(blob)} is not a multiple of {record}",
                offset=len(blob) - len(blob) % record)
        n = len(blob) // record
        arr = np.frombuffer(blob, dtype=np.uint8).reshape(n, record)
        recs_labels = arr[:, 0]
        bad = np.flatnonzero(recs_labels > 9)
        if bad.size:
            raise DataFormatError(f"label byte {recs_labels[bad[0]]} out of range",
                                  offset=int(bad[0]) * record)
        labels.append(recs_labels.astype(np.int64))
        images.append(arr[:, 1:].reshape(n, 3, 32, 32).astype(np.float32) / 255.0)
    return Dataset(np.concatenate(images), np.concatenate(labels), 10,
                   name or "cifar_binary")


def load_dataset(format: str, **kwargs) -> Dataset:
    """Dispatch over the supported formats: idx, cifar_binary, synthetic."""
    if format == "idx":
        return load_idx_dataset(kwargs["images_path"], kwargs["labels_path"],
                                kwargs.get("name"))
    if format == "cifar_binary":
        return load_cifar_binary(kwargs["paths"], kwargs.get("name"))
    if format == "synthetic":
        return synthetic_dataset(**kwargs)
    raise ConfigError(f"unknown dataset format {format!r}")


def split_train_val(dataset: Dataset, val_size: int, seed) -> tuple[Dataset, Dataset]:
    """Disjoint uniform random split; the union is a permutation of the input."""
    n = len(dataset)
    if not 0 < val_size < n:
        raise ConfigError(f"val_size must be in (0, {n}), got {val_size}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    val = dataset.subset(perm[:val_size], name=dataset.name + "/val")
    train = dataset.subset(perm[val_size:], name=dataset.name + "/train")
    return train, val


# ---------------------------------------------------------------------------
# corruptions

def contrast_scale(image: np.ndarray, factor: float) -> np.ndarray:
    """Scale about mid-gray; factor 1 is the exact identity."""
    if factor == 1.0:
        return image.copy()
    return np.clip(0.5 + factor * (image - 0.5), 0.0, 1.0).astype(image.dtype)


def pixelate_scale(image: np.ndarray, scale: float) -> np.ndarray:
    _, h, w = image.shape
    nh = max(1, round(h * scale))
    nw = max(1, round(w * scale))
    if nh == h and nw == w:
        return image.copy()
    rs = (np.arange(nh) * h // nh).astype(np.int64)
    cs = (np.arange(nw) * w // nw).astype(np.int64)
    small = image[:, rs][:, :, cs]
    rb = (np.arange(h) * nh // h).astype(np.int64)
    cb = (np.arange(w) * nw // w).astype(np.int64)
    return small[:, rb][:, :, cb]


def corrupt(image: np.ndarray, spec: CorruptionSpec, rng) -> np.ndarray:
    """Apply one corruption at its severity; output clamped to [0, 1]."""
    level = SEVERITY_TABLES[spec.kind][spec.severity - 1]
    if spec.kind == "gaussian_noise":
        out = image + level * rng.standard_normal(image.shape)
    elif spec.kind == "impulse_noise":
        out = image.copy()
        mask = rng.random(image.shape) < level
        out[mask] = (rng.random(int(mask.sum())) < 0.5).astype(image.dtype)
    elif spec.kind == "gaussian_blur":
        out = np.stack([ndimage.gaussian_filter(ch, sigma=level, mode="nearest")
                        for ch in image])
    elif spec.kind == "brightness":
        out = image + level
    elif spec.kind == "contrast":
        out = contrast_scale(image, level)
    else:  # pixelate
        out = pixelate_scale(image, level)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def corrupt_dataset(dataset: Dataset, spec: CorruptionSpec, rng) -> Dataset:
    images = np.stack([corrupt(img, spec, rng) for img in dataset.images])
    return Dataset(images, dataset.labels.copy(), dataset.n_classes,
                   f"{dataset.name}/{spec.kind}:{spec.severity}")


# ---------------------------------------------------------------------------
# per-bucket augmented validation sets

@dataclass
class ValAugConfig:
    """Everything build_augmented_validation needs beyond the bucket itself."""

    n_buckets: int = 10
    m_max: int = 10
    d_max: int = 3
    augmix_magnitude: int = 3
    subsample: Optional[int] = 512
    model: object = None                      # adversarial family only
    attack: Optional[AttackConfig] = None     # adversarial family only


def _open_closed_uniform(rng, lo: float, hi: float) -> float:
    """One draw from (lo, hi]."""
    return float(hi - rng.random() * (hi - lo))


def build_augmented_validation(val: Dataset, bucket: BucketKey, rng,
                               config: ValAugConfig) -> Dataset:
    """Augment every (sub)sampled validation image once, with the distance
    drawn uniformly inside the bucket's range; labels are preserved."""
    n_total = len(val)
    if config.subsample and config.subsample < n_total:
        idx = rng.choice(n_total, size=config.subsample, replace=False)
        base = val.subset(idx)
    else:
        base = val
    n = len(base)
    nb = config.n_buckets
    images = np.empty_like(base.images)

    if bucket.family == "randaug":
        op, m = bucket.coords
        for i in range(n):
            images[i] = apply_randaug_op(base.images[i], RandAugParams(op, m), rng)
    elif bucket.family == "augmix":
        d, nth = bucket.coords
        lo, hi = (nth - 1) / nb, nth / nb
        for i in range(n):
            x_aug = base.images[i]
            for _ in range(d):
                op = augment.RANDAUG_OPS[int(rng.integers(len(augment.RANDAUG_OPS)))]
                x_aug = apply_randaug_op(x_aug, RandAugParams(op, config.augmix_magnitude),
                                         rng)
            lam = _open_closed_uniform(rng, lo, hi)
            images[i] = augment.convex_mix(base.images[i], x_aug, lam)
    elif bucket.family == "adversarial":
        if config.model is None or config.attack is None:
            raise ConfigError("adversarial buckets need a model and attack config")
        (nth,) = bucket.coords
        eps_max = config.attack.eps_max
        lo = (nth - 1) * eps_max / nb
        hi = float(Fraction(eps_max) * nth / nb)  # exact top so adv_bucket(eps') == nth
        eps = np.array([_open_closed_uniform(rng, lo, hi) for _ in range(n)])
        images = attack_dataset(config.model, base.images, base.labels, eps,
                                config.attack, rng, zero_restart=False)
    elif bucket.family == "mixup":
        (nth,) = bucket.coords
        lo, hi = (nth - 1) / (2 * nb), nth / (2 * nb)
        partners = rng.integers(0, n_total, size=n)
        for i in range(n):
            gamma = _open_closed_uniform(rng, lo, hi)
            # the validation image takes the dominant (1 - gamma) role so its
            # label remains the true class of the mix
            images[i] = (gamma * val.images[partners[i]]
                         + (1.0 - gamma) * base.images[i]).astype(np.float32)
    else:
        raise ConfigError(f"unknown bucket family {bucket.family!r}")

    return Dataset(images, base.labels.copy(), base.n_classes,
                   f"{val.name}/Q({bucket})")
