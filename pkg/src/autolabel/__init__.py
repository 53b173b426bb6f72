"""Calibration-aware data-augmentation training lab.

Per-bucket adaptive soft labels for augmented training data, driven by
expected-calibration-error feedback on identically augmented validation
sets, with RandAug-style transforms, chain-mix augmentation, mixup and
PGD adversarial training on a small numpy classifier engine.
"""

__version__ = "0.1.0"
