"""Flat key = value run configuration.

Sections are dotted prefixes (train.lr = 0.1). Unknown keys are errors;
full-line # comments and blank lines are allowed. AUTOLABEL_SEED in the
environment overrides train.seed.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError

FAMILIES = ("vanilla", "randaug", "augmix", "mixup", "adv_training")
LABEL_MODES = ("one_hot", "ls", "ccat", "autolabel")


@dataclass
class DatasetSection:
    kind: str = "synthetic"
    style: str = "gratings"
    classes: int = 10
    train_size: int = 10000
    test_size: int = 2000
    image_size: int = 16
    noise: float = 0.08
    seed: int = 7
    val_size: int = 1000
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_path: str = ""
    test_path: str = ""


@dataclass
class MethodSection:
    family: str = "randaug"
    labels: str = "autolabel"
    alpha: float = 0.1
    buckets: int = 10
    m_max: int = 10
    ops: tuple = ()
    d_max: int = 3
    augmix_magnitude: int = 3
    beta: float = 1.0
    ls_rho: float = 0.02
    ccat_rho: float = 10.0


@dataclass
class AttackSection:
    eps_max: float = 0.01
    iterations: int = 10
    step_divisor: float = 4.0
    restarts: int = 1


@dataclass
class TrainSection:
    epochs: int = 10
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay: float = 0.1
    include_clean_fraction: float = 0.0
    seed: int = 1
    val_subsample: int = 512


@dataclass
class ModelSection:
    arch: str = "conv"
    hidden: tuple = (256, 256)
    conv_channels: tuple = (12, 24)
    conv_fc: int = 240


@dataclass
class EvalSection:
    bins: int = 15
    corruptions: bool = True
    adversarial: bool = False
    attack_eps: float = 0.03
    attack_iterations: int = 50
    attack_restarts: int = 3
    attack_step_divisor: float = 4.0
    eval_size: int = 0
    baseline_clean_acc: float = -1.0
    baseline_adv_acc: float = -1.0


@dataclass
class SweepSection:
    magnitudes: tuple = (2, 5, 8, 10)
    seeds: tuple = (1, 2, 3)


@dataclass
class TrainConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    method: MethodSection = field(default_factory=MethodSection)
    attack: AttackSection = field(default_factory=AttackSection)
    train: TrainSection = field(default_factory=TrainSection)
    model: ModelSection = field(default_factory=ModelSection)
    eval: EvalSection = field(default_factory=EvalSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def as_dict(self):
        return asdict(self)


_SECTIONS = {f.name: f.default_factory for f in fields(TrainConfig)}


def _parse_value(raw: str, example):
    raw = raw.strip()
    kind = type(example)
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            if not raw:
                return ()
            items = [x.strip() for x in raw.split(",") if x.strip()]
            elem = example[0] if example else ""
            if isinstance(elem, int):
                return tuple(int(x) for x in items)
            return tuple(items)
        return raw
    except ValueError as e:
        raise ConfigError(f"cannot parse value {raw!r}: {e}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str, env=None) -> TrainConfig:
    """Parse, apply the AUTOLABEL_SEED override, and validate."""
    cfg = TrainConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} lacks a section prefix")
        section_name, _, field_name = key.partition(".")
        section = getattr(cfg, section_name, None)
        if section_name not in _SECTIONS or section is None:
            raise ConfigError(f"line {lineno}: unknown section {section_name!r}")
        if field_name not in {f.name for f in fields(section)}:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        example = getattr(section, field_name)
        if isinstance(example, tuple) and not example:
            # empty tuple defaults: method.ops is a tuple of op names
            example = ("",)
        setattr(section, field_name, _parse_value(raw, example))

    env = os.environ if env is None else env
    if "AUTOLABEL_SEED" in env:
        try:
            cfg.train.seed = int(env["AUTOLABEL_SEED"])
        except ValueError:
            raise ConfigError(
                f"AUTOLABEL_SEED must be an integer, got {env['AUTOLABEL_SEED']!r}")
    validate_config(cfg)
    return cfg


def parse_config_file(path, env=None) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read(), env=env)


def serialize_config(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(TrainConfig):
        section = getattr(cfg, f.name)
        for sub in fields(section):
            lines.append(f"{f.name}.{sub.name} = {_format_value(getattr(section, sub.name))}")
        lines.append("")
    return "\n".join(lines)


def validate_config(cfg: TrainConfig) -> None:
    from .augment import RANDAUG_OPS

    m, t, d = cfg.method, cfg.train, cfg.dataset
    if m.family not in FAMILIES:
        raise ConfigError(f"unknown method.family {m.family!r}")
    if m.labels not in LABEL_MODES:
        raise ConfigError(f"unknown method.labels {m.labels!r}")
    if m.labels == "ccat" and m.family != "adv_training":
        raise ConfigError("ccat labels need the adv_training family")
    if m.labels == "autolabel" and m.family == "vanilla":
        raise ConfigError("autolabel needs an augmenting family")
    if m.family == "mixup" and m.labels not in ("one_hot", "autolabel"):
        raise ConfigError("mixup supports one_hot or autolabel labels only")
    for op in m.ops:
        if op not in RANDAUG_OPS:
            raise ConfigError(f"unknown transformation {op!r} in method.ops")
    if m.alpha < 0:
        raise ConfigError("method.alpha must be >= 0")
    if m.buckets < 1 or m.m_max < 1 or m.d_max < 1:
        raise ConfigError("method.buckets, m_max and d_max must be >= 1")
    if m.beta <= 0:
        raise ConfigError("method.beta must be positive")
    if d.kind not in ("synthetic", "idx", "cifar_binary"):
        raise ConfigError(f"unknown dataset.kind {d.kind!r}")
    if d.style not in ("gratings", "digits"):
        raise ConfigError(f"unknown dataset.style {d.style!r}")
    if t.epochs < 1 or t.batch_size < 1:
        raise ConfigError("train.epochs and batch_size must be >= 1")
    if not 0.0 <= t.include_clean_fraction <= 1.0:
        raise ConfigError("train.include_clean_fraction must be in [0, 1]")
    if cfg.model.arch not in ("conv", "mlp"):
        raise ConfigError(f"unknown model.arch {cfg.model.arch!r}")
    if cfg.eval.bins < 1:
        raise ConfigError("eval.bins must be >= 1")
    if not 0.0 < cfg.attack.eps_max <= 1.0:
        raise ConfigError("attack.eps_max must be in (0, 1]")
