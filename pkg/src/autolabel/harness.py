"""End-to-end training orchestration.

One run = one augmentation family x one label mode: every training batch is
augmented per the family, soft labels come from the bucket-keyed label table
(or a static baseline), and in autolabel mode each bucket's entry is updated
once per epoch from the calibration measured on a freshly augmented
validation subset. Finishes with clean, corrupted and (optionally)
adversarial evaluation plus metric/label exports.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attacks, augment, calibration, data, labels, nn
from .attacks import AttackConfig
from .augment import BucketKey
from .config import TrainConfig, serialize_config
from .errors import ConfigError, NonFiniteError

log = logging.getLogger(__name__)

_PURPOSE = {"init": 0, "split": 1, "shuffle": 2, "augment": 3, "attack": 4,
            "valaug": 5, "corrupt": 6, "adveval": 7, "testgen": 8}


def _rng(seed: int, purpose: str, *idx: int):
    return np.random.default_rng((seed, _PURPOSE[purpose]) + tuple(int(i) for i in idx))


@dataclass
class RunReport:
    config: dict
    param_count: int = 0
    architecture: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    final: dict | None = None
    aborted: bool = False

    def to_json(self) -> str:
        payload = {"config": self.config, "param_count": self.param_count,
                   "architecture": self.architecture, "epochs": self.epochs,
                   "final": self.final, "aborted": self.aborted}
        return json.dumps(payload, sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# dataset / model assembly

def load_train_test(cfg: TrainConfig) -> tuple[data.Dataset, data.Dataset]:
    d = cfg.dataset
    if d.kind == "synthetic":
        make = (data.synthetic_digits_dataset if d.style == "digits"
                else data.synthetic_dataset)
        train = make(d.train_size, d.classes, d.image_size, seed=(d.seed, 0),
                     noise=d.noise)
        test = make(d.test_size, d.classes, d.image_size, seed=(d.seed, 1),
                    noise=d.noise)
        return train, test
    if d.kind == "idx":
        train = data.load_idx_dataset(d.train_images, d.train_labels, name="idx/train")
        test = data.load_idx_dataset(d.test_images, d.test_labels, name="idx/test")
        return train, test
    train = data.load_cifar_binary([p for p in d.train_path.split(",") if p],
                                   name="cifar/train")
    test = data.load_cifar_binary([p for p in d.test_path.split(",") if p],
                                  name="cifar/test")
    return train, test


def build_model(cfg: TrainConfig, input_shape, n_classes) -> nn.Model:
    rng = _rng(cfg.train.seed, "init")
    if cfg.model.arch == "mlp":
        return nn.build_mlp(input_shape, cfg.model.hidden, n_classes, rng)
    return nn.build_convnet(input_shape, cfg.model.conv_channels,
                            cfg.model.conv_fc, n_classes, rng)


def bucket_space(cfg: TrainConfig) -> list[BucketKey]:
    m = cfg.method
    if m.family == "randaug":
        return augment.randaug_bucket_space(m.m_max, m.ops or None)
    if m.family == "augmix":
        return augment.augmix_bucket_space(m.d_max, m.buckets)
    if m.family == "adv_training":
        return attacks.adv_bucket_space(m.buckets)
    if m.family == "mixup":
        return augment.mixup_bucket_space(m.buckets)
    return []


def train_attack_config(cfg: TrainConfig) -> AttackConfig:
    a = cfg.attack
    return AttackConfig(eps_max=a.eps_max, iterations=a.iterations,
                        step_divisor=a.step_divisor, restarts=a.restarts,
                        n_buckets=cfg.method.buckets)


def eval_attack_config(cfg: TrainConfig) -> AttackConfig:
    e = cfg.eval
    return AttackConfig(eps_max=e.attack_eps, iterations=e.attack_iterations,
                        step_divisor=e.attack_step_divisor,
                        restarts=e.attack_restarts, n_buckets=cfg.method.buckets)


# ---------------------------------------------------------------------------
# batch construction

def _one_hot(y: int, k: int) -> np.ndarray:
    out = np.zeros(k, dtype=np.float64)
    out[y] = 1.0
    return out


def _augment_batch(cfg: TrainConfig, model, table, images, ys, indices, epoch,
                   batch_idx):
    """Augment one batch per the configured family and build its targets."""
    m = cfg.method
    k = model.n_classes
    mode = m.labels
    ls_cfg = labels.BaselineConfig(mode="ls", rho=m.ls_rho)
    ccat_cfg = labels.BaselineConfig(mode="ccat", rho=m.ccat_rho)

    out = images.copy()
    targets = np.empty((len(images), k), dtype=np.float64)
    n_clean = int(cfg.train.include_clean_fraction * len(images))

    if m.family == "vanilla":
        for i, y in enumerate(ys):
            targets[i] = (labels.baseline_label(ls_cfg, y, k) if mode == "ls"
                          else _one_hot(y, k))
        return out, targets

    if m.family == "adv_training":
        seed = cfg.train.seed
        eps = np.empty(len(images))
        for i in range(len(images)):
            eps[i] = attacks.sample_eps(_rng(seed, "augment", epoch, indices[i]),
                                        cfg.attack.eps_max)
        eps[:n_clean] = 0.0
        atk = train_attack_config(cfg)
        attacked = out.copy()
        live = slice(n_clean, len(images))
        if n_clean < len(images):
            attacked[live] = attacks.pgd_attack(
                model, out[live], ys[live], eps[live],
                iterations=atk.iterations, step=eps[live] / atk.step_divisor,
                restarts=atk.restarts, rng=_rng(seed, "attack", epoch, batch_idx),
                zero_restart=False)
        for i, y in enumerate(ys):
            if i < n_clean:
                targets[i] = _one_hot(y, k)
                continue
            bucket = attacks.adv_bucket(eps[i], cfg.attack.eps_max, m.buckets)
            if mode == "one_hot":
                targets[i] = _one_hot(y, k)
            elif mode == "ls":
                targets[i] = labels.baseline_label(ls_cfg, y, k)
            elif mode == "ccat":
                delta = float(np.abs(attacked[i].astype(np.float64) - out[i]).max())
                targets[i] = labels.baseline_label(ccat_cfg, y, k, delta_inf=delta,
                                                   eps=eps[i])
            else:
                targets[i] = labels.soft_label(table, bucket, y)
        return attacked, targets

    if m.family == "mixup":
        perm_rng = _rng(cfg.train.seed, "attack", epoch, batch_idx)
        perm = perm_rng.permutation(len(images))
        mixed = np.empty_like(out)
        for i, y in enumerate(ys):
            rng_i = _rng(cfg.train.seed, "augment", epoch, indices[i])
            if i < n_clean:
                mixed[i] = out[i]
                targets[i] = _one_hot(y, k)
                continue
            gamma = float(rng_i.beta(m.beta, m.beta))
            partner = int(perm[i])
            yv = int(ys[partner])
            mixed[i] = (gamma * out[partner] + (1.0 - gamma) * out[i]).astype(out.dtype)
            if mode == "one_hot":  # standard convex-combination labels
                targets[i] = gamma * _one_hot(yv, k) + (1.0 - gamma) * _one_hot(y, k)
            else:
                bucket = augment.mixup_bucket(gamma, m.buckets)
                gp = min(gamma, 1.0 - gamma)
                y_j, y_i = (int(y), yv) if gamma <= 0.5 else (yv, int(y))
                targets[i] = labels.mixup_soft_label(table, bucket, y_i, y_j, gp)
        return mixed, targets

    # randaug / augmix
    for i, y in enumerate(ys):
        if i < n_clean:
            targets[i] = _one_hot(y, k)
            continue
        rng_i = _rng(cfg.train.seed, "augment", epoch, indices[i])
        if m.family == "randaug":
            out[i], bucket = augment.sample_randaug(out[i], rng_i, m.m_max,
                                                    m.ops or None)
        else:
            out[i], _, bucket = augment.augmix(out[i], rng_i, m.d_max,
                                               m.augmix_magnitude, m.buckets)
        if mode == "one_hot":
            targets[i] = _one_hot(y, k)
        elif mode == "ls":
            targets[i] = labels.baseline_label(ls_cfg, y, k)
        else:
            targets[i] = labels.soft_label(table, bucket, y)
    return out, targets


# ---------------------------------------------------------------------------
# evaluation

def evaluate(model: nn.Model, dataset: data.Dataset, n_bins: int,
             batch_size: int = 512) -> calibration.CalibrationReport:
    """Full forward pass, then the calibration report."""
    confs = np.empty(len(dataset))
    correct = np.empty(len(dataset))
    for start in range(0, len(dataset), batch_size):
        sl = slice(start, start + batch_size)
        probs = nn.probabilities(model, dataset.images[sl])
        pred = probs.argmax(axis=1)
        confs[sl] = probs[np.arange(len(pred)), pred]
        correct[sl] = pred == dataset.labels[sl]
    return calibration.report_from_confidence(confs, correct, n_bins)


def evaluate_adversarial(model: nn.Model, dataset: data.Dataset,
                         attack: AttackConfig, rng, eps: float | None = None) -> float:
    """Accuracy under a best-of-restarts attack at the fixed eval bound.

    eps defaults to attack.eps_max; a vanishing threat (eps = 0) degenerates
    to clean accuracy."""
    eps = attack.eps_max if eps is None else eps
    if eps > 0:
        adv = attacks.attack_dataset(model, dataset.images, dataset.labels,
                                     eps, attack, rng, zero_restart=True)
    else:
        adv = dataset.images
    correct = 0
    for start in range(0, len(dataset), 512):
        sl = slice(start, start + 512)
        probs = nn.probabilities(model, adv[sl])
        correct += int((probs.argmax(axis=1) == dataset.labels[sl]).sum())
    return correct / len(dataset)


def corrupted_metrics(model: nn.Model, test: data.Dataset, n_bins: int, seed: int):
    reports = []
    cells = []
    for i, spec in enumerate(data.corruption_space()):
        corrupted = data.corrupt_dataset(test, spec, _rng(seed, "corrupt", i))
        rep = evaluate(model, corrupted, n_bins)
        reports.append(rep)
        cells.append({"kind": spec.kind, "severity": spec.severity,
                      "accuracy": rep.accuracy, "ece": rep.ece})
    c_acc, c_ece = calibration.corrupted_aggregate(reports)
    return c_acc, c_ece, cells


# ---------------------------------------------------------------------------
# the training loop

def run_training(cfg: TrainConfig, out_dir=None) -> RunReport:
    """Execute one full run and (optionally) write its artifacts."""
    from .config import validate_config

    validate_config(cfg)
    seed = cfg.train.seed
    train_full, test = load_train_test(cfg)
    train, val = data.split_train_val(train_full, cfg.dataset.val_size,
                                      seed=(seed, _PURPOSE["split"]))
    model = build_model(cfg, train.image_shape, train.n_classes)

    buckets = bucket_space(cfg)
    table = None
    history = []
    if cfg.method.labels == "autolabel":
        table = labels.init_label_table(train.n_classes, buckets, cfg.method.alpha)
        history.append((0, table.snapshot()))

    report = RunReport(config=cfg.as_dict(), param_count=model.num_params,
                       architecture=model.architecture)
    log.info("run: family=%s labels=%s params=%d train=%d val=%d test=%d",
             cfg.method.family, cfg.method.labels, model.num_params,
             len(train), len(val), len(test))

    n = len(train)
    epochs = cfg.train.epochs
    milestones = {int(epochs * 0.5), int(epochs * 0.75)}
    lr = cfg.train.lr
    try:
        for epoch in range(epochs):
            if epoch in milestones and epoch > 0:
                lr *= cfg.train.lr_decay
            order = _rng(seed, "shuffle", epoch).permutation(n)
            loss_sum = 0.0
            for batch_idx, start in enumerate(range(0, n, cfg.train.batch_size)):
                idx = order[start:start + cfg.train.batch_size]
                images, targets = _augment_batch(cfg, model, table,
                                                 train.images[idx], train.labels[idx],
                                                 idx, epoch, batch_idx)
                grads = nn.gradients(model, images, targets)
                if not np.isfinite(grads.loss):
                    raise NonFiniteError(f"non-finite loss at epoch {epoch}")
                nn.sgd_step(model, grads, lr, cfg.train.momentum,
                            cfg.train.weight_decay)
                loss_sum += grads.loss * len(idx)
            epoch_row = {"epoch": epoch, "train_loss": loss_sum / n, "lr": lr}

            if table is not None:
                val_cfg = data.ValAugConfig(
                    n_buckets=cfg.method.buckets, m_max=cfg.method.m_max,
                    d_max=cfg.method.d_max,
                    augmix_magnitude=cfg.method.augmix_magnitude,
                    subsample=cfg.train.val_subsample or None,
                    model=model, attack=train_attack_config(cfg))
                bucket_ece = {}
                for b_i, bucket in enumerate(buckets):
                    q = data.build_augmented_validation(
                        val, bucket, _rng(seed, "valaug", epoch, b_i), val_cfg)
                    if len(q) == 0:
                        log.warning("empty Q(%s); update skipped", bucket)
                        continue
                    rep = evaluate(model, q, cfg.eval.bins)
                    labels.update_bucket(table, bucket, rep)
                    bucket_ece[str(bucket)] = rep.ece
                table.epoch = epoch + 1
                history.append((epoch + 1, table.snapshot()))
                epoch_row["bucket_ece"] = bucket_ece
                epoch_row["label_table"] = {str(b): v
                                            for b, v in table.snapshot().items()}
            report.epochs.append(epoch_row)
            log.info("epoch %d: loss=%.4f lr=%.4f", epoch, loss_sum / n, lr)
    except NonFiniteError as e:
        log.error("aborted: %s", e)
        report.aborted = True
        if out_dir:
            _write_artifacts(cfg, report, model, table, history, out_dir)
        return report

    # final evaluation
    eval_set = test
    if cfg.eval.eval_size and cfg.eval.eval_size < len(test):
        pick = _rng(seed, "testgen").choice(len(test), cfg.eval.eval_size,
                                            replace=False)
        eval_set = test.subset(pick)
    clean = evaluate(model, eval_set, cfg.eval.bins)
    final = {"clean": {"accuracy": clean.accuracy, "ece": clean.ece,
                       "mean_confidence": clean.mean_confidence,
                       "n_samples": clean.n_samples}}
    if cfg.eval.corruptions:
        c_acc, c_ece, cells = corrupted_metrics(model, eval_set, cfg.eval.bins, seed)
        final["corrupted"] = {"c_accuracy": c_acc, "c_ece": c_ece, "cells": cells}
    if cfg.eval.adversarial:
        adv_acc = evaluate_adversarial(model, eval_set, eval_attack_config(cfg),
                                       _rng(seed, "adveval"))
        final["adversarial_accuracy"] = adv_acc
        if cfg.eval.baseline_clean_acc >= 0 and cfg.eval.baseline_adv_acc >= 0:
            final["delta"] = calibration.accuracy_difference(
                100.0 * clean.accuracy, 100.0 * adv_acc,
                cfg.eval.baseline_clean_acc, cfg.eval.baseline_adv_acc)
    report.final = final

    if out_dir:
        _write_artifacts(cfg, report, model, table, history, out_dir,
                         clean_report=clean)
    return report


def _write_artifacts(cfg, report, model, table, history, out_dir, clean_report=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.json").write_text(report.to_json())
    (out / "config.cfg").write_text(serialize_config(cfg))
    nn.save_checkpoint(model, out / "model.alnn")
    rows = ["epoch,train_loss,lr,mean_bucket_ece"]
    for row in report.epochs:
        eces = list(row.get("bucket_ece", {}).values())
        mean_ece = sum(eces) / len(eces) if eces else ""
        rows.append(f"{row['epoch']},{row['train_loss']!r},{row['lr']!r},{mean_ece}")
    (out / "metrics.csv").write_text("\n".join(rows) + "\n")
    if table is not None:
        (out / "labels.csv").write_text(labels.labels_csv(history))
    if clean_report is not None:
        (out / "bins.csv").write_text(calibration.bins_csv(clean_report))


# ---------------------------------------------------------------------------
# the max-magnitude sweep (accuracy/calibration vs distortion trend)

def run_motivation_sweep(cfg: TrainConfig, out_dir=None) -> list[dict]:
    """Train one_hot vs autolabel at each max magnitude in sweep.magnitudes,
    for each seed; returns one row per run with clean/corrupted metrics."""
    import copy

    ops = cfg.method.ops or ("rotation", "posterize", "solarize", "shear_x",
                             "shear_y")
    rows = []
    for magnitude in cfg.sweep.magnitudes:
        for mode in ("one_hot", "autolabel"):
            for s in cfg.sweep.seeds:
                run_cfg = copy.deepcopy(cfg)
                run_cfg.method.family = "randaug"
                run_cfg.method.labels = mode
                run_cfg.method.m_max = int(magnitude)
                run_cfg.method.ops = tuple(ops)
                run_cfg.train.seed = int(s)
                rep = run_training(run_cfg)
                row = {"max_magnitude": int(magnitude), "labels": mode,
                       "seed": int(s),
                       "clean_accuracy": rep.final["clean"]["accuracy"],
                       "clean_ece": rep.final["clean"]["ece"],
                       "c_accuracy": rep.final["corrupted"]["c_accuracy"],
                       "c_ece": rep.final["corrupted"]["c_ece"]}
                rows.append(row)
                log.info("sweep m=%s %s seed=%s: acc=%.4f cacc=%.4f cece=%.4f",
                         magnitude, mode, s, row["clean_accuracy"],
                         row["c_accuracy"], row["c_ece"])
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = "max_magnitude,labels,seed,clean_accuracy,clean_ece,c_accuracy,c_ece"
        lines = [header] + [
            f"{r['max_magnitude']},{r['labels']},{r['seed']},{r['clean_accuracy']!r},"
            f"{r['clean_ece']!r},{r['c_accuracy']!r},{r['c_ece']!r}" for r in rows]
        (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    return rows
