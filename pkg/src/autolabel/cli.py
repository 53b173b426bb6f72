"""Command-line entry points.

Exit codes: 0 success, 2 configuration/input error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, harness, labels, nn
from .augment import parse_bucket
from .config import parse_config_file
from .errors import ConfigError, DataFormatError, NonFiniteError


def to_ppm(image: np.ndarray) -> bytes:
    """Binary PPM (P6); single-channel images are replicated to gray RGB."""
    c, h, w = image.shape
    rgb = image if c == 3 else np.repeat(image[:1], 3, axis=0)
    payload = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode() + payload.transpose(1, 2, 0).tobytes()


def _cmd_train(args) -> int:
    cfg = parse_config_file(args.config)
    report = harness.run_training(cfg, out_dir=args.out)
    if not args.out:
        print(report.to_json())
    else:
        print(f"wrote {Path(args.out) / 'run.json'}")
    return 3 if report.aborted else 0


def _load_model_for(cfg, checkpoint):
    train, test = harness.load_train_test(cfg)
    model = harness.build_model(cfg, train.image_shape, train.n_classes)
    nn.load_checkpoint(model, checkpoint)
    return model, test


def _cmd_eval(args) -> int:
    cfg = parse_config_file(args.config)
    model, test = _load_model_for(cfg, args.checkpoint)
    rep = harness.evaluate(model, test, cfg.eval.bins)
    out = {"accuracy": rep.accuracy, "ece": rep.ece,
           "mean_confidence": rep.mean_confidence, "n_samples": rep.n_samples}
    if cfg.eval.corruptions:
        c_acc, c_ece, _ = harness.corrupted_metrics(model, test, cfg.eval.bins,
                                                    cfg.train.seed)
        out["c_accuracy"] = c_acc
        out["c_ece"] = c_ece
    print(json.dumps(out, sort_keys=True, indent=2))
    return 0


def _cmd_attack_eval(args) -> int:
    cfg = parse_config_file(args.config)
    model, test = _load_model_for(cfg, args.checkpoint)
    if cfg.eval.eval_size and cfg.eval.eval_size < len(test):
        test = test.subset(np.arange(cfg.eval.eval_size))
    acc = harness.evaluate_adversarial(model, test, harness.eval_attack_config(cfg),
                                       np.random.default_rng(cfg.train.seed))
    print(json.dumps({"adversarial_accuracy": acc,
                      "eps": cfg.eval.attack_eps,
                      "iterations": cfg.eval.attack_iterations,
                      "restarts": cfg.eval.attack_restarts}, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    cfg = parse_config_file(args.config)
    rows = harness.run_motivation_sweep(cfg, out_dir=args.out)
    if not args.out:
        print(json.dumps(rows, sort_keys=True, indent=2))
    else:
        print(f"wrote {Path(args.out) / 'sweep.csv'}")
    return 0


def _cmd_preview(args) -> int:
    cfg = parse_config_file(args.config)
    train, _ = harness.load_train_test(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.train.seed)
    table = None
    for i in range(args.count):
        img = train.images[i % len(train)]
        (out / f"sample_{i:03d}_clean.ppm").write_bytes(to_ppm(img))
        augmented, _ = _preview_augment(cfg, img, train, i, rng)
        (out / f"sample_{i:03d}_aug.ppm").write_bytes(to_ppm(augmented))
    print(f"wrote {2 * args.count} ppm files to {out}")
    return 0


def _preview_augment(cfg, img, train, i, rng):
    from . import augment as aug

    fam = cfg.method.family
    if fam == "augmix":
        out, _, bucket = aug.augmix(img, rng, cfg.method.d_max,
                                    cfg.method.augmix_magnitude, cfg.method.buckets)
        return out, bucket
    if fam == "mixup":
        j = int(rng.integers(len(train)))
        gamma = float(rng.beta(cfg.method.beta, cfg.method.beta))
        out, _, bucket = aug.mixup(img, train.images[j], 0, 1, gamma,
                                   cfg.method.buckets)
        return out, bucket
    out, bucket = aug.sample_randaug(img, rng, cfg.method.m_max,
                                     cfg.method.ops or None)
    return out, bucket


def _cmd_export_labels(args) -> int:
    run_path = Path(args.run) / "run.json"
    payload = json.loads(run_path.read_text())
    history = []
    for row in payload["epochs"]:
        snap = row.get("label_table")
        if snap:
            history.append((row["epoch"] + 1,
                            {parse_bucket(k): v for k, v in snap.items()}))
    if not history:
        print("run has no label trajectory (not an autolabel run)", file=sys.stderr)
        return 2
    history.insert(0, (0, {b: 1.0 for b in history[0][1]}))  # epoch-0 one-hot row
    text = labels.labels_csv(history)
    out = Path(args.out) if args.out else Path(args.run) / "labels.csv"
    out.write_text(text)
    print(f"wrote {out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="autolabel",
                                     description="calibration-aware augmentation lab")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="artifact directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="clean/corrupted metrics for a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("attack-eval", help="adversarial accuracy for a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=_cmd_attack_eval)

    p = sub.add_parser("sweep-motivation",
                       help="one_hot vs autolabel across max magnitudes")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("preview-aug", help="write augmented samples as PPM")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.set_defaults(func=_cmd_preview)

    p = sub.add_parser("export-labels", help="label-table trajectory as CSV")
    p.add_argument("--run", required=True, help="run artifact directory")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_export_labels)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataFormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NonFiniteError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
