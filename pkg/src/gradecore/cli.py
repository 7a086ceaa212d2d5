"""Command-line entry point: train / evaluate / predict / gradcheck / report.

Exit codes are a stable contract: 0 success, 1 runtime failure, 2 usage error.
All paper hyperparameters are the per-model defaults, so
`gradecore train --model cnn --data DIR` runs the paper protocol verbatim.
A plain key=value config file can override defaults; explicit flags win over
the file. `--log-json` mirrors progress as JSON lines on stdout for harnesses.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .data import load_cache, load_directory, load_image, train_test_split
from .errors import ConfigError, GradecoreError
from .report import write_history_svg
from .tensor import Rng
from .training import (
    TrainConfig,
    evaluate,
    gradient_check,
    train_cnn,
    train_knn,
    train_logreg,
    train_mlp,
    write_history_csv,
)

logger = logging.getLogger("gradecore")

MODEL_DEFAULTS = {
    "mlp": {"batch": 100, "lr": 0.001, "steps": 2000, "epochs": None, "patience": None},
    "cnn": {"batch": 32, "lr": 0.01, "steps": None, "epochs": 25, "patience": 5},
    "logreg": {"batch": 64, "lr": 0.1, "steps": None, "epochs": 300, "patience": None},
    "knn": {"batch": 1, "lr": 0.1, "steps": None, "epochs": 1, "patience": None},
}

SHARED_DEFAULTS = {
    "size": 224, "seed": 0, "test_fraction": 0.2, "k": 5, "threads": None,
    "out": "out", "precision": 64, "feature_mode": "features",
}

_INT_KEYS = {"size", "seed", "batch", "epochs", "steps", "patience", "k",
             "threads", "precision"}
_FLOAT_KEYS = {"lr", "test_fraction"}


def read_config_file(path):
    """Plain key=value lines; '#' starts a comment."""
    values = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {line_no} is not key=value")
        key, _, raw = line.partition("=")
        key = key.strip().replace("-", "_")
        raw = raw.strip()
        if key in _INT_KEYS:
            values[key] = int(raw)
        elif key in _FLOAT_KEYS:
            values[key] = float(raw)
        else:
            values[key] = raw
    return values


def resolve_options(args):
    """Defaults <- config file <- explicit flags."""
    model = args.model
    merged = dict(SHARED_DEFAULTS)
    merged.update(MODEL_DEFAULTS[model])
    if args.config:
        merged.update(read_config_file(args.config))
    for key in ("size", "seed", "batch", "lr", "epochs", "steps", "patience",
                "k", "test_fraction", "threads", "out"):
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    merged["model"] = model
    if merged.get("threads") is None:
        merged["threads"] = int(os.environ.get("GRADECORE_THREADS", "1"))
    return merged


def dataset_fingerprint(data_path):
    """File count plus a content hash, enough to detect any corpus change."""
    data_path = Path(data_path)
    digest = hashlib.sha256()
    if data_path.is_file():
        digest.update(data_path.read_bytes())
        return {"file_count": 1, "content_hash": digest.hexdigest()}
    files = sorted(p for p in data_path.rglob("*") if p.is_file())
    for p in files:
        digest.update(str(p.relative_to(data_path)).encode())
        digest.update(p.read_bytes())
    return {"file_count": len(files), "content_hash": digest.hexdigest()}


def load_any(data_path, size, dtype):
    data_path = Path(data_path)
    if data_path.is_file():
        return load_cache(data_path, dtype=dtype)
    return load_directory(data_path, size=size, dtype=dtype)


class JsonLog:
    def __init__(self, enabled):
        self.enabled = enabled

    def emit(self, event, **fields):
        if self.enabled:
            print(json.dumps({"event": event, **fields}, sort_keys=True), flush=True)


def cmd_train(args):
    opts = resolve_options(args)
    jlog = JsonLog(args.log_json)
    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)

    cfg = TrainConfig(
        model=opts["model"],
        batch_size=int(opts["batch"]),
        steps=int(opts["steps"]) if opts["steps"] else None,
        epochs=int(opts["epochs"]) if opts["epochs"] else None,
        learning_rate=float(opts["lr"]),
        patience=int(opts["patience"]) if opts["patience"] else None,
        seed=int(opts["seed"]),
        input_size=int(opts["size"]),
        k=int(opts["k"]),
        precision=int(opts["precision"]),
        feature_mode=opts["feature_mode"],
    )

    manifest = {
        "config": {k: v for k, v in sorted(opts.items())},
        "data": str(args.data),
        "dataset_fingerprint": dataset_fingerprint(args.data),
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "outputs": {
            "checkpoint": str(out_dir / f"{cfg.model}.gckpt"),
            "history_csv": str(out_dir / "history.csv"),
            "history_svg": str(out_dir / "history.svg"),
        },
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    dataset = load_any(args.data, cfg.input_size, cfg.dtype)
    split = train_test_split(dataset, float(opts["test_fraction"]), Rng(cfg.seed).child(1000))
    jlog.emit("train_start", model=cfg.model, train_size=len(split.train),
              test_size=len(split.test), seed=cfg.seed)

    def on_epoch(rec):
        jlog.emit("epoch", epoch=rec.epoch, train_loss=rec.train_loss,
                  train_acc=rec.train_acc, val_loss=rec.val_loss, val_acc=rec.val_acc)

    if cfg.model == "mlp":
        model, history = train_mlp(split, cfg, on_epoch)
    elif cfg.model == "cnn":
        model, history = train_cnn(split, cfg, on_epoch)
    elif cfg.model == "logreg":
        model, history = train_logreg(split, cfg, on_epoch)
    else:
        model, history = train_knn(split, cfg)

    train_res = evaluate(model, split.train)
    test_res = evaluate(model, split.test)

    # Hash only the semantic run configuration: the output directory does not
    # influence results, so two runs into different --out dirs stay bit-identical.
    hashed_config = {k: v for k, v in opts.items() if k != "out"}
    metadata = {
        "seed": cfg.seed,
        "config_hash": hashlib.sha256(
            json.dumps(hashed_config, sort_keys=True).encode()).hexdigest(),
        "final_metrics": {
            "train_accuracy": train_res.accuracy,
            "train_loss": train_res.mean_loss,
            "test_accuracy": test_res.accuracy,
            "test_loss": test_res.mean_loss,
        },
    }
    ckpt_path = out_dir / f"{cfg.model}.gckpt"
    ckpt.save(model, ckpt_path, metadata)
    csv_path = out_dir / "history.csv"
    write_history_csv(history, csv_path)
    if history:
        write_history_svg(csv_path, out_dir / "history.svg")

    print(f"Training Accuracy: {100.0 * train_res.accuracy:.2f}%")
    print(f"Test Accuracy: {100.0 * test_res.accuracy:.2f}%")
    print(f"Training Loss: {train_res.mean_loss:.4f}")
    print(f"Test Loss: {test_res.mean_loss:.4f}")
    print(f"Checkpoint: {ckpt_path}")
    jlog.emit("train_end", checkpoint=str(ckpt_path),
              train_accuracy=train_res.accuracy, test_accuracy=test_res.accuracy,
              train_loss=train_res.mean_loss, test_loss=test_res.mean_loss)
    return 0


def _print_confusion(confusion, class_names):
    width = max(12, max(len(n) for n in class_names) + 2)
    header = " " * width + "".join(f"{n:>{width}}" for n in class_names)
    print("Confusion matrix (rows = true class):")
    print(header)
    for name, row in zip(class_names, confusion):
        print(f"{name:>{width}}" + "".join(f"{int(v):>{width}}" for v in row))


def cmd_evaluate(args):
    model = ckpt.load(args.checkpoint)
    dtype = model.param_tensors()[0].dtype if model.param_tensors() else np.float64
    dataset = load_any(args.data, model.input_size, dtype)
    result = evaluate(model, dataset)
    print(f"Accuracy: {100.0 * result.accuracy:.2f}%")
    print(f"Loss: {result.mean_loss:.4f}")
    _print_confusion(result.confusion, dataset.class_names)
    if args.log_json:
        print(json.dumps({"event": "evaluate", "accuracy": result.accuracy,
                          "loss": result.mean_loss,
                          "confusion": result.confusion.tolist()}, sort_keys=True))
    return 0


def cmd_predict(args):
    model = ckpt.load(args.checkpoint)
    image = load_image(args.image, size=model.input_size)
    probs = model.predict_proba(image[None, ...])[0]
    best = int(np.argmax(probs))
    for name, p in zip(model.class_names, probs):
        print(f"{name}: {p:.4f}")
    print(f"Predicted: {model.class_names[best]}")
    if args.log_json:
        print(json.dumps({"event": "predict", "probabilities": probs.tolist(),
                          "predicted": model.class_names[best]}, sort_keys=True))
    return 0


def cmd_gradcheck(args):
    kinds = [args.model] if args.model in ("mlp", "cnn") else ["mlp", "cnn"]
    ok = True
    for kind in kinds:
        report = gradient_check(kind, seed=args.seed or 0)
        status = "PASS" if report.passed else "FAIL"
        print(f"[{status}] {kind} (tolerance {report.tolerance:g})")
        for entry in report.entries:
            mark = "ok " if entry.passed else "BAD"
            print(f"  {mark} {entry.name}: max rel error {entry.max_rel_error:.3e}")
        if not report.passed:
            print(f"  failing layers: {', '.join(report.failures())}")
            ok = False
    return 0 if ok else 1


def cmd_report(args):
    write_history_svg(args.history_csv, args.out_svg)
    print(f"Wrote {args.out_svg}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gradecore",
        description="Road-quality image classifiers built from scratch.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_shared(p, with_model=True):
        if with_model:
            p.add_argument("--model", choices=["mlp", "cnn", "logreg", "knn"],
                           default="mlp", help="model kind to train")
        p.add_argument("--size", type=int, help="input image size (default 224)")
        p.add_argument("--seed", type=int, help="master random seed (default 0)")
        p.add_argument("--batch", type=int, help="mini-batch size")
        p.add_argument("--lr", type=float, help="learning rate")
        p.add_argument("--epochs", type=int, help="epoch budget (cnn/logreg)")
        p.add_argument("--steps", type=int, help="mini-batch step budget (mlp)")
        p.add_argument("--patience", type=int, help="early-stopping patience")
        p.add_argument("--k", type=int, help="neighbor count for knn")
        p.add_argument("--test-fraction", type=float, dest="test_fraction",
                       help="held-out fraction (default 0.2)")
        p.add_argument("--threads", type=int,
                       help="worker cap; 1 is the bit-deterministic mode "
                            "(env GRADECORE_THREADS)")
        p.add_argument("--out", help="output directory (default ./out)")
        p.add_argument("--config", help="key=value config file; flags win")
        p.add_argument("--log-json", action="store_true",
                       help="emit machine-readable JSON lines on stdout")

    p_train = sub.add_parser("train", help="train a model on a dataset directory")
    p_train.add_argument("--data", required=True,
                         help="dataset root (class subdirectories) or .gdset cache")
    add_shared(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("checkpoint", help="path to a .gckpt file")
    p_eval.add_argument("--data", required=True, help="dataset root or .gdset cache")
    add_shared(p_eval, with_model=False)
    p_eval.set_defaults(func=cmd_evaluate)

    p_pred = sub.add_parser("predict", help="classify a single image")
    p_pred.add_argument("checkpoint", help="path to a .gckpt file")
    p_pred.add_argument("image", help="path to one image file")
    add_shared(p_pred, with_model=False)
    p_pred.set_defaults(func=cmd_predict)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p_grad.add_argument("--model", choices=["mlp", "cnn", "both"], default="both")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_rep = sub.add_parser("report", help="render a history CSV as an SVG loss plot")
    p_rep.add_argument("history_csv", help="history CSV written by train")
    p_rep.add_argument("out_svg", help="output SVG path")
    p_rep.add_argument("--log-json", action="store_true")
    p_rep.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        return args.func(args)
    except GradecoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
