"""Command line entry point: ``mpasal <command> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import data, trainer
from .autoencoder import LabelAutoencoder, train_autoencoder
from .gradsuite import gradcheck_suite


def _size(text: str) -> tuple[int, int]:
    h, sep, w = text.lower().partition("x")
    if not sep:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}")
    return int(h), int(w)


def _weights(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"weights must look like ws,wt, got {text!r}")
    return float(parts[0]), float(parts[1])


def cmd_gen_data(args) -> int:
    for split, per_class in (("train", args.clips_per_class), ("test", args.test_clips_per_class)):
        if per_class:
            m = data.generate_synthetic_dataset(args.out, args.classes, per_class, args.frames,
                                                args.size, args.seed, args.task, split)
            print(f"{split}: {len(m)} clips -> {Path(args.out) / (split + '.json')}")
    return 0


def cmd_train_encoder(args) -> int:
    model = train_autoencoder(args.classes, args.code_dim, args.epochs, args.lr, args.seed)
    model.save(args.out)
    print(f"encoder K={args.classes} D={args.code_dim} reconstruction=100% -> {args.out}")
    return 0


def cmd_train(args) -> int:
    config = trainer.TrainConfig.load(args.config) if args.config else trainer.TrainConfig.desk(args.stream)
    if config.stream != args.stream:
        config.stream = args.stream
    manifest = data.load_manifest(Path(args.data) / "train.json")
    encoder = LabelAutoencoder.load(args.encoder) if args.encoder else None
    ckpt = trainer.train_stream(manifest, config, encoder, out=args.out)
    print(f"trained {config.stream} stream for {ckpt.epoch} epochs -> {args.out}")
    return 0


def _eval_manifest(path) -> data.DatasetManifest:
    path = Path(path)
    return data.load_manifest(path / "test.json" if path.is_dir() else path)


def cmd_eval(args) -> int:
    ckpt = trainer.Checkpoint.load(args.ckpt)
    metrics = trainer.evaluate(ckpt, _eval_manifest(args.data))
    trainer.emit_reports(metrics, args.out, ckpt.loss_log)
    print(f"accuracy {metrics.accuracy:.4f} on {metrics.total} clips -> {args.out}")
    return 0


def cmd_fuse(args) -> int:
    spatial = trainer.Checkpoint.load(args.spatial)
    temporal = trainer.Checkpoint.load(args.temporal)
    metrics = trainer.fuse_streams(spatial, temporal, _eval_manifest(args.data), args.weights)
    trainer.emit_reports(metrics, args.out)
    print(f"fused accuracy {metrics.accuracy:.4f} on {metrics.total} clips -> {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    return 0 if gradcheck_suite(args.seed).passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpasal")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic moving-shape dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--task", choices=data.TASKS, default="joint")
    g.add_argument("--classes", type=int, required=True)
    g.add_argument("--clips-per-class", type=int, default=50)
    g.add_argument("--test-clips-per-class", type=int, default=25)
    g.add_argument("--frames", type=int, default=8)
    g.add_argument("--size", type=_size, default=(32, 32))
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    e = sub.add_parser("train-encoder", help="train and freeze the label autoencoder")
    e.add_argument("--classes", type=int, required=True)
    e.add_argument("--code-dim", type=int, default=64)
    e.add_argument("--epochs", type=int, default=2000)
    e.add_argument("--lr", type=float, default=0.01)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_train_encoder)

    t = sub.add_parser("train", help="train one stream")
    t.add_argument("--stream", choices=("spatial", "temporal"), required=True)
    t.add_argument("--data", required=True, help="dataset directory holding train.json")
    t.add_argument("--encoder")
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("eval", help="evaluate a checkpoint and write reports")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--data", required=True, help="dataset directory (uses test.json) or manifest")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_eval)

    f = sub.add_parser("fuse", help="fuse spatial and temporal scores")
    f.add_argument("--spatial", required=True)
    f.add_argument("--temporal", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--weights", type=_weights, default=(1.0, 1.0))
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fuse)

    c = sub.add_parser("gradcheck", help="finite-difference check of every op")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
