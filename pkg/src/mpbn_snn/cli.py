"""Command-line interface: train / fold / eval / landscape / inspect.

Set ``MPBN_SNN_LOG`` (e.g. ``INFO`` or ``DEBUG``) for log output on stderr.
"""
import argparse
import logging
import os
import sys
import time

import numpy as np

from . import checkpoint
from .data import load_directory, train_test_synthetic
from .errors import ConfigError, SNNError
from .network import OpCounter, build_model, parse_arch
from .reparam import fold_model
from .train import TrainConfig, curvature_proxy, evaluate, landscape_1d, train

log = logging.getLogger("mpbn_snn")


def _shape(text):
    try:
        dims = tuple(int(d) for d in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}, expected CxHxW")
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}, expected CxHxW")
    return dims


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _add_dataset_flags(p):
    g = p.add_argument_group("dataset")
    g.add_argument("--dataset", required=True,
                   help="'synthetic' or a directory of MNIST IDX / CIFAR-10 binary files")
    g.add_argument("--n-train", type=_positive, default=256)
    g.add_argument("--n-test", type=_positive, default=512)
    g.add_argument("--classes", type=_positive, default=4)
    g.add_argument("--image-shape", type=_shape, default=(1, 8, 8))
    g.add_argument("--noise", type=float, default=0.3)
    g.add_argument("--data-seed", type=int, default=None,
                   help="synthetic split seed (defaults to --seed)")


def build_parser():
    parser = argparse.ArgumentParser(prog="mpbn-snn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model with (or without) MPBN")
    _add_dataset_flags(p)
    p.add_argument("--arch", default="8,p,16", help="comma list of conv widths and 'p' (2x2 max-pool)")
    p.add_argument("--T", type=_positive, default=2)
    p.add_argument("--mpbn", choices=("off", "channel", "element"), default="channel")
    p.add_argument("--epochs", type=_positive, default=40)
    p.add_argument("--batch-size", type=_positive, default=64)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f32")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="run log CSV path (default: <out>.csv)")

    p = sub.add_parser("fold", help="fold BN and MPBN of a training checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--report", help="fold report path (default: <output>.report.txt)")

    p = sub.add_parser("eval", help="top-1 accuracy and latency of a checkpoint")
    p.add_argument("checkpoint")
    _add_dataset_flags(p)
    p.add_argument("--T", type=_positive, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", choices=("train", "test"), default="test")

    p = sub.add_parser("landscape", help="1-D loss landscape of a training checkpoint")
    p.add_argument("checkpoint")
    _add_dataset_flags(p)
    p.add_argument("--n-points", type=_positive, default=21)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--T", type=_positive, default=None)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--out", required=True, help="CSV path for (alpha, loss) records")

    p = sub.add_parser("inspect", help="describe a checkpoint")
    p.add_argument("checkpoint")
    return parser


def _flags_header(args):
    return {k: v for k, v in sorted(vars(args).items())}


def _load_data(args, parser):
    if args.dataset == "synthetic":
        seed = args.data_seed if args.data_seed is not None else args.seed
        return train_test_synthetic(seed, args.n_train, args.n_test, args.classes,
                                    args.image_shape, args.noise)
    if not os.path.isdir(args.dataset):
        parser.error(f"dataset directory {args.dataset!r} does not exist")
    return load_directory(args.dataset)


def _write_text(path, text):
    with open(path, "w") as f:
        f.write(text)


def cmd_train(args, parser):
    try:
        parse_arch(args.arch)
    except ConfigError as exc:
        parser.error(str(exc))
    train_set, test_set = _load_data(args, parser)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr0=args.lr,
                      momentum=args.momentum, seed=args.seed, T=args.T, mpbn=args.mpbn,
                      arch=args.arch, dataset=args.dataset, dtype=args.dtype)
    init_seed = np.random.SeedSequence(cfg.seed).spawn(2)[0]
    model = build_model(train_set.shape, cfg.arch, train_set.class_count, mpbn=cfg.mpbn,
                        seed=init_seed, dtype=cfg.np_dtype, T=cfg.T)
    best, run = train(model, cfg, train_set, test_set)
    run.header = {f"flag.{k}": v for k, v in _flags_header(args).items()}
    checkpoint.save(best, args.out)
    log_path = args.log or args.out + ".csv"
    _write_text(log_path, run.to_csv())
    print(f"best test accuracy {max(run.accuracies):.4f}; checkpoint {args.out}; log {log_path}")
    return 0


def cmd_fold(args, parser):
    model = checkpoint.load(args.input)
    if model.folded:
        print(f"error: {args.input} is already folded", file=sys.stderr)
        return 1
    folded, reports = fold_model(model)
    checkpoint.save(folded, args.output)
    lines = [f"# flag.{k}={v}" for k, v in _flags_header(args).items()]
    lines += [r.to_text() for r in reports]
    lines += ["", "# records"]
    for r in reports:
        lines.append(" ".join(r.to_records()))
    report_path = args.report or args.output + ".report.txt"
    _write_text(report_path, "\n".join(lines) + "\n")
    for r in reports:
        print(r.to_text())
    return 0


def _timed_eval(model, dataset, T):
    counter = OpCounter()
    t0 = time.perf_counter()
    acc, loss = evaluate(model, dataset, T, counter=counter)
    latency = (time.perf_counter() - t0) / len(dataset)
    return acc, loss, latency, counter


def cmd_eval(args, parser):
    model = checkpoint.load(args.checkpoint)
    train_set, test_set = _load_data(args, parser)
    dataset = test_set if args.split == "test" else train_set
    if tuple(dataset.shape) != tuple(model.input_shape):
        print(f"error: dataset images {dataset.shape} do not match model input "
              f"{model.input_shape}", file=sys.stderr)
        return 1
    T = args.T or model.T
    if T > model.T:
        print(f"warning: T={T} exceeds trained T={model.T}; thresholds are time-independent, "
              "continuing", file=sys.stderr)
    variants = [("folded", model)] if model.folded else [
        ("training", model), ("folded", fold_model(model)[0])]
    for name, m in variants:
        acc, loss, latency, counter = _timed_eval(m, dataset, T)
        n = len(dataset)
        print(f"{name}: accuracy={acc:.6f} loss={loss:.6f} latency_ms_per_sample={latency * 1e3:.4f} "
              f"norm_ops={counter.norm_ops} elementwise_ops_per_sample={counter.elementwise_ops / n:g}")
    return 0


def cmd_landscape(args, parser):
    model = checkpoint.load(args.checkpoint)
    if model.folded:
        print("error: the landscape probe needs a training-mode checkpoint", file=sys.stderr)
        return 1
    train_set, test_set = _load_data(args, parser)
    dataset = train_set if args.split == "train" else test_set
    points = landscape_1d(model, dataset, args.n_points, args.radius, args.seed, T=args.T)
    lines = [f"# flag.{k}={v}" for k, v in _flags_header(args).items()]
    lines.append(f"# curvature_proxy={curvature_proxy(points)!r}")
    lines.append("alpha,loss")
    lines += [f"{a!r},{l!r}" for a, l in points]
    _write_text(args.out, "\n".join(lines) + "\n")
    print(f"wrote {len(points)} points to {args.out}; curvature proxy {curvature_proxy(points):.6g}")
    return 0


def cmd_inspect(args, parser):
    model = checkpoint.load(args.checkpoint)
    print(f"mode={model.mode} dtype={np.dtype(model.dtype).name} T={model.T} "
          f"input={model.input_shape} classes={model.num_classes} mpbn={model.mpbn_mode}")
    for i, s in enumerate(model.specs):
        n_params = sum(a.size for a in model.params[i].values())
        desc = f"[{i}] {s.kind}"
        if s.kind == "conv_bn_lif":
            desc += f" {s.in_channels}->{s.out_channels} k{s.kernel} mpbn={s.mpbn} tau={s.lif.tau} v_th={s.lif.v_th}"
            if model.rules[i] is not None:
                th = model.rules[i].threshold
                desc += f" thresholds[{th.min():.4g}, {th.max():.4g}] shape={th.shape}"
        desc += f" params={n_params}"
        print(desc)
    return 0


COMMANDS = {"train": cmd_train, "fold": cmd_fold, "eval": cmd_eval,
            "landscape": cmd_landscape, "inspect": cmd_inspect}


def main(argv=None):
    level = os.environ.get("MPBN_SNN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args, parser)
    except (SNNError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
