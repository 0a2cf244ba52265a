"""``rdcnet`` command line: train, eval, verify and inspect.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
from collections import OrderedDict

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, format_config, load_config
from .data import Dataset, DatasetMeta, compute_meta, load_dataset, synth_dataset
from .errors import ConfigError, RDCNetError
from .network import build_network
from .rng import Rng
from .tensor import Tensor
from .training import evaluate, train_loop
from .verify import format_table, run_suites

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

RUN_CONFIG = "run.cfg"
REPORT = "report.jsonl"
CHECKPOINT = "checkpoint.bin"

# independent streams derived from the run seed
DATA_STREAM, INIT_STREAM = (1,), (2,)


def prepare_data(run: RunConfig) -> tuple:
    """``(train, eval, meta)`` for a run, honouring limits and fixed stats."""
    if run.dataset == "synthetic":
        train, eval_ = synth_dataset(run.data_n, run.data_classes, run.data_extent,
                                     Rng(run.seed, DATA_STREAM))
    else:
        train, eval_ = load_dataset(run.dataset, run.data_dir)
    train, eval_ = train.subset(run.train_limit), eval_.subset(run.eval_limit)
    if run.norm_mean is None:
        meta = compute_meta(run.dataset, train, eval_)
    else:
        meta = DatasetMeta(run.dataset, train.classes, len(train), len(eval_), train.extent,
                           tuple(run.norm_mean), tuple(run.norm_std))
    return train, eval_, meta


def _load_run(args, need_checkpoint=False) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "data_dir", None):
        overrides["data.dir"] = args.data_dir
    if getattr(args, "output", None):
        overrides["output"] = args.output
    path = args.config
    if path is None and args.checkpoint:
        path = os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), RUN_CONFIG)
    if path is None:
        raise ConfigError("no configuration given; pass --config or --checkpoint")
    if need_checkpoint and not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    return load_config(path, overrides)


def cmd_train(args) -> int:
    run = _load_run(args)
    out_dir = run.output
    os.makedirs(out_dir, exist_ok=True)
    train, eval_, meta = prepare_data(run)
    run = run.with_norm(meta.mean, meta.std)
    with open(os.path.join(out_dir, RUN_CONFIG), "w") as f:
        f.write(format_config(run))

    network = build_network(run.arch, Rng(run.seed, INIT_STREAM))
    print(f"training {run.variant} on {run.dataset}: {len(train)} train / {len(eval_)} eval, "
          f"{network.num_parameters()} parameters, {run.train.epochs} epochs")
    with open(os.path.join(out_dir, REPORT), "w") as report:
        def on_epoch(rec):
            report.write(rec.to_json() + "\n")
            report.flush()
            if not args.quiet:
                print(f"epoch {rec.epoch:4d}  lr {rec.lr:.5f}  loss {rec.train_loss:.4f}  "
                      f"acc {rec.train_acc:.4f}  eval {rec.eval_acc:.4f}")

        result = train_loop(network, train, run.train, eval_ if len(eval_) else None, meta,
                            on_epoch)
    save_checkpoint(network, os.path.join(out_dir, CHECKPOINT))
    final = result.final
    print(f"done: final loss {final.train_loss:.4f}, eval accuracy {final.eval_acc}; "
          f"outputs in {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    run = _load_run(args, need_checkpoint=True)
    train, eval_, meta = prepare_data(run)
    network = build_network(run.arch, Rng(run.seed, INIT_STREAM))
    load_checkpoint(network, args.checkpoint)
    data: Dataset = train if args.split == "train" else eval_
    acc, loss = evaluate(network, data, meta, run.train.eval_batch_size)
    print(f"split {args.split}  n {len(data)}  top1 {acc!r}  loss {loss:.6f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        checks = run_suites(args.suite)
    except KeyError:
        print(f"error: unknown suite {args.suite!r}; expected one of "
              f"{', '.join(SUITE_NAMES)}", file=sys.stderr)
        return EXIT_USAGE
    print(format_table(checks))
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAILURE


def module_parameter_counts(network) -> "OrderedDict[str, int]":
    """Parameter totals per top-level module, residual blocks listed singly."""
    counts = OrderedDict()
    for name, p in network.named_parameters():
        parts = name.split(".")
        key = ".".join(parts[:2]) if parts[0].startswith("layer") else parts[0]
        counts[key] = counts.get(key, 0) + p.size
    return counts


def cmd_inspect(args) -> int:
    run = _load_run(args)
    network = build_network(run.arch, Rng(run.seed, INIT_STREAM))
    if args.checkpoint:
        load_checkpoint(network, args.checkpoint)
    arch = run.arch
    extent = run.data_extent if run.dataset == "synthetic" else 32
    print(f"variant {run.variant}  stem {arch.stem}  block {arch.block}  "
          f"mask {arch.mask.strategy} tau={arch.mask.tau}")
    print("CE placements: " + (", ".join(f"after stage {s}" for s in arch.ce) or "none"))
    print(f"shape trace (input 1x{arch.in_channels}x{extent}x{extent}):")
    for name, shape in network.trace(Tensor(np.zeros((1, arch.in_channels, extent, extent),
                                                     np.float32))):
        print(f"  {name:<8} {'x'.join(str(s) for s in shape[1:])}")
    print("parameters:")
    for name, count in module_parameter_counts(network).items():
        print(f"  {name:<10} {count:>10}")
    print(f"  {'total':<10} {network.num_parameters():>10}")
    alphas = network.alphas()
    mode = "learnable" if arch.alpha_learnable else "frozen"
    print(f"alpha ({mode}):" + ("" if alphas else " none"))
    for name, value in alphas.items():
        print(f"  {name:<16} {value!r}")
    return EXIT_OK


SUITE_NAMES = ("shapes", "oracles", "gradcheck", "masks", "schedule", "attention", "all")


def _u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdcnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=True):
        p.add_argument("--config", metavar="PATH", help="flat key = value run configuration")
        p.add_argument("--data-dir", metavar="PATH", help="directory holding dataset files")
        p.add_argument("--seed", type=_u64, metavar="U64", help="override the config seed")
        if checkpoint:
            p.add_argument("--checkpoint", metavar="PATH", help="checkpoint.bin of a run")

    p = sub.add_parser("train", help="train a network from a config")
    common(p, checkpoint=False)
    p.add_argument("--output", metavar="DIR", help="override the config output directory")
    p.add_argument("--quiet", action="store_true", help="no per-epoch lines")
    p.set_defaults(func=cmd_train, checkpoint=None)

    p = sub.add_parser("eval", help="top-1 accuracy and loss of a checkpoint")
    common(p)
    p.add_argument("--split", choices=("eval", "train"), default="eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run self-check suites")
    p.add_argument("--suite", default="all", metavar="NAME",
                   help=f"one of {', '.join(SUITE_NAMES)}")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("inspect", help="shape trace, parameter counts, alpha and CE placement")
    common(p)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (RDCNetError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
