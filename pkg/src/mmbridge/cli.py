"""Command-line interface.

Subcommands: ``gen-data``, ``train``, ``eval``, ``analyze``, ``ablate`` and
``gradcheck``. Exit codes:

    0  success
    2  invalid configuration, dataset spec, or checkpoint/dataset mismatch
    3  numeric failure (non-finite loss, gradient check failure)
    4  I/O failure (refusing to overwrite, unreadable or corrupt file)
"""
import argparse
import json
import logging
import os
import sys

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import apply_overrides, load_config
from .data import (generate_dataset, nearest_centroid_accuracy, read_dataset,
                   write_dataset)
from .errors import (BridgeError, CheckpointError, ConfigError, IncompatibleError,
                     NonFiniteLossError, SpecError)
from .evaluation import MODES, ablate_slots, addressing_similarity, evaluate
from .gradcheck import format_table, run_suite
from .model import DataDims, ParamStore
from .trainer import train

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class Refusal(Exception):
    """An output exists and --force was not given."""


def _bool(text):
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _prepare_out(path, names, force):
    os.makedirs(path, exist_ok=True)
    existing = [n for n in names if os.path.exists(os.path.join(path, n))]
    if existing and not force:
        raise Refusal(f"{path}: {', '.join(existing)} exist; pass --force to overwrite")


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def _comment(text):
    return "".join(f"# {line}\n" for line in text.splitlines())


def _effective(args, **extra):
    cfg = load_config(args.config)
    return apply_overrides(cfg, seed=args.seed, out_dir=args.out, **extra)


def _load_split(data_dir, split):
    return read_dataset(os.path.join(data_dir, f"{split}.mmbd"))


def _check_compatible(store, dataset):
    dims = DataDims.of(dataset)
    if dims != store.dims:
        raise IncompatibleError(
            f"checkpoint expects src_dim={store.dims.src_dim}, tgt_dim={store.dims.tgt_dim}, "
            f"classes={store.dims.num_classes}; dataset has src_dim={dims.src_dim}, "
            f"tgt_dim={dims.tgt_dim}, classes={dims.num_classes}")


def cmd_gen_data(args):
    cfg = _effective(args)
    spec = cfg.data.validate()
    out = cfg.paths.out_dir if args.out else cfg.paths.data_dir
    _prepare_out(out, ["train.mmbd", "test.mmbd", "config.json"], args.force)
    print(f"effective config:\n{cfg.to_json()}")
    train_set, test_set = generate_dataset(spec)
    write_dataset(train_set, os.path.join(out, "train.mmbd"))
    write_dataset(test_set, os.path.join(out, "test.mmbd"))
    _write(os.path.join(out, "config.json"), cfg.to_json() + "\n")
    src = nearest_centroid_accuracy(train_set, test_set, "source")
    tgt = nearest_centroid_accuracy(train_set, test_set, "target")
    print(f"classes={spec.num_classes} codebook={spec.codebook_size} steps={spec.seq_len} "
          f"train={len(train_set)} test={len(test_set)}")
    print(f"nearest-centroid accuracy (time-pooled raw): source={src:.4f} target={tgt:.4f}")
    return EXIT_OK


def cmd_train(args):
    cfg = _effective(args, epochs=args.epochs, slots=args.slots, scale_r=args.scale_r,
                     lr=args.lr, optimizer=args.optimizer,
                     detach_target=args.detach_target_addressing,
                     data_dir=args.data)
    cfg.train.validate()
    out = cfg.paths.out_dir
    _prepare_out(out, ["checkpoint.mmbc", "metrics.csv", "config.json"], args.force)
    print(f"effective config:\n{cfg.to_json()}")
    train_set = _load_split(cfg.paths.data_dir, "train")
    test_set = _load_split(cfg.paths.data_dir, "test")
    store = ParamStore.initialize(cfg.train.model, DataDims.of(train_set), cfg.train.seed)
    store, metrics = train(cfg.train, train_set, test_set, store=store)
    save_checkpoint(os.path.join(out, "checkpoint.mmbc"), store, cfg.train, cfg.train.epochs)
    metrics.write_csv(os.path.join(out, "metrics.csv"), header_comment=cfg.to_json())
    _write(os.path.join(out, "config.json"), cfg.to_json() + "\n")
    if metrics.rows:
        last = metrics.rows[-1]
        print("final epoch: " + ", ".join(f"{k}={v:.4f}" for k, v in last.items()
                                          if isinstance(v, float) and k != "wall_time"))
    return EXIT_OK


def cmd_eval(args):
    store, tcfg, epoch = load_checkpoint(args.checkpoint)
    dataset = _load_split(args.data, args.split)
    _check_compatible(store, dataset)
    mode = args.mode or ("baseline" if store.config.is_baseline else "recall")
    report = evaluate(store, dataset, mode)
    header = json.dumps({"checkpoint": os.path.basename(args.checkpoint), "epoch": epoch,
                         "split": args.split, "train": tcfg.to_dict()}, sort_keys=True)
    text = _comment(header) + report.to_text()
    print(text, end="")
    if args.out:
        names = [f"eval_{mode}.txt", f"eval_{mode}.csv"]
        _prepare_out(args.out, names, args.force)
        _write(os.path.join(args.out, names[0]), text)
        _write(os.path.join(args.out, names[1]), _comment(header) + report.to_csv())
    return EXIT_OK


def cmd_analyze(args):
    store, tcfg, epoch = load_checkpoint(args.checkpoint)
    dataset = _load_split(args.data, args.split)
    _check_compatible(store, dataset)
    report = addressing_similarity(store, dataset, per_class=args.per_class,
                                   keep_pairs=bool(args.out))
    header = json.dumps({"checkpoint": os.path.basename(args.checkpoint), "epoch": epoch,
                         "split": args.split, "per_class": args.per_class,
                         "train": tcfg.to_dict()}, sort_keys=True)
    text = _comment(header) + report.to_text()
    print(text, end="")
    if args.out:
        _prepare_out(args.out, ["similarity.txt", "similarity_pairs.csv"], args.force)
        _write(os.path.join(args.out, "similarity.txt"), text)
        _write(os.path.join(args.out, "similarity_pairs.csv"),
               _comment(header) + report.pairs_csv())
    return EXIT_OK


def cmd_ablate(args):
    cfg = _effective(args, epochs=args.epochs, data_dir=args.data)
    cfg.train.validate()
    train_set = _load_split(cfg.paths.data_dir, "train")
    test_set = _load_split(cfg.paths.data_dir, "test")
    if args.out:
        _prepare_out(args.out, ["ablation.txt", "ablation.csv"], args.force)
    print(f"effective config:\n{cfg.to_json()}")
    table = ablate_slots(cfg.train, args.slots, args.seeds, train_set, test_set)
    text = _comment(cfg.to_json()) + table.to_text()
    print(table.to_text(), end="")
    if args.out:
        _write(os.path.join(args.out, "ablation.txt"), text)
        _write(os.path.join(args.out, "ablation.csv"), _comment(cfg.to_json()) + table.to_csv())
    return EXIT_OK


def cmd_gradcheck(args):
    rows, elapsed = run_suite(seed=args.seed, dims=args.dims, n_seeds=args.n_seeds,
                              corrupt=args.corrupt_adjoint)
    print(f"# seeds {args.seed}..{args.seed + args.n_seeds - 1}, dims={args.dims}, "
          f"h=1e-5, tolerance=1e-4")
    print(format_table(rows), end="")
    print(f"# elapsed {elapsed:.1f}s")
    failed = [r for r in rows if not r.passed]
    for r in failed:
        print(f"FAILED {r.op}: max relative error {r.max_rel_err:.3e} at {r.worst}",
              file=sys.stderr)
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="mmbridge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch metrics")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="master seed (overrides config)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")

    sp = sub.add_parser("gen-data", help="render the synthetic dataset")
    common(sp)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train a model")
    common(sp)
    sp.add_argument("--data", help="dataset directory (train.mmbd, test.mmbd)")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--slots", type=int, help="memory slots; 0 trains the baseline")
    sp.add_argument("--scale-r", type=float, help="addressing scale r")
    sp.add_argument("--lr", type=float)
    sp.add_argument("--optimizer", choices=("sgd", "momentum", "adam"))
    sp.add_argument("--detach-target-addressing", type=_bool, metavar="BOOL")
    sp.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "evaluate a checkpoint"),
                                 ("analyze", cmd_analyze, "addressing similarity study")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("checkpoint")
        sp.add_argument("--data", required=True, help="dataset directory")
        sp.add_argument("--split", choices=("train", "test"), default="test")
        common(sp, config=False)
        if name == "eval":
            sp.add_argument("--mode", choices=MODES)
        else:
            sp.add_argument("--per-class", type=int, default=10,
                            help="probe samples per class")
        sp.set_defaults(func=func)

    sp = sub.add_parser("ablate", help="slot-count sweep against the N=0 baseline")
    common(sp)
    sp.add_argument("--data", help="dataset directory")
    sp.add_argument("--slots", type=_int_list, default=[0, 16, 32, 64])
    sp.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every loss path")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--dims", type=int, default=8, help="operand size, 1..16")
    sp.add_argument("--n-seeds", type=int, default=10)
    sp.add_argument("--corrupt-adjoint", help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except Refusal as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SpecError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
