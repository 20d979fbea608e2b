"""Command-line front end: ``tinydesc <command> [flags]``.

Commands: gen, patches, train, eval, describe, bounds, quantize.  Global
flags (--seed, --threads, --deterministic, --config) go before the command.
A config file holds flat ``key=value`` lines using flag names without the
leading dashes; flags given on the command line override it.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
import time

import numpy as np

from . import evaluation, synth
from .net import ModelFormatError, build_descriptor_net, load_model, output_bounds, quantize
from .patches import (
    DEFAULT_INVERT_FRACTION,
    DEFAULT_ROTATIONS,
    DEFAULT_SCALES,
    DEFAULT_STRIDE,
    DatasetFormatError,
    extract_patches,
    load_dataset,
    save_dataset,
)
from .trainer import TrainConfig, TrainingError, init_rng, train

log = logging.getLogger("tinydesc")

# exit codes, one per error class
EXIT_OK = 0
EXIT_USAGE = 2  # argparse's own code for unknown flags and bad values
EXIT_MISSING_FILE = 3
EXIT_CORRUPT = 4
EXIT_BAD_INPUT = 5
EXIT_TRAINING = 6
EXIT_IO = 7


class UsageError(Exception):
    pass


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _names(text):
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def dataset_paths(prefix):
    return f"{prefix}.tdpd", f"{prefix}.idx"


def read_config_file(path):
    """Parse flat ``key=value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


# ---------------------------------------------------------------------------
# commands

def cmd_gen(args):
    families = _names(args.families)
    unknown = set(families) - set(synth.FAMILIES)
    if unknown:
        raise UsageError(f"unknown families: {sorted(unknown)}; choose from {','.join(synth.FAMILIES)}")
    if args.count is not None:
        images = [img for f in families for img in synth.build_family_images(f, args.count, args.seed)]
    else:
        targets = synth.family_targets(args.scale)
        images = synth.build_corpus({f: targets[f] for f in families}, args.seed)
    synth.write_corpus(images, args.out, seed=args.seed)
    per_family = {f: sum(img.family == f for img in images) for f in families}
    groups = {f: len({img.group_id for img in images if img.family == f}) for f in families}
    print(f"# seed={args.seed}")
    print("family\tgroups\timages")
    for f in families:
        print(f"{f}\t{groups[f]}\t{per_family[f]}")
    return EXIT_OK


def cmd_patches(args):
    sources = synth.read_corpus(args.corpus)
    if not sources:
        raise ValueError(f"{args.corpus}: corpus is empty, nothing to mine")
    ds = extract_patches(sources, args.stride, _floats(args.scales), _ints(args.rotations),
                         args.invert_fraction, np.random.default_rng(args.seed))
    if len(ds) == 0:
        raise ValueError(f"{args.corpus}: no image is large enough for a 32x32 patch")
    blob, index = dataset_paths(args.out)
    save_dataset(ds, blob, index, meta={"seed": args.seed, "stride": args.stride})
    load_dataset(blob, index)  # read back to confirm checksums before reporting success
    print(f"# seed={args.seed} patches={len(ds)} classes={ds.n_classes}")
    print("patches_per_class\tclasses")
    for key, n in ds.histogram().items():
        print(f"{key}\t{n}")
    return EXIT_OK


def cmd_train(args):
    ds = load_dataset(*dataset_paths(args.dataset))
    config = TrainConfig(batch_size=args.batch_size, alpha=args.alpha, iterations=args.iterations,
                         optimizer=args.optimizer, lr=args.lr, momentum=args.momentum,
                         lr_halving_every=args.lr_halving_every, seed=args.seed,
                         deterministic_mode=args.deterministic, pipeline=args.pipeline, augment=args.augment)
    start = time.time()

    def progress(k, stats):
        if args.log_every and (k + 1) % args.log_every == 0:
            log.info("iter %d loss %.4f solved %.3f close %.3f (%.0fs)", k + 1, stats.loss[-1],
                     stats.frac_solved[-1], stats.frac_close[-1], time.time() - start)

    net, stats = train(ds, config, model_path=args.model, stats_path=args.stats, progress=progress)
    load_model(args.model)  # read back to confirm checksums
    print(f"# seed={args.seed} iterations={len(stats)}")
    if len(stats):
        print(f"final_loss_ma50\t{stats.moving_average('loss')[-1]:.6f}")
        print(f"final_solved_ma50\t{stats.moving_average('frac_solved')[-1]:.6f}")
    return EXIT_OK


def _load_net(args):
    if args.model:
        return load_model(args.model)
    log.info("no --model given; using the untrained network initialized from seed %d", args.seed)
    return build_descriptor_net(init_rng(args.seed))


def cmd_eval(args):
    net = _load_net(args)
    ds = load_dataset(*dataset_paths(args.dataset))
    describer = evaluation.QuantizedDescriber(net) if args.quantized else net
    tiers = evaluation.TIERS if args.tier == "all" else [args.tier]
    tasks = ("verification", "retrieval") if args.task == "both" else (args.task,)
    os.makedirs(args.out, exist_ok=True)
    ladder = _ints(args.ladder)
    print(f"# seed={args.seed}")
    print("task\ttier\tmetric\tvalue")
    for tier in tiers:
        pairs, rset = evaluation.make_tiered_benchmark(ds, tier, np.random.default_rng([args.seed, 7]),
                                                       n_pairs=args.n_pairs, n_queries=args.n_queries,
                                                       ladder=ladder)
        for task in tasks:
            if task == "verification":
                report = evaluation.verify(describer, pairs, args.mode, seed=args.seed)
            else:
                report = evaluation.retrieve(describer, rset, seed=args.seed)
            report.tier = tier
            report.config["tier_seed"] = args.seed
            report.write(os.path.join(args.out, f"{task}_{tier}.tsv"))
            for k, v in report.metrics.items():
                print(f"{task}\t{tier}\t{k}\t{v:.6f}")
    return EXIT_OK


def _input_patches(args):
    if bool(args.dataset) == bool(args.stack):
        raise UsageError("give exactly one of --dataset or --stack")
    if args.dataset:
        return load_dataset(*dataset_paths(args.dataset)).patches
    return evaluation.ingest_patch_stack(args.stack, 32, args.fit)


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w") as fh:
            yield fh


def cmd_describe(args):
    net = load_model(args.model)
    patches = _input_patches(args)
    desc = net.describe(patches)
    with _output(args.out) as fh:
        for i, row in enumerate(desc):
            fh.write(f"{i}\t" + "\t".join(f"{v:.7g}" for v in row) + "\n")
    return EXIT_OK


def cmd_bounds(args):
    b = output_bounds(load_model(args.model))
    with _output(args.out) as fh:
        fh.write("j\tL\tU\n")
        for j, (lo, hi) in enumerate(zip(b.lower, b.upper)):
            fh.write(f"{j}\t{lo:.7g}\t{hi:.7g}\n")
    return EXIT_OK


def cmd_quantize(args):
    net = load_model(args.model)
    bounds = output_bounds(net)
    q = quantize(net.describe(_input_patches(args)), bounds)
    with _output(args.out) as fh:
        fh.write(f"# bounds_crc32={bounds.key:08x}\n")
        for i, row in enumerate(q.codes):
            fh.write(f"{i}\t" + "\t".join(str(int(v)) for v in row) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="tinydesc", formatter_class=fmt,
                                description="Synthesize patches, train and evaluate a 16-float CNN descriptor.")
    p.add_argument("--seed", type=int, default=0, help="master seed for every stochastic step")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="cap on BLAS threads (training in deterministic mode always uses one)")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True,
                   help="bit-reproducible training (single-threaded BLAS)")
    p.add_argument("--config", default=None, help="key=value file with flag defaults")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen", formatter_class=fmt, help="generate a synthetic source corpus")
    g.add_argument("--out", required=True, help="output directory for PGM files and manifest.tsv")
    g.add_argument("--scale", type=float, default=0.01, help="fraction of the reference per-family group counts")
    g.add_argument("--families", default=",".join(synth.FAMILIES), help="comma-separated families to generate")
    g.add_argument("--count", type=int, default=None, help="exact number of images per family (overrides --scale)")
    g.set_defaults(func=cmd_gen)

    m = sub.add_parser("patches", formatter_class=fmt, help="mine a labelled 32x32 patch dataset from a corpus")
    m.add_argument("--corpus", required=True, help="corpus directory written by gen")
    m.add_argument("--out", required=True, help="dataset prefix; writes PREFIX.tdpd and PREFIX.idx")
    m.add_argument("--stride", type=int, default=DEFAULT_STRIDE, help="window stride in pixels")
    m.add_argument("--scales", default=",".join(map(str, DEFAULT_SCALES)), help="comma-separated rescale factors")
    m.add_argument("--rotations", default=",".join(map(str, DEFAULT_ROTATIONS)),
                   help="comma-separated right-angle rotations in degrees")
    m.add_argument("--invert-fraction", type=float, default=DEFAULT_INVERT_FRACTION,
                   help="probability that a group also gets intensity-inverted variants")
    m.set_defaults(func=cmd_patches)

    d = TrainConfig()
    t = sub.add_parser("train", formatter_class=fmt, help="train the descriptor with the triplet loss")
    t.add_argument("--dataset", required=True, help="dataset prefix written by patches")
    t.add_argument("--model", required=True, help="output model file")
    t.add_argument("--stats", default=None, help="per-iteration statistics TSV")
    t.add_argument("--batch-size", type=int, default=d.batch_size, help="triplets per batch")
    t.add_argument("--alpha", type=float, default=d.alpha, help="triplet margin")
    t.add_argument("--iterations", type=int, default=d.iterations, help="number of batches")
    t.add_argument("--optimizer", choices=("sgd_momentum", "plain_sgd"), default=d.optimizer, help="update rule")
    t.add_argument("--lr", type=float, default=d.lr, help="learning rate")
    t.add_argument("--momentum", type=float, default=d.momentum, help="momentum for sgd_momentum")
    t.add_argument("--lr-halving-every", type=int, default=d.lr_halving_every,
                   help="halve the learning rate every N iterations (0 disables)")
    t.add_argument("--pipeline", action=argparse.BooleanOptionalAction, default=d.pipeline,
                   help="prepare the next batch on a background thread")
    t.add_argument("--augment", action=argparse.BooleanOptionalAction, default=d.augment,
                   help="apply online augmentation to triplets")
    t.add_argument("--log-every", type=int, default=50, help="progress log interval (with -v)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", formatter_class=fmt, help="verification and retrieval on a held-out dataset")
    e.add_argument("--dataset", required=True, help="held-out dataset prefix")
    e.add_argument("--model", default=None, help="model file (omit to score the untrained network)")
    e.add_argument("--out", required=True, help="directory for the report TSV files")
    e.add_argument("--task", choices=("verification", "retrieval", "both"), default="both", help="task to run")
    e.add_argument("--tier", choices=("easy", "hard", "tough", "all"), default="all", help="benchmark tier")
    e.add_argument("--mode", choices=("balanced", "imbalanced"), default="balanced", help="verification mode")
    e.add_argument("--n-pairs", type=int, default=500, help="positive pairs per tier")
    e.add_argument("--n-queries", type=int, default=500, help="retrieval queries per tier")
    e.add_argument("--ladder", default=",".join(map(str, evaluation.DEFAULT_LADDER)),
                   help="distractor counts; entries above the pool size are dropped")
    e.add_argument("--quantized", action="store_true", help="score 8-bit quantized descriptors")
    e.set_defaults(func=cmd_eval)

    for name, func, text in (("describe", cmd_describe, "write one descriptor line per patch"),
                             ("quantize", cmd_quantize, "write 8-bit descriptor codes per patch")):
        c = sub.add_parser(name, formatter_class=fmt, help=text)
        c.add_argument("--model", required=True, help="model file")
        c.add_argument("--dataset", default=None, help="dataset prefix to read patches from")
        c.add_argument("--stack", default=None, help="PGM or raw patch stack to read patches from")
        c.add_argument("--fit", choices=("center_crop", "downscale"), default="center_crop",
                       help="how stack patches are fitted to 32x32")
        c.add_argument("--out", default="-", help="output file ('-' for stdout)")
        c.set_defaults(func=func)

    b = sub.add_parser("bounds", formatter_class=fmt, help="write per-component output bounds L_j, U_j")
    b.add_argument("--model", required=True, help="model file")
    b.add_argument("--out", default="-", help="output file ('-' for stdout)")
    b.set_defaults(func=cmd_bounds)
    return p


def _apply_config_file(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config_file(known.config)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for target in [parser, *subparsers.choices.values()]:
        defaults = {}
        for action in target._actions:
            if action.dest in values and action.dest not in ("help", "config", "command"):
                raw = values[action.dest]
                if isinstance(action, argparse.BooleanOptionalAction) or action.const is True:
                    defaults[action.dest] = raw.lower() in ("1", "true", "yes", "on")
                else:
                    defaults[action.dest] = action.type(raw) if action.type else raw
        target.set_defaults(**defaults)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
    except FileNotFoundError as exc:
        print(f"tinydesc: config file not found: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (UsageError, ValueError) as exc:
        print(f"tinydesc: bad config file: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(max(1, args.threads)):
            return args.func(args)
    except UsageError as exc:
        print(f"tinydesc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"tinydesc: missing file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (ModelFormatError, DatasetFormatError, evaluation.PatchStackError) as exc:
        print(f"tinydesc: corrupt or unreadable input: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except TrainingError as exc:
        print(f"tinydesc: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except ValueError as exc:
        print(f"tinydesc: invalid input: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except OSError as exc:
        print(f"tinydesc: I/O error on {exc.filename or '?'}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
