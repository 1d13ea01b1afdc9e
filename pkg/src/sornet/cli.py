"""Command-line entry point: ``sornet <command> [options]``.

Exit codes: 0 success, 1 verification failed (gradcheck), 2 configuration
error, 3 data error, 4 numeric failure.
"""

import argparse
import logging
import os
import sys

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import MODEL_KEYS, ConfigError, RunConfig
from .data import DataError, compute_channel_means, denormalize, load_dataset, load_png, \
    make_lr_tree, normalize, save_png
from .models import ModelSpec, build_model, count_params, load_partial, model_forward

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

log = logging.getLogger("sornet")

# (blocks, channels) rows of the self-organized network hyperparameter table
TABLE1 = [((4, 32), 365_059), ((8, 32), 586_499), ((4, 64), 1_448_963), ((8, 64), 2_334_311)]


def _config(args):
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    cfg = RunConfig.load(args.config, overrides)
    threads = cfg.get_int("threads")
    if threads is not None:
        os.environ["SORNET_THREADS"] = str(threads)
    return cfg


def _load_model(path):
    """(model, means, checkpoint) from a checkpoint file."""
    from .training import means_from_meta, spec_from_meta

    ckpt = load_checkpoint(path)
    try:
        spec = spec_from_meta(ckpt.meta)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: checkpoint carries no valid model spec ({exc})") from None
    model = build_model(spec, np.random.default_rng(0))
    try:
        load_partial(model, ckpt.params)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    means = means_from_meta(ckpt.meta)
    if means is None:
        raise CheckpointError(f"{path}: checkpoint carries no channel means")
    return model, means, ckpt


# ---------------------------------------------------------------- commands

def cmd_make_dataset(args):
    manifest = make_lr_tree(args.hr, args.out, tuple(args.scale))
    print(f"wrote {manifest}")
    return EXIT_OK


def cmd_toy_corpus(args):
    from .toy import generate

    train_dir, val_dir = generate(args.out, seed=args.seed)
    print(f"train: {train_dir}\nval: {val_dir}")
    return EXIT_OK


def cmd_train(args):
    from .training import train

    cfg = _config(args)
    if args.checkpoint:
        cfg.update({"resume": args.checkpoint})
    tcfg = cfg.train_config()
    if tcfg.means is None and not tcfg.resume:
        records = load_dataset(tcfg.train_data, tcfg.spec.scale, min_lr_size=tcfg.patch)
        tcfg.means = compute_channel_means(r.hr for r in records)
        cfg.set_means(tcfg.means)
    cfg.write_resolved()
    ckpt = train(tcfg)
    print(f"trained {ckpt.meta['iteration']} iterations; run directory {cfg.run_dir()}")
    return EXIT_OK


def _check_against_config(cfg, spec):
    """Reject a checkpoint whose spec differs from model keys set in the config."""
    if not cfg.explicit & set(MODEL_KEYS):
        return
    from .training import check_spec_matches, spec_meta

    try:
        check_spec_matches(cfg.model_spec(), spec_meta(spec))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_eval(args):
    from .metrics import evaluate

    cfg = _config(args)
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint")
    model, means, _ = _load_model(args.checkpoint)
    _check_against_config(cfg, model.spec)
    data = args.data or cfg.get_str("val_data")
    if data is None:
        raise ConfigError("eval needs val_data (or --data)")
    records = load_dataset(data, model.spec.scale)
    report = evaluate(model, records, means, crop=cfg.get_int("crop"),
                      meta={"checkpoint": str(args.checkpoint), "data": str(data)})
    run_dir = cfg.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "report.tsv").write_text(report.to_tsv())
    (run_dir / "report.summary").write_text(report.summary())
    sys.stdout.write(report.to_tsv())
    sys.stdout.write(report.summary())
    return EXIT_NUMERIC if len(report.valid) < len(report.rows) else EXIT_OK


def cmd_sr(args):
    model, means, _ = _load_model(args.checkpoint)
    lr = load_png(args.input)
    from .autograd import Tensor

    y = model_forward(model, Tensor(normalize(lr, means))).data
    if not np.all(np.isfinite(y)):
        log.error("model produced non-finite values")
        return EXIT_NUMERIC
    save_png(denormalize(y, means), args.output)
    print(f"{args.input} {lr.shape[3]}x{lr.shape[2]} -> {args.output} "
          f"{y.shape[3]}x{y.shape[2]}")
    return EXIT_OK


def cmd_count_params(args):
    if args.table1:
        for (blocks, channels), printed in TABLE1:
            n = count_params(ModelSpec.selfonn(blocks, channels, q=3, scale=2))
            note = "" if n == printed else \
                f"  (published table prints {printed:,}; delta {printed - n:+,})"
            print(f"{blocks} ({channels}): {n:,}{note}")
        return EXIT_OK
    spec = _config(args).model_spec()
    print(f"{spec.arch} blocks={spec.num_blocks} channels={spec.channels} q={spec.q} "
          f"scale=x{spec.scale} num_sor={spec.num_sor} upsampler={spec.upsampler_kind}: "
          f"{count_params(spec):,}")
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import format_results, run_gradcheck

    results = run_gradcheck(seed=args.seed or 0)
    print(format_results(results))
    failed = [name for name, _, ok in results if not ok]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_FAILED
    print(f"all {len(results)} items passed")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(prog="sornet", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p, checkpoint=False):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint file")
        return p

    p = sub.add_parser("make-dataset", help="derive bicubic LR trees from HR images")
    p.add_argument("--hr", required=True, help="directory of HR PNGs")
    p.add_argument("--out", required=True, help="output dataset root")
    p.add_argument("--scale", type=int, action="append", choices=(2, 4),
                   help="scale factor (repeatable; default 2)")
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("toy-corpus", help="write the procedural toy corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_toy_corpus)

    p = with_config(sub.add_parser("train", help="train (or resume with --checkpoint)"), True)
    p.set_defaults(func=cmd_train)

    p = with_config(sub.add_parser("eval", help="PSNR/SSIM report of a checkpoint"), True)
    p.add_argument("--data", help="dataset root (overrides val_data)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sr", help="upscale one PNG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_sr)

    p = with_config(sub.add_parser("count-params", help="learnable parameter counts"))
    p.add_argument("--table1", action="store_true",
                   help="the four self-organized configurations of the hyperparameter table")
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and block")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    from .training import NumericError

    args = build_parser().parse_args(argv)
    if getattr(args, "scale", None) is None and args.command == "make-dataset":
        args.scale = [2]
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # spec / checkpoint mismatches and other invalid settings
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
