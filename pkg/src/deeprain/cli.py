"""Command-line entry point: convert, synth, train, eval, gradcheck, selftest.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Seeds always come from flags so every run is replayable.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .autodiff import Tape, grad_check
from .data import (
    DataFormatError,
    load_synth_config,
    parse_text_file,
    read_binary,
    split,
    synth_generate,
    write_binary,
)
from .model import (
    CheckpointError,
    Model,
    ModelSpec,
    build_prediction,
    init_params,
    load_checkpoint,
    preprocess,
    save_checkpoint,
)
from .selftest import run_checks
from .tensor import ShapeError
from .train import DivergenceError, TrainConfig, emit_curve, evaluate, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _dims(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(f"expected T,C,H,W, got {text!r}")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-integer dimension in {text!r}") from None
    if any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError("dimensions must be >= 1")
    return dims


def _seed(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"seed must be >= 0, got {value}")
    return value


def _odd_int(text: str) -> int:
    value = int(text)
    if value < 1 or value % 2 == 0:
        raise argparse.ArgumentTypeError(f"kernel must be odd and >= 1, got {value}")
    return value


def _default_threads() -> int:
    raw = os.environ.get("DEEPRAIN_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deeprain", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("convert", help="text dataset to DRN1 binary")
    p.add_argument("--in", dest="src", required=True)
    p.add_argument("--out", dest="dst", required=True)
    p.add_argument("--dims", type=_dims, required=True, metavar="T,C,H,W")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", help="generate a synthetic DRN1 dataset")
    p.add_argument("--config", required=True, help="key=value file: count,t,c,h,w,noise,a,b,seed")
    p.add_argument("--out", dest="dst", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a DRN1 dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--model", default="conv-lstm", choices=("conv-lstm", "fc-lstm", "linear"))
    p.add_argument("--stacks", type=int, default=1)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--kernel", type=_odd_int, default=3)
    p.add_argument("--pool", type=int, default=1)
    p.add_argument("--optimizer", default="adam", choices=("adam", "gd"))
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=30)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--seed", type=_seed, default=42)
    p.add_argument("--curve", help="learning-curve CSV path")
    p.add_argument("--ckpt", help="checkpoint output path")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--timing", action="store_true", help="record wall time per epoch "
                   "(makes curve files run dependent)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="test-set RMSE of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=_seed, default=42)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--clamp", action="store_true", help="floor predictions at zero")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every parameter gradient")
    p.add_argument("--model", default="conv-lstm", choices=("conv-lstm", "fc-lstm", "linear"))
    p.add_argument("--stacks", type=int, default=1)
    p.add_argument("--seed", type=_seed, default=42)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selftest",
                       help="run the built-in property suite")
    p.set_defaults(func=cmd_selftest)

    return parser


def cmd_convert(args) -> int:
    records = parse_text_file(args.src, args.dims)
    if not records:
        raise DataFormatError("input contains no records")
    write_binary(records, args.dst)
    text_size = os.path.getsize(args.src)
    bin_size = os.path.getsize(args.dst)
    print(f"converted {len(records)} records")
    print(f"compression ratio: {text_size / bin_size:.2f} ({text_size} -> {bin_size} bytes)")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = load_synth_config(args.config)
    records = synth_generate(cfg)
    write_binary(records, args.dst)
    print(f"generated {len(records)} records -> {args.dst}")
    return EXIT_OK


def _resolve_threads(args) -> int:
    return args.threads if args.threads is not None else _default_threads()


def cmd_train(args) -> int:
    records = read_binary(args.data)
    if not records:
        raise DataFormatError("dataset is empty")
    t, c, h, w = records[0].dims
    spec = ModelSpec(
        kind=args.model,
        stacks=args.stacks,
        hidden=args.hidden,
        kernel=args.kernel,
        pool_factor=args.pool,
        in_t=t,
        in_c=c,
        in_h=h,
        in_w=w,
    )
    cfg = TrainConfig(
        model=spec,
        optimizer=args.optimizer,
        lr=args.lr,
        batch_size=args.batch,
        max_epochs=args.epochs,
        early_stop_patience=args.patience,
        seed=args.seed,
        threads=_resolve_threads(args),
        timing=args.timing,
    )
    sp = split(len(records), seed=args.seed)
    result = train(cfg, records, sp, log=print)
    print(f"best_val_rmse={result.best_val_rmse:.12g} (epoch {result.best_epoch})")
    if args.ckpt:
        save_checkpoint(args.ckpt, result.model)
        print(f"checkpoint -> {args.ckpt}")
    if args.curve:
        emit_curve(result.stats, args.curve)
        print(f"curve -> {args.curve}")
    if sp.test:
        test_rmse = evaluate(result.model, records, sp.test, threads=cfg.threads)
        print(f"test_rmse={test_rmse:.12g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    records = read_binary(args.data)
    if not records:
        raise DataFormatError("dataset is empty")
    dims = records[0].dims
    spec_dims = (model.spec.in_t, model.spec.in_c, model.spec.in_h, model.spec.in_w)
    if dims != spec_dims:
        raise ShapeError("eval", "record dims", f"data has {dims}, checkpoint expects {spec_dims}")
    sp = split(len(records), seed=args.seed)
    if not sp.test:
        raise DataFormatError("test split is empty")
    value = evaluate(model, records, sp.test, threads=_resolve_threads(args), clamp=args.clamp)
    print(f"test_rmse={value:.12g}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    spec = ModelSpec(
        kind=args.model,
        stacks=args.stacks,
        hidden=2,
        kernel=3,
        in_t=3,
        in_c=2,
        in_h=5,
        in_w=5,
    )
    rng = np.random.default_rng(args.seed)
    frames = rng.integers(0, 256, (spec.in_t, spec.in_c, spec.in_h, spec.in_w))
    inputs = preprocess(frames, spec)
    target = np.array([float(rng.uniform(0.0, 5.0))])
    params = init_params(spec, seed=args.seed).named_parameters()

    def loss_fn(values):
        tape = Tape()
        nodes = {name: tape.param(name, arr) for name, arr in values.items()}
        pred = build_prediction(tape, Model.from_named(spec, nodes), inputs)
        tape.squared_error(pred, tape.const(target))
        return tape

    report = grad_check(loss_fn, params, step=1e-3, tol=1e-4)
    print(report.render())
    if not report.passed:
        print("gradcheck: FAIL")
        return EXIT_NUMERIC
    print("gradcheck: PASS")
    return EXIT_OK


def cmd_selftest(args) -> int:
    return EXIT_OK if run_checks() else EXIT_NUMERIC


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (DataFormatError, CheckpointError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
