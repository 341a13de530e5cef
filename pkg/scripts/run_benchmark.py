#!/usr/bin/env python3
"""Train the three model kinds on the canonical synthetic benchmark and
print a small comparison table.

Usage: python3 scripts/run_benchmark.py [--epochs N] [--seed S] [--out DIR]

Writes one learning-curve CSV and one checkpoint per model kind when --out
is given. With defaults this reproduces the ordering that the acceptance
suite asserts: two-stacked ConvLSTM < FC-LSTM < linear regression.
"""

import argparse
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from deeprain.data import load_synth_config, split, synth_generate
from deeprain.model import ModelSpec, save_checkpoint
from deeprain.train import TrainConfig, emit_curve, evaluate, train

CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs", "benchmark.cfg")

MODELS = (
    ("linear", dict(kind="linear")),
    ("fc-lstm", dict(kind="fc-lstm", stacks=1, hidden=8)),
    ("conv-lstm-2", dict(kind="conv-lstm", stacks=2, hidden=8, kernel=3)),
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--out", help="directory for curves and checkpoints")
    args = parser.parse_args()

    cfg = load_synth_config(CONFIG)
    records = synth_generate(cfg)
    sp = split(len(records), seed=args.seed)
    print(f"benchmark: {cfg.count} records, split {len(sp.train)}/{len(sp.validation)}/{len(sp.test)}")

    results = []
    for name, fields in MODELS:
        spec = ModelSpec(pool_factor=1, in_t=cfg.t, in_c=cfg.c, in_h=cfg.h, in_w=cfg.w, **fields)
        tc = TrainConfig(model=spec, max_epochs=args.epochs, seed=args.seed)
        started = time.perf_counter()
        result = train(tc, records, sp, log=lambda line: print(f"  [{name}] {line}"))
        elapsed = time.perf_counter() - started
        test_rmse = evaluate(result.model, records, sp.test)
        results.append((name, result, test_rmse, elapsed))
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            emit_curve(result.stats, os.path.join(args.out, f"{name}.csv"))
            save_checkpoint(os.path.join(args.out, f"{name}.drnp"), result.model)

    print(f"\n{'model':<14} {'best val':>10} {'test rmse':>10} {'epochs':>7} {'seconds':>8}")
    for name, result, test_rmse, elapsed in results:
        print(
            f"{name:<14} {result.best_val_rmse:>10.4f} {test_rmse:>10.4f} "
            f"{len(result.stats):>7} {elapsed:>8.1f}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
