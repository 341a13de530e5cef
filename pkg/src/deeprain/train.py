"""Minibatch training loop, RMSE evaluation, validation-based model
selection, and learning-curve emission.

One training run is fully determined by (config, seed, dataset): shuffles
are seeded, gradient accumulation follows record order inside each batch,
and RMSE sums use exact accumulation, so reruns reproduce curves and
checkpoints bit for bit. Wall-clock measurement is opt-in (``timing``)
because it is the one quantity that cannot be reproducible.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .data import DatasetSplit, RadarRecord, minibatches
from .model import Model, ModelSpec, build_prediction, init_params, lift, preprocess
from .optim import AdamState, adam_step, clip_grads, sgd_step

__all__ = [
    "TrainConfig",
    "EpochStats",
    "TrainResult",
    "DivergenceError",
    "rmse",
    "train",
    "evaluate",
    "emit_curve",
]


class DivergenceError(RuntimeError):
    """Non-finite loss encountered during training."""

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")


@dataclass
class TrainConfig:
    model: ModelSpec
    optimizer: str = "adam"
    lr: float = 0.001
    batch_size: int = 30
    max_epochs: int = 50
    early_stop_patience: int = 3
    seed: int = 0
    threads: int = 1
    timing: bool = False
    clip_norm: float = 0.0

    def __post_init__(self):
        if self.optimizer not in ("adam", "gd"):
            raise ValueError(f"optimizer must be 'adam' or 'gd', got {self.optimizer!r}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.early_stop_patience < 1:
            raise ValueError(
                f"early_stop_patience must be >= 1, got {self.early_stop_patience}"
            )
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")


@dataclass
class EpochStats:
    """Per-epoch learning-curve point.

    ``seconds`` is measured wall time when the run has timing enabled and
    0.0 otherwise, keeping default curve files reproducible.
    """

    epoch: int
    train_rmse: float
    val_rmse: float
    seconds: float = 0.0


@dataclass
class TrainResult:
    model: Model
    stats: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_val_rmse: float = math.inf


def rmse(predictions, truths) -> float:
    """sqrt(mean((p - t)^2)), exact-sum accumulation (order independent)."""
    preds = list(predictions)
    trues = list(truths)
    if not preds:
        raise ValueError("rmse: empty input")
    if len(preds) != len(trues):
        raise ValueError(f"rmse: length mismatch {len(preds)} vs {len(trues)}")
    # (d * d), not d**2: float pow raises OverflowError on huge inputs where
    # multiplication yields inf, and inf must flow to the divergence check
    total = math.fsum((p - t) * (p - t) for p, t in zip(preds, trues))
    return math.sqrt(total / len(preds))


def _map_ordered(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _predict_inputs(model: Model, inputs) -> float:
    tape = Tape()
    lifted = lift(tape, model)
    return float(build_prediction(tape, lifted, inputs).value[0])


def train(
    cfg: TrainConfig,
    records: list[RadarRecord],
    dataset_split: DatasetSplit,
    log=None,
) -> TrainResult:
    """Run the full protocol; return the minimum-validation checkpoint.

    Per epoch: seeded minibatch reshuffle, mean-squared-error loss averaged
    over the batch, one optimizer step per batch. Train RMSE uses the
    predictions collected before each batch update; validation RMSE uses the
    end-of-epoch parameters. Stops after ``early_stop_patience`` epochs
    without validation improvement.
    """
    if not dataset_split.train or not dataset_split.validation:
        raise ValueError("train: training and validation sets must be nonempty")
    model = init_params(cfg.model, cfg.seed)
    params = model.named_parameters()
    cache = {
        idx: preprocess(records[idx].frames, cfg.model)
        for idx in (*dataset_split.train, *dataset_split.validation)
    }
    labels = {idx: records[idx].label for idx in cache}
    adam = AdamState(lr=cfg.lr) if cfg.optimizer == "adam" else None

    result = TrainResult(model=model)
    best: dict[str, np.ndarray] = {k: v.copy() for k, v in params.items()}
    since_improve = 0
    for epoch in range(cfg.max_epochs):
        started = time.perf_counter() if cfg.timing else 0.0
        epoch_preds: list[float] = []
        epoch_truth: list[float] = []
        for batch_no, batch in enumerate(
            minibatches(dataset_split.train, cfg.batch_size, epoch, cfg.seed)
        ):
            tape = Tape()
            lifted = lift(tape, model)
            losses = []
            for idx in batch:
                pred = build_prediction(tape, lifted, cache[idx])
                epoch_preds.append(float(pred.value[0]))
                epoch_truth.append(labels[idx])
                target = tape.const(np.array([labels[idx]]))
                losses.append(tape.squared_error(pred, target))
            tape.mean_scalars(losses)
            loss = tape.forward()
            if not math.isfinite(loss):
                raise DivergenceError(epoch, batch_no, loss)
            grads = tape.backward()
            if cfg.clip_norm > 0:
                clip_grads(grads, cfg.clip_norm)
            if adam is not None:
                adam_step(adam, params, grads)
            else:
                sgd_step(cfg.lr, params, grads)
        val_preds = _map_ordered(
            lambda idx: _predict_inputs(model, cache[idx]),
            dataset_split.validation,
            cfg.threads,
        )
        val_rmse = rmse(val_preds, [labels[i] for i in dataset_split.validation])
        train_rmse = rmse(epoch_preds, epoch_truth)
        seconds = (time.perf_counter() - started) if cfg.timing else 0.0
        result.stats.append(EpochStats(epoch, train_rmse, val_rmse, seconds))
        if log is not None:
            log(f"epoch {epoch}: train={train_rmse:.12g}, val={val_rmse:.12g}")
        if val_rmse < result.best_val_rmse:
            result.best_val_rmse = val_rmse
            result.best_epoch = epoch
            best = {k: v.copy() for k, v in params.items()}
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= cfg.early_stop_patience:
                break
    result.model = Model.from_named(cfg.model, best)
    return result


def evaluate(
    model: Model,
    records: list[RadarRecord],
    indices=None,
    threads: int = 1,
    clamp: bool = False,
) -> float:
    """RMSE over the given records; invariant under their ordering."""
    idxs = list(indices) if indices is not None else list(range(len(records)))
    if not idxs:
        raise ValueError("evaluate: empty record set")

    def one(idx: int) -> float:
        value = _predict_inputs(model, preprocess(records[idx].frames, model.spec))
        return max(0.0, value) if clamp else value

    preds = _map_ordered(one, idxs, threads)
    return rmse(preds, [records[i].label for i in idxs])


def emit_curve(stats: list[EpochStats], path: str) -> None:
    """Write the learning curve CSV (epoch ascending, 12 significant digits)."""
    if not stats:
        raise ValueError("emit_curve: no stats to write")
    rows = sorted(stats, key=lambda s: s.epoch)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_rmse,val_rmse,seconds\n")
        for s in rows:
            fh.write(f"{s.epoch},{s.train_rmse:.12g},{s.val_rmse:.12g},{s.seconds:.12g}\n")
