"""Bidirectional experiment orchestration: pretrain -> prune sweep -> regrow sweep."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .data import Dataset, RngState, load_idx, minibatches, resolve_data_path, synth_blobs
from .errors import ConfigError, UsageError
from .model import Model, build_model, forward, prunable_total
from .sparsity import (
    MaskSet,
    PruneSchedule,
    RegrowSchedule,
    dense_saliency,
    global_magnitude_mask,
    keep_count,
    masked_step,
    regrow_apply,
    regrow_candidates,
    regrow_sparsity_at,
    schedule_sparsity_at,
)

PHASES = ("pretrain", "prune", "regrow")


@dataclass
class DataConfig:
    source: str = "synth"
    n_train: int = 10000
    n_test: int = 2000
    features: int = 16
    classes: int = 10
    spread: float = 0.15
    train_images: str = "train-images-idx3-ubyte"
    train_labels: str = "train-labels-idx1-ubyte"
    test_images: str = "t10k-images-idx3-ubyte"
    test_labels: str = "t10k-labels-idx1-ubyte"


@dataclass
class ExperimentConfig:
    data: DataConfig
    layers: list
    input_shape: Optional[tuple]
    lr: float
    momentum: float
    batch_size: int
    pretrain_epochs: int
    finetune_lr_scale: float
    prune: PruneSchedule
    regrow: RegrowSchedule
    seed: int
    eval_every: int = 0
    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        if abs(self.regrow.s_start - self.prune.s_final) > 1e-12:
            raise ConfigError(
                f"regrow.s_start ({self.regrow.s_start}) must equal prune.s_final ({self.prune.s_final})"
            )

    @property
    def finetune_lr(self) -> float:
        return self.lr * self.finetune_lr_scale


@dataclass
class TrajectoryRecord:
    phase: str
    step: int
    sparsity: float
    train_loss: float
    test_accuracy: float
    active_params: int
    elapsed_ms: int

    def __post_init__(self):
        if self.phase not in PHASES:
            raise UsageError(f"phase must be one of {PHASES}")


class WorkClock:
    """Deterministic stand-in for wall time: counts training batches processed.

    Wall-clock timings would make trajectory files differ between identical
    runs, which breaks the reproducibility contract; this counter is exactly
    reproducible for a fixed (config, seed).
    """

    def __init__(self):
        self.ticks = 0

    def tick(self, n: int = 1):
        self.ticks += n

    def elapsed_ms(self) -> int:
        return self.ticks


def make_datasets(cfg: ExperimentConfig, rng: RngState):
    d = cfg.data
    if d.source == "synth":
        full = synth_blobs(d.n_train + d.n_test, d.features, d.classes, d.spread, rng)
        idx = np.arange(len(full))
        return full.subset(idx[: d.n_train]), full.subset(idx[d.n_train :])
    if d.source == "idx":
        train = load_idx(resolve_data_path(d.train_images), resolve_data_path(d.train_labels))
        test = load_idx(resolve_data_path(d.test_images), resolve_data_path(d.test_labels))
        if d.n_train and d.n_train < len(train):
            train = train.subset(np.arange(d.n_train))
        if d.n_test and d.n_test < len(test):
            test = test.subset(np.arange(d.n_test))
        return train, test
    raise ConfigError(f"unknown data source {d.source!r}")


def _batch_tensor(model: Model, features: np.ndarray) -> T.Tensor:
    if model.input_shape is not None:
        features = features.reshape((features.shape[0], *model.input_shape))
    return T.Tensor(features, dtype=model.dtype)


def dataset_loss(model: Model, ds: Dataset, batch_size: int = 256) -> float:
    """Mean cross-entropy over the dataset, no tape, no mutation."""
    total = 0.0
    for start in range(0, len(ds), batch_size):
        feats = ds.features[start : start + batch_size]
        labels = ds.labels[start : start + batch_size]
        logits = forward(model, _batch_tensor(model, feats))
        loss = T.softmax_cross_entropy_mean(logits, labels)
        total += float(loss.data) * len(labels)
    return total / len(ds)


def train_epochs(
    model: Model,
    masks: Optional[MaskSet],
    ds: Dataset,
    epochs: int,
    opt: T.OptimizerState,
    rng: RngState,
    batch_size: int,
    clock: Optional[WorkClock] = None,
) -> float:
    """Minibatch SGD; masked when masks are given. Returns mean loss of the
    final epoch (current dataset loss when epochs == 0)."""
    if len(ds) == 0:
        raise ConfigError("dataset is empty")
    if epochs == 0:
        return dataset_loss(model, ds, batch_size)
    last = 0.0
    for _ in range(epochs):
        total = 0.0
        for feats, labels in minibatches(ds, batch_size, rng):
            model.zero_grads()
            with T.Tape() as tape:
                logits = forward(model, _batch_tensor(model, feats))
                loss = T.softmax_cross_entropy_mean(logits, labels)
                T.backward(loss, tape)
            if masks is None:
                T.sgd_momentum_step(model.parameters(), opt)
            else:
                masked_step(model, masks, opt)
            total += float(loss.data) * len(labels)
            if clock is not None:
                clock.tick()
        last = total / len(ds)
    return last


def evaluate_accuracy(model: Model, masks: Optional[MaskSet], test_ds: Dataset, batch_size: int = 256) -> float:
    """Top-1 accuracy; argmax ties go to the lowest class index; pure."""
    if len(test_ds) == 0:
        raise ConfigError("test set is empty")
    correct = 0
    for start in range(0, len(test_ds), batch_size):
        feats = test_ds.features[start : start + batch_size]
        labels = test_ds.labels[start : start + batch_size]
        logits = forward(model, _batch_tensor(model, feats))
        correct += int((np.argmax(logits.data, axis=1) == labels).sum())
    return correct / len(test_ds)


def _record(recorder, phase, step, n_total, active, train_loss, acc, clock):
    recorder.append(
        TrajectoryRecord(
            phase=phase,
            step=step,
            sparsity=1.0 - active / n_total,
            train_loss=train_loss,
            test_accuracy=acc,
            active_params=active,
            elapsed_ms=clock.elapsed_ms() if clock is not None else 0,
        )
    )


def run_prune_phase(
    model: Model,
    sched: PruneSchedule,
    train_ds: Dataset,
    test_ds: Dataset,
    cfg: ExperimentConfig,
    recorder: list,
    rng: RngState,
    clock: Optional[WorkClock] = None,
    masks: Optional[MaskSet] = None,
) -> MaskSet:
    """Prune along the schedule, fine-tuning under the mask after each step."""
    n_total = prunable_total(model)
    for t in range(1, sched.steps + 1):
        s_t = schedule_sparsity_at(sched, t)
        masks = global_magnitude_mask(model, s_t, scope=sched.scope, prev=masks)
        opt = T.OptimizerState(cfg.finetune_lr, cfg.momentum)
        loss = train_epochs(
            model, masks, train_ds, sched.finetune_epochs_per_step, opt, rng, cfg.batch_size, clock
        )
        acc = evaluate_accuracy(model, masks, test_ds)
        _record(recorder, "prune", t, n_total, masks.active_count(), loss, acc, clock)
    return masks


def run_regrow_phase(
    model: Model,
    masks: MaskSet,
    sched: RegrowSchedule,
    train_ds: Dataset,
    test_ds: Dataset,
    cfg: ExperimentConfig,
    recorder: list,
    rng: RngState,
    regrow_rng: Optional[RngState] = None,
    clock: Optional[WorkClock] = None,
) -> MaskSet:
    """Regrow along the schedule; candidate scoring uses one fixed batch."""
    n_total = masks.total()
    if abs(masks.sparsity() - sched.s_start) >= 1.0 / n_total:
        raise ConfigError(
            f"mask sparsity {masks.sparsity():.6f} does not match schedule s_start {sched.s_start}"
        )
    score_feats = train_ds.features[: sched.scoring_batch_size]
    score_labels = train_ds.labels[: sched.scoring_batch_size]
    for r in range(1, sched.steps + 1):
        s_r = regrow_sparsity_at(sched, r)
        k = keep_count(n_total, s_r) - masks.active_count()
        if k < 0:
            raise ConfigError(f"regrow step {r} would increase sparsity")
        saliency = None
        if sched.criterion == "gradient" and k > 0:
            saliency = dense_saliency(model, masks, score_feats, score_labels)
        candidates = regrow_candidates(masks, sched.criterion, k, saliency, regrow_rng)
        regrow_apply(masks, candidates, sched.init_rule, model)
        opt = T.OptimizerState(cfg.finetune_lr, cfg.momentum)
        loss = train_epochs(
            model, masks, train_ds, sched.finetune_epochs_per_step, opt, rng, cfg.batch_size, clock
        )
        acc = evaluate_accuracy(model, masks, test_ds)
        _record(recorder, "regrow", r, n_total, masks.active_count(), loss, acc, clock)
    return masks


def derive_streams(seed: int):
    """Fixed derivation of the per-purpose RNG streams from the config seed."""
    master = RngState(seed)
    return {
        "data": master.spawn(),
        "init": master.spawn(),
        "train": master.spawn(),
        "regrow": master.spawn(),
    }


def pretrain(model: Model, cfg: ExperimentConfig, train_ds, test_ds, recorder, rng, clock=None):
    opt = T.OptimizerState(cfg.lr, cfg.momentum)
    n_total = prunable_total(model)
    if cfg.eval_every > 0:
        loss = 0.0
        for epoch in range(1, cfg.pretrain_epochs + 1):
            loss = train_epochs(model, None, train_ds, 1, opt, rng, cfg.batch_size, clock)
            if epoch % cfg.eval_every == 0 and epoch < cfg.pretrain_epochs:
                acc = evaluate_accuracy(model, None, test_ds)
                _record(recorder, "pretrain", epoch, n_total, n_total, loss, acc, clock)
    else:
        loss = train_epochs(model, None, train_ds, cfg.pretrain_epochs, opt, rng, cfg.batch_size, clock)
    acc = evaluate_accuracy(model, None, test_ds)
    _record(recorder, "pretrain", 0, n_total, n_total, loss, acc, clock)
    return loss, acc


def run_bidirectional(cfg: ExperimentConfig):
    """Full experiment; returns (records, model, masks)."""
    streams = derive_streams(cfg.seed)
    train_ds, test_ds = make_datasets(cfg, streams["data"])
    model = build_model(cfg.layers, streams["init"], input_shape=cfg.input_shape)
    recorder: list = []
    clock = WorkClock()
    pretrain(model, cfg, train_ds, test_ds, recorder, streams["train"], clock)
    masks = run_prune_phase(
        model, cfg.prune, train_ds, test_ds, cfg, recorder, streams["train"], clock
    )
    masks = run_regrow_phase(
        model, masks, cfg.regrow, train_ds, test_ds, cfg, recorder,
        streams["train"], streams["regrow"], clock,
    )
    return recorder, model, masks
