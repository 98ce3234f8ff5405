"""Binary masks, magnitude pruning, and selective regrowth of pruned weights."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .data import RngState, permutation
from .errors import ConfigError, InputError, UsageError
from .model import Model, forward, prunable_slots

CRITERIA = ("gradient", "random", "rewind_magnitude")
INIT_RULES = ("zero", "rewind")
SCOPES = ("global", "layerwise")
INTERPOLATIONS = ("cubic", "linear")


@dataclass
class MaskSet:
    """Per-slot binary masks (1 = active) plus the graveyard of pruned values.

    The graveyard is stored dense: value at a pruned position, 0.0 where active,
    so membership is exactly "mask bit is 0".
    """

    masks: dict
    graveyard: dict

    @staticmethod
    def all_active(model: Model) -> "MaskSet":
        masks = {pid: np.ones(n, dtype=np.uint8) for pid, n in prunable_slots(model)}
        grave = {pid: np.zeros(n, dtype=np.float32) for pid, n in prunable_slots(model)}
        return MaskSet(masks, grave)

    def total(self) -> int:
        return sum(m.size for m in self.masks.values())

    def active_count(self) -> int:
        return int(sum(int(m.sum()) for m in self.masks.values()))

    def pruned_count(self) -> int:
        return self.total() - self.active_count()

    def sparsity(self) -> float:
        n = self.total()
        return 1.0 - self.active_count() / n if n else 0.0

    def copy(self) -> "MaskSet":
        return MaskSet(
            {pid: m.copy() for pid, m in self.masks.items()},
            {pid: g.copy() for pid, g in self.graveyard.items()},
        )

    def aligned_with(self, model: Model) -> bool:
        slots = prunable_slots(model)
        if len(self.masks) != len(slots):
            return False
        return all(pid in self.masks and self.masks[pid].size == n for pid, n in slots)


def keep_count(n: int, s: float) -> int:
    """Active weights at target sparsity s: N - floor(s*N)."""
    if not (0.0 <= s <= 1.0):
        raise InputError(f"sparsity {s} outside [0, 1]")
    return n - math.floor(s * n)


def _rank_pruned_first(values: np.ndarray, slot_idx: np.ndarray, flat_idx: np.ndarray):
    """Indices sorted by (|value| asc, slot asc, flat index asc)."""
    return np.lexsort((flat_idx, slot_idx, np.abs(values)))


def global_magnitude_mask(
    model: Model,
    s: float,
    scope: str = "global",
    prev: Optional[MaskSet] = None,
) -> MaskSet:
    """Prune the smallest-magnitude weights to reach sparsity s.

    Ties break toward the lowest (slot, flat index). Pruned values are copied
    into the graveyard, then zeroed in the parameter tensors. When `prev` is
    given (iterative pruning), positions pruned in both keep their original
    graveyard value.
    """
    if scope not in SCOPES:
        raise InputError(f"scope must be one of {SCOPES}")
    slots = prunable_slots(model)
    masks = {pid: np.ones(n, dtype=np.uint8) for pid, n in slots}
    if scope == "global":
        vals = np.concatenate([model.params[pid].data.reshape(-1) for pid, _ in slots])
        slot_idx = np.concatenate(
            [np.full(n, i, dtype=np.int64) for i, (_, n) in enumerate(slots)]
        )
        flat_idx = np.concatenate([np.arange(n, dtype=np.int64) for _, n in slots])
        order = _rank_pruned_first(vals, slot_idx, flat_idx)
        total = vals.size
        n_prune = total - keep_count(total, s)
        for j in order[:n_prune]:
            masks[slots[slot_idx[j]][0]][flat_idx[j]] = 0
    else:
        for pid, n in slots:
            w = model.params[pid].data.reshape(-1)
            order = np.lexsort((np.arange(n), np.abs(w)))
            n_prune = n - keep_count(n, s)
            masks[pid][order[:n_prune]] = 0
    grave = {}
    for pid, n in slots:
        w = model.params[pid].data.reshape(-1)
        dead = masks[pid] == 0
        g = np.where(dead, w, 0.0).astype(np.float32)
        if prev is not None and pid in prev.graveyard:
            # keep the value recorded when the position was first pruned
            both = dead & (prev.masks[pid] == 0)
            g[both] = prev.graveyard[pid][both]
        grave[pid] = g
        w[dead] = 0
    return MaskSet(masks, grave)


def apply_masks(model: Model, ms: MaskSet) -> None:
    if not ms.aligned_with(model):
        raise UsageError("MaskSet is not aligned with the model")
    for pid, _ in prunable_slots(model):
        w = model.params[pid].data.reshape(-1)
        w[ms.masks[pid] == 0] = 0


def masked_step(model: Model, ms: MaskSet, opt: T.OptimizerState) -> None:
    """SGD step with gradients and velocity zeroed at masked positions."""
    for pid in model.param_order():
        p = model.params[pid]
        if p.grad is None:
            raise UsageError(f"{pid.name} has no gradient")
        if pid.role == "weight" and pid in ms.masks:
            mask = ms.masks[pid].reshape(p.data.shape)
            p.grad *= mask
    T.sgd_momentum_step(model.parameters(), opt)
    order = model.param_order()
    for i, pid in enumerate(order):
        if pid.role == "weight" and pid in ms.masks:
            dead = (ms.masks[pid] == 0).reshape(model.params[pid].data.shape)
            opt.velocity[i][dead] = 0
            model.params[pid].data[dead] = 0


def dense_saliency(model: Model, ms: MaskSet, features: np.ndarray, labels: np.ndarray):
    """|dL/dw| for every prunable position, including pruned ones.

    Forward runs with masks applied; backward is NOT masked, so pruned
    positions receive the gradient they would have at w=0.
    """
    if features.shape[0] == 0:
        raise InputError("scoring batch must be non-empty")
    apply_masks(model, ms)
    model.zero_grads()
    with T.Tape() as tape:
        logits = forward(model, T.Tensor(features, dtype=model.dtype))
        loss = T.softmax_cross_entropy_mean(logits, labels)
        T.backward(loss, tape)
    return {
        pid: np.abs(model.params[pid].grad.reshape(-1)).copy()
        for pid, _ in prunable_slots(model)
    }


def regrow_candidates(ms: MaskSet, criterion: str, k: int, saliency=None, rng: RngState = None):
    """Pick k pruned positions to reactivate, deterministically for fixed inputs."""
    if criterion not in CRITERIA:
        raise InputError(f"criterion must be one of {CRITERIA}")
    pids = list(ms.masks.keys())
    pruned = [(i, pid, np.flatnonzero(ms.masks[pid] == 0)) for i, pid in enumerate(pids)]
    n_pruned = sum(len(fx) for _, _, fx in pruned)
    if k > n_pruned:
        raise UsageError(f"k={k} exceeds pruned count {n_pruned}")
    if k == 0:
        return []
    slot_idx = np.concatenate([np.full(len(fx), i, dtype=np.int64) for i, _, fx in pruned])
    flat_idx = np.concatenate([fx for _, _, fx in pruned])
    if criterion == "gradient":
        if saliency is None:
            raise UsageError("gradient criterion requires a saliency map")
        score = np.concatenate([saliency[pid][fx] for _, pid, fx in pruned])
        order = np.lexsort((flat_idx, slot_idx, -score))
    elif criterion == "rewind_magnitude":
        score = np.concatenate([np.abs(ms.graveyard[pid][fx]) for _, pid, fx in pruned])
        order = np.lexsort((flat_idx, slot_idx, -score))
    else:
        if rng is None:
            raise UsageError("random criterion requires an rng")
        order = permutation(n_pruned, rng)
    chosen = order[:k]
    return sorted((pids[int(slot_idx[j])], int(flat_idx[j])) for j in chosen)


def regrow_apply(ms: MaskSet, candidates, init_rule: str, model: Model) -> None:
    """Flip candidate mask bits to 1 and initialize the reborn weights."""
    if init_rule not in INIT_RULES:
        raise InputError(f"init_rule must be one of {INIT_RULES}")
    for pid, idx in candidates:
        if ms.masks[pid][idx] != 0:
            raise UsageError(f"candidate {pid.name}[{idx}] is already active")
        ms.masks[pid][idx] = 1
        w = model.params[pid].data.reshape(-1)
        w[idx] = ms.graveyard[pid][idx] if init_rule == "rewind" else 0.0
        ms.graveyard[pid][idx] = 0.0


@dataclass
class PruneSchedule:
    mode: str = "one-shot"
    s_init: float = 0.0
    s_final: float = 0.99
    steps: int = 1
    interpolation: str = "cubic"
    finetune_epochs_per_step: int = 3
    scope: str = "global"

    def __post_init__(self):
        if self.mode not in ("one-shot", "iterative"):
            raise ConfigError(f"prune mode {self.mode!r} must be one-shot or iterative")
        if not (0.0 <= self.s_init < self.s_final < 1.0):
            raise ConfigError(f"require 0 <= s_init < s_final < 1, got {self.s_init}, {self.s_final}")
        if self.steps < 1:
            raise ConfigError("prune steps must be >= 1")
        if self.mode == "one-shot" and self.steps != 1:
            raise ConfigError("one-shot pruning implies steps == 1")
        if self.interpolation not in INTERPOLATIONS:
            raise ConfigError(f"interpolation must be one of {INTERPOLATIONS}")
        if self.finetune_epochs_per_step < 0:
            raise ConfigError("finetune_epochs_per_step must be >= 0")
        if self.scope not in SCOPES:
            raise ConfigError(f"scope must be one of {SCOPES}")


@dataclass
class RegrowSchedule:
    mode: str = "one-shot"
    s_start: float = 0.99
    s_end: float = 0.95
    steps: int = 1
    criterion: str = "gradient"
    init_rule: str = "zero"
    finetune_epochs_per_step: int = 3
    scoring_batch_size: int = 512

    def __post_init__(self):
        if self.mode not in ("one-shot", "iterative"):
            raise ConfigError(f"regrow mode {self.mode!r} must be one-shot or iterative")
        if not (0.0 <= self.s_end < self.s_start <= 1.0):
            raise ConfigError(f"require s_end < s_start, got {self.s_end}, {self.s_start}")
        if self.steps < 1:
            raise ConfigError("regrow steps must be >= 1")
        if self.mode == "one-shot" and self.steps != 1:
            raise ConfigError("one-shot regrowth implies steps == 1")
        if self.criterion not in CRITERIA:
            raise ConfigError(f"criterion must be one of {CRITERIA}")
        if self.init_rule not in INIT_RULES:
            raise ConfigError(f"init_rule must be one of {INIT_RULES}")
        if self.finetune_epochs_per_step < 0:
            raise ConfigError("finetune_epochs_per_step must be >= 0")
        if self.scoring_batch_size < 1:
            raise ConfigError("scoring_batch_size must be >= 1")


def schedule_sparsity_at(sched: PruneSchedule, t: int) -> float:
    """Target sparsity at prune step t in 1..T; t == T returns s_final exactly."""
    if not (1 <= t <= sched.steps):
        raise UsageError(f"step {t} outside 1..{sched.steps}")
    if t == sched.steps:
        return sched.s_final
    frac = t / sched.steps
    if sched.interpolation == "cubic":
        return sched.s_final + (sched.s_init - sched.s_final) * (1.0 - frac) ** 3
    return sched.s_init + (sched.s_final - sched.s_init) * frac


def regrow_sparsity_at(sched: RegrowSchedule, r: int) -> float:
    """Linear descent from s_start to s_end; r == R returns s_end exactly."""
    if not (1 <= r <= sched.steps):
        raise UsageError(f"step {r} outside 1..{sched.steps}")
    if r == sched.steps:
        return sched.s_end
    return sched.s_start + (sched.s_end - sched.s_start) * (r / sched.steps)
