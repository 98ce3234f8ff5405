import copy

import numpy as np
import pytest

from bprg.config import parse_config_dict
from bprg.data import RngState, synth_blobs
from bprg.errors import ConfigError
from bprg.model import build_model
from bprg.sparsity import keep_count
from bprg.tensor import OptimizerState
from bprg.trajectory import (
    derive_streams,
    evaluate_accuracy,
    make_datasets,
    run_bidirectional,
    train_epochs,
)
from test_model import mlp_spec

BASE_DOC = {
    "seed": 11,
    "data": {
        "source": "synth",
        "n_train": 600,
        "n_test": 200,
        "features": 8,
        "classes": 4,
        "spread": 0.15,
    },
    "model": {
        "layers": [
            {"kind": "dense", "in": 8, "out": 24},
            {"kind": "relu"},
            {"kind": "dense", "in": 24, "out": 4},
        ]
    },
    "optimizer": {"lr": 0.1, "momentum": 0.9, "batch_size": 32, "pretrain_epochs": 4},
    "prune": {"mode": "one-shot", "s_final": 0.95, "finetune_epochs_per_step": 1},
    "regrow": {
        "mode": "iterative",
        "s_end": 0.8,
        "steps": 3,
        "criterion": "gradient",
        "finetune_epochs_per_step": 1,
        "scoring_batch_size": 64,
    },
}


def config_with(**overrides):
    doc = copy.deepcopy(BASE_DOC)
    for key, val in overrides.items():
        section, _, field = key.partition("__")
        if field:
            doc[section][field] = val
        else:
            doc[section] = val
    return parse_config_dict(doc)


class TestTrainEpochs:
    def _setup(self):
        m = build_model(mlp_spec(8, 12, 4), RngState(0))
        ds = synth_blobs(200, 8, 4, 0.15, RngState(1))
        return m, ds

    def test_zero_epochs_is_noop(self):
        m, ds = self._setup()
        snap = m.snapshot()
        train_epochs(m, None, ds, 0, OptimizerState(0.1, 0.9), RngState(2), 32)
        for pid in m.param_order():
            assert m.params[pid].data.tobytes() == snap[pid].tobytes()

    def test_determinism(self):
        losses = []
        params = []
        for _ in range(2):
            m, ds = self._setup()
            loss = train_epochs(m, None, ds, 3, OptimizerState(0.1, 0.9), RngState(2), 32)
            losses.append(loss)
            params.append(b"".join(m.params[p].data.tobytes() for p in m.param_order()))
        assert losses[0] == losses[1]
        assert params[0] == params[1]

    def test_learns_separable_blobs(self):
        m = build_model(mlp_spec(16, 32, 4), RngState(3))
        ds = synth_blobs(800, 16, 4, 0.15, RngState(4))
        train_epochs(m, None, ds, 20, OptimizerState(0.1, 0.9), RngState(5), 32)
        assert evaluate_accuracy(m, None, ds) >= 0.95

    def test_empty_dataset_rejected(self):
        m, ds = self._setup()
        empty = ds.subset(np.array([], dtype=np.int64))
        with pytest.raises(ConfigError):
            train_epochs(m, None, empty, 1, OptimizerState(0.1), RngState(0), 8)


class TestEvaluateAccuracy:
    def test_zero_model_predicts_class_zero(self):
        m = build_model(mlp_spec(8, 4), RngState(0))
        for p in m.parameters():
            p.data[:] = 0
        ds = synth_blobs(400, 8, 4, 0.1, RngState(1))
        freq0 = float(np.mean(ds.labels == 0))
        assert evaluate_accuracy(m, None, ds) == freq0

    def test_perfect_logits(self):
        cfg = config_with()
        streams = derive_streams(cfg.seed)
        _, test_ds = make_datasets(cfg, streams["data"])
        m = build_model(mlp_spec(8, 24, 4), streams["init"])
        train_epochs(m, None, test_ds, 25, OptimizerState(0.1, 0.9), RngState(9), 32)
        assert evaluate_accuracy(m, None, test_ds) == 1.0

    def test_purity(self):
        m = build_model(mlp_spec(8, 5, 4), RngState(2))
        ds = synth_blobs(100, 8, 4, 0.2, RngState(3))
        before = m.snapshot()
        a = evaluate_accuracy(m, None, ds)
        b = evaluate_accuracy(m, None, ds)
        assert a == b
        for pid in m.param_order():
            assert m.params[pid].data.tobytes() == before[pid].tobytes()


class TestRunBidirectional:
    def test_record_count_law(self):
        cfg = config_with(prune__mode="iterative", prune__steps=4)
        records, _, _ = run_bidirectional(cfg)
        assert len(records) == 1 + 4 + 3

    def test_three_records_for_one_shot(self):
        cfg = config_with(regrow__mode="one-shot", regrow__steps=1)
        records, _, _ = run_bidirectional(cfg)
        assert len(records) == 3
        assert [r.phase for r in records] == ["pretrain", "prune", "regrow"]

    def test_sparsity_up_then_down(self):
        cfg = config_with()
        records, _, _ = run_bidirectional(cfg)
        sparsities = [r.sparsity for r in records]
        peak = max(sparsities)
        i = sparsities.index(peak)
        assert all(a <= b for a, b in zip(sparsities[: i + 1], sparsities[1 : i + 1]))
        assert all(a > b for a, b in zip(sparsities[i:], sparsities[i + 1 :]))

    def test_baseline_anchor(self):
        cfg = config_with()
        records, model, _ = run_bidirectional(cfg)
        base = records[0]
        assert base.phase == "pretrain"
        assert base.sparsity == 0.0
        assert base.active_params == 24 * 8 + 24 * 4

    def test_records_are_integer_exact(self):
        cfg = config_with()
        records, _, masks = run_bidirectional(cfg)
        n = masks.total()
        for r in records:
            assert r.sparsity == 1 - r.active_params / n

    def test_regrow_accounting(self):
        cfg = config_with(regrow__mode="one-shot", regrow__steps=1, regrow__s_end=0.85)
        records, _, masks = run_bidirectional(cfg)
        n = masks.total()
        prune_rec = records[1]
        regrow_rec = records[2]
        assert regrow_rec.active_params - prune_rec.active_params == keep_count(
            n, 0.85
        ) - keep_count(n, 0.95)

    def test_full_run_determinism(self):
        a, _, _ = run_bidirectional(config_with())
        b, _, _ = run_bidirectional(config_with())
        assert a == b

    def test_seed_changes_trajectory(self):
        a, _, _ = run_bidirectional(config_with(seed=1))
        b, _, _ = run_bidirectional(config_with(seed=2))
        assert a != b

    def test_prune_phase_monotone(self):
        cfg = config_with(prune__mode="iterative", prune__steps=5)
        records, _, _ = run_bidirectional(cfg)
        prune_recs = [r for r in records if r.phase == "prune"]
        assert len(prune_recs) == 5
        assert all(
            a.sparsity <= b.sparsity for a, b in zip(prune_recs, prune_recs[1:])
        )

    def test_regrow_strictly_decreasing(self):
        records, _, _ = run_bidirectional(config_with())
        regrow_recs = [r for r in records if r.phase == "regrow"]
        assert all(
            a.sparsity > b.sparsity for a, b in zip(regrow_recs, regrow_recs[1:])
        )
