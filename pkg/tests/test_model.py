import math

import numpy as np
import pytest

from bprg import tensor as T
from bprg.data import RngState
from bprg.errors import ConfigError, DimensionError
from bprg.model import LayerSpec, ParamId, build_model, forward, prunable_slots, prunable_total


def mlp_spec(*dims):
    spec = []
    for i in range(len(dims) - 1):
        spec.append(LayerSpec.dense(dims[i], dims[i + 1]))
        if i < len(dims) - 2:
            spec.append(LayerSpec.relu())
    return spec


class TestBuildModel:
    def test_he_uniform_bound(self):
        m = build_model([LayerSpec.dense(4, 2)], RngState(0))
        w = m.params[ParamId(0, "weight")].data
        bound = math.sqrt(6.0 / 4)
        assert w.size == 8
        assert np.all(np.abs(w) <= bound)
        assert np.all(m.params[ParamId(0, "bias")].data == 0)

    def test_same_seed_bit_identical(self):
        a = build_model(mlp_spec(4, 8, 3), RngState(99))
        b = build_model(mlp_spec(4, 8, 3), RngState(99))
        for pid in a.param_order():
            assert a.params[pid].data.tobytes() == b.params[pid].data.tobytes()

    def test_different_seeds_differ(self):
        a = build_model(mlp_spec(4, 8, 3), RngState(1))
        b = build_model(mlp_spec(4, 8, 3), RngState(2))
        assert any(
            not np.array_equal(a.params[pid].data, b.params[pid].data)
            for pid in a.param_order()
        )

    def test_non_composing_spec(self):
        with pytest.raises(ConfigError):
            build_model([LayerSpec.dense(4, 2), LayerSpec.dense(3, 5)], RngState(0))

    def test_conv_requires_input_shape(self):
        with pytest.raises(ConfigError):
            build_model([LayerSpec.conv3x3(1, 2)], RngState(0))

    def test_conv_model_builds(self):
        spec = [
            LayerSpec.conv3x3(1, 4),
            LayerSpec.relu(),
            LayerSpec.flatten(),
            LayerSpec.dense(4 * 3 * 3, 2),
        ]
        m = build_model(spec, RngState(0), input_shape=(1, 5, 5))
        x = T.Tensor(np.random.default_rng(0).random((2, 1, 5, 5)).astype(np.float32))
        assert forward(m, x).shape == (2, 2)


class TestForward:
    def test_zero_weights_uniform_logits(self):
        m = build_model([LayerSpec.dense(3, 4)], RngState(0))
        m.params[ParamId(0, "weight")].data[:] = 0
        out = forward(m, T.Tensor(np.ones((2, 3), dtype=np.float32)))
        assert np.all(out.data == 0)

    def test_identity_weights(self):
        m = build_model([LayerSpec.dense(2, 2)], RngState(0))
        m.params[ParamId(0, "weight")].data[:] = np.eye(2, dtype=np.float32)
        out = forward(m, T.Tensor([[1.0, 2.0]]))
        assert out.data.tolist() == [[1.0, 2.0]]

    def test_batch_shape_contract(self):
        m = build_model(mlp_spec(6, 5, 4), RngState(3))
        out = forward(m, T.Tensor(np.zeros((7, 6), dtype=np.float32)))
        assert out.shape == (7, 4)

    def test_shape_mismatch(self):
        m = build_model([LayerSpec.dense(3, 2)], RngState(0))
        with pytest.raises(DimensionError):
            forward(m, T.Tensor(np.zeros((2, 4), dtype=np.float32)))

    def test_forward_is_pure(self):
        m = build_model(mlp_spec(4, 6, 2), RngState(5))
        x = T.Tensor(np.random.default_rng(1).random((3, 4)).astype(np.float32))
        assert forward(m, x).data.tobytes() == forward(m, x).data.tobytes()


class TestPrunableSlots:
    def test_counting(self):
        m = build_model([LayerSpec.dense(4, 2), LayerSpec.dense(2, 3)], RngState(0))
        slots = prunable_slots(m)
        assert slots == [(ParamId(0, "weight"), 8), (ParamId(1, "weight"), 6)]
        assert prunable_total(m) == 14

    def test_no_params(self):
        m = build_model([LayerSpec.relu(), LayerSpec.flatten()], RngState(0))
        assert prunable_slots(m) == []

    def test_mnist_mlp_total(self):
        m = build_model(mlp_spec(784, 128, 10), RngState(0))
        assert prunable_total(m) == 784 * 128 + 128 * 10 == 101632

    def test_enumeration_stable(self):
        a = build_model(mlp_spec(784, 128, 10), RngState(0))
        b = build_model(mlp_spec(784, 128, 10), RngState(7))
        assert [pid for pid, _ in prunable_slots(a)] == [pid for pid, _ in prunable_slots(b)]

    def test_totals_add_up(self):
        m = build_model(mlp_spec(20, 12, 5), RngState(0))
        bias_total = sum(
            m.params[pid].data.size for pid in m.param_order() if pid.role == "bias"
        )
        all_total = sum(p.data.size for p in m.parameters())
        assert prunable_total(m) + bias_total == all_total
