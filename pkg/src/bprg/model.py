"""Small MLP/CNN models with named, deterministically ordered parameters."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .data import RngState
from .errors import ConfigError, DimensionError

KINDS = ("dense", "conv3x3", "flatten", "relu")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    args: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        want = {"dense": 2, "conv3x3": 2, "flatten": 0, "relu": 0}[self.kind]
        if len(self.args) != want:
            raise ConfigError(f"{self.kind} expects {want} args, got {len(self.args)}")
        if any(a < 1 for a in self.args):
            raise ConfigError(f"{self.kind} args must be positive")

    @staticmethod
    def dense(n_in: int, n_out: int) -> "LayerSpec":
        return LayerSpec("dense", (n_in, n_out))

    @staticmethod
    def conv3x3(c_in: int, c_out: int) -> "LayerSpec":
        return LayerSpec("conv3x3", (c_in, c_out))

    @staticmethod
    def flatten() -> "LayerSpec":
        return LayerSpec("flatten")

    @staticmethod
    def relu() -> "LayerSpec":
        return LayerSpec("relu")


@dataclass(frozen=True, order=True)
class ParamId:
    layer_index: int
    role: str  # "weight" sorts after "bias"; enumeration order is explicit below

    @property
    def name(self) -> str:
        return f"L{self.layer_index}.{self.role}"

    @staticmethod
    def parse(name: str) -> "ParamId":
        layer, role = name.split(".")
        return ParamId(int(layer[1:]), role)


@dataclass
class Model:
    spec: list
    params: dict
    dtype: type = np.float32
    input_shape: Optional[tuple] = None

    def param_order(self):
        """Stable enumeration: layer index ascending, weight before bias."""
        out = []
        for i, layer in enumerate(self.spec):
            if layer.kind in ("dense", "conv3x3"):
                out.append(ParamId(i, "weight"))
                out.append(ParamId(i, "bias"))
        return out

    def parameters(self):
        return [self.params[pid] for pid in self.param_order()]

    def zero_grads(self):
        for p in self.parameters():
            p.zero_grad()

    def snapshot(self):
        return {pid: self.params[pid].data.copy() for pid in self.param_order()}

    def restore(self, snap):
        for pid, arr in snap.items():
            np.copyto(self.params[pid].data, arr)


def _param_shapes(layer: LayerSpec):
    if layer.kind == "dense":
        n_in, n_out = layer.args
        return (n_in, n_out), (n_out,), n_in
    c_in, c_out = layer.args
    return (c_out, c_in, 3, 3), (c_out,), c_in * 9


def _validate_spec(spec, input_shape):
    """Thread shapes through the layers; conv models need an explicit input shape."""
    has_conv = any(l.kind == "conv3x3" for l in spec)
    if has_conv and input_shape is None:
        raise ConfigError("models with conv layers require input_shape (c, h, w)")
    shape = tuple(input_shape) if input_shape else None
    if shape is None:
        # dense-only: infer the flat feature count from the first dense layer
        first = next((l for l in spec if l.kind == "dense"), None)
        if first is None:
            return
        shape = (first.args[0],)
    for i, layer in enumerate(spec):
        if layer.kind == "dense":
            if len(shape) != 1 or shape[0] != layer.args[0]:
                raise ConfigError(f"layer {i}: dense expects flat {layer.args[0]}, has {shape}")
            shape = (layer.args[1],)
        elif layer.kind == "conv3x3":
            if len(shape) != 3 or shape[0] != layer.args[0]:
                raise ConfigError(f"layer {i}: conv3x3 expects {layer.args[0]} channels, has {shape}")
            c, h, w = shape
            if h < 3 or w < 3:
                raise ConfigError(f"layer {i}: spatial dims {h}x{w} too small for 3x3")
            shape = (layer.args[1], h - 2, w - 2)
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)


def build_model(spec, rng: RngState, dtype=np.float32, input_shape=None) -> Model:
    """He-uniform weights drawn from rng in enumeration order; biases zero."""
    spec = list(spec)
    _validate_spec(spec, input_shape)
    params = {}
    for i, layer in enumerate(spec):
        if layer.kind not in ("dense", "conv3x3"):
            continue
        w_shape, b_shape, fan_in = _param_shapes(layer)
        bound = math.sqrt(6.0 / fan_in)
        n = int(np.prod(w_shape))
        u = rng.next_block_float(n)
        w = ((2.0 * u - 1.0) * bound).astype(dtype).reshape(w_shape)
        params[ParamId(i, "weight")] = T.Tensor(w, requires_grad=True, dtype=dtype)
        params[ParamId(i, "bias")] = T.Tensor(
            np.zeros(b_shape, dtype=dtype), requires_grad=True, dtype=dtype
        )
    return Model(spec, params, dtype=dtype, input_shape=tuple(input_shape) if input_shape else None)


def forward(model: Model, batch: T.Tensor) -> T.Tensor:
    """Apply layers in order; records onto the active tape when one is open."""
    x = batch
    for i, layer in enumerate(model.spec):
        if layer.kind == "dense":
            if x.data.ndim != 2 or x.shape[1] != layer.args[0]:
                raise DimensionError(f"layer {i}: dense({layer.args[0]}) got batch {x.shape}")
            x = T.matmul(x, model.params[ParamId(i, "weight")])
            x = T.add_bias(x, model.params[ParamId(i, "bias")])
        elif layer.kind == "conv3x3":
            x = T.conv2d(x, model.params[ParamId(i, "weight")])
            x = T.add_bias(x, model.params[ParamId(i, "bias")])
        elif layer.kind == "flatten":
            x = T.reshape(x, (x.shape[0], -1))
        else:
            x = T.relu(x)
    return x


def prunable_slots(model: Model):
    """Weight-role parameters only, in enumeration order; biases are never pruned."""
    return [
        (pid, int(model.params[pid].data.size))
        for pid in model.param_order()
        if pid.role == "weight"
    ]


def prunable_total(model: Model) -> int:
    return sum(n for _, n in prunable_slots(model))
