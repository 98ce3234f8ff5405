"""Dense tensors with tape-based reverse-mode autodiff and SGD.

Everything is numpy-backed, single-threaded by contract, float32 by default
with a float64 mode for gradient checking (central differences at h=1e-5 are
too noisy in float32).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, InputError, NumericError, UsageError


class Tensor:
    """n-d array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        # allocated up front so a tensor untouched by backward reads as zero grad
        self.grad = np.zeros_like(arr) if requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0)

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


@dataclass
class TapeNode:
    output: Tensor
    backward_fn: Callable[[np.ndarray], None]


@dataclass
class Tape:
    """Op records in execution (hence topological) order."""

    nodes: list = field(default_factory=list)

    _active: "Optional[Tape]" = None

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise UsageError("nested tapes are not supported")
        Tape._active = self
        return self

    def __exit__(self, *exc):
        Tape._active = None
        return False


def _record(out: Tensor, inputs, backward_fn):
    tape = Tape._active
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(TapeNode(out, backward_fn))


def _finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op} produced non-finite values")
    return arr


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} x {b.shape} do not compose")
    out = Tensor(_finite(a.data @ b.data, "matmul"))

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    _record(out, (a, b), backward)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * (x.data > 0))

    _record(out, (x,), backward)
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Bias add: (n, d)+(d,) or (n, c, h, w)+(c,). The only broadcast we support."""
    if x.data.ndim == 2 and b.shape == (x.shape[1],):
        out_data = x.data + b.data
        axes = (0,)
        bias_view = b.data
    elif x.data.ndim == 4 and b.shape == (x.shape[1],):
        bias_view = b.data[None, :, None, None]
        out_data = x.data + bias_view
        axes = (0, 2, 3)
    else:
        raise DimensionError(f"add_bias shapes {x.shape} + {b.shape} do not compose")
    out = Tensor(_finite(out_data, "add_bias"))

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=axes))

    _record(out, (x, b), backward)
    return out


def conv2d(x: Tensor, kernel: Tensor) -> Tensor:
    """Valid 3x3 cross-correlation, stride 1: (b,ci,h,w) * (co,ci,3,3) -> (b,co,h-2,w-2)."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise DimensionError("conv2d expects 4-d input and kernel")
    bsz, c_in, h, w = x.shape
    c_out, kc, kh, kw = kernel.shape
    if (kh, kw) != (3, 3) or kc != c_in:
        raise DimensionError(f"conv2d kernel {kernel.shape} does not match input {x.shape}")
    if h < 3 or w < 3:
        raise DimensionError(f"conv2d spatial dims {h}x{w} too small for 3x3")
    oh, ow = h - 2, w - 2
    out_data = np.zeros((bsz, c_out, oh, ow), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            window = x.data[:, :, di : di + oh, dj : dj + ow]
            out_data += np.einsum("bchw,oc->bohw", window, kernel.data[:, :, di, dj])
    out = Tensor(_finite(out_data, "conv2d"))

    def backward(g):
        if kernel.requires_grad:
            dk = np.zeros_like(kernel.data)
            for di in range(3):
                for dj in range(3):
                    window = x.data[:, :, di : di + oh, dj : dj + ow]
                    dk[:, :, di, dj] = np.einsum("bohw,bchw->oc", g, window)
            kernel.accumulate_grad(dk)
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            for di in range(3):
                for dj in range(3):
                    dx[:, :, di : di + oh, dj : dj + ow] += np.einsum(
                        "bohw,oc->bchw", g, kernel.data[:, :, di, dj]
                    )
            x.accumulate_grad(dx)

    _record(out, (x, kernel), backward)
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(x.shape))

    _record(out, (x,), backward)
    return out


def tensor_sum(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(dtype=x.dtype)))

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, g))

    _record(out, (x,), backward)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add shapes {a.shape} != {b.shape}")
    out = Tensor(_finite(a.data + b.data, "add"))

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    _record(out, (a, b), backward)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction stabilization."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy_mean(logits: Tensor, labels: np.ndarray) -> Tensor:
    if logits.data.ndim != 2:
        raise DimensionError("logits must be 2-d (batch, classes)")
    bsz, classes = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (bsz,):
        raise InputError(f"labels shape {labels.shape} does not match batch {bsz}")
    if bsz < 1:
        raise InputError("batch must be non-empty")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise InputError("label out of range")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    nll = log_z - shifted[np.arange(bsz), labels]
    out = Tensor(np.asarray(nll.mean(dtype=logits.dtype)))
    _finite(out.data, "softmax_cross_entropy_mean")

    def backward(g):
        if logits.requires_grad:
            probs = softmax(logits.data)
            probs[np.arange(bsz), labels] -= 1
            logits.accumulate_grad(g * probs / logits.dtype.type(bsz))

    _record(out, (logits,), backward)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate grads of every requires_grad tensor reachable from loss."""
    if loss.data.size != 1:
        raise UsageError("backward requires a scalar loss")
    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(tape.nodes):
        if node.output.grad is not None:
            node.backward_fn(node.output.grad)


@dataclass
class OptimizerState:
    """SGD-with-momentum state; velocity buffers align with the parameter list."""

    learning_rate: float
    momentum: float = 0.0
    velocity: list = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be positive")
        if not (0 <= self.momentum < 1):
            raise InputError("momentum must be in [0, 1)")

    def ensure_velocity(self, params):
        if not self.velocity:
            self.velocity = [np.zeros_like(p.data) for p in params]
        elif len(self.velocity) != len(params):
            raise UsageError("velocity buffers do not match parameter list")


def sgd_momentum_step(params, state: OptimizerState) -> None:
    """v <- momentum*v + g; w <- w - lr*v, in the given (deterministic) order."""
    params = list(params)
    state.ensure_velocity(params)
    for p, v in zip(params, state.velocity):
        if p.grad is None:
            raise UsageError("parameter has no gradient; run backward first")
        v *= state.momentum
        v += p.grad
        p.data -= p.data.dtype.type(state.learning_rate) * v.astype(p.data.dtype)


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate, in float64."""
    if h <= 0:
        raise InputError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
