import numpy as np
import pytest

from bprg.data import RngState
from bprg.model import LayerSpec, build_model


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


def tiny_mlp(seed=0, dtype=np.float64, dims=(5, 8, 3)):
    spec = []
    for i in range(len(dims) - 1):
        spec.append(LayerSpec.dense(dims[i], dims[i + 1]))
        if i < len(dims) - 2:
            spec.append(LayerSpec.relu())
    return build_model(spec, RngState(seed), dtype=dtype)


@pytest.fixture
def rng():
    return RngState(1234)
