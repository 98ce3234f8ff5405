"""Binary checkpoints: model parameters, packed masks, graveyard, config fingerprint.

Layout, little-endian throughout:
  magic "BPRG" | version u32=1 | param_count u32
  per parameter (enumeration order): name_len u16, name UTF-8, ndim u8,
    dims u32 x ndim, values f32 x n
  per prunable slot (enumeration order): mask bits packed LSB-first,
    ceil(n/8) bytes; graveyard_flag u8; if 1, f32 x n graveyard values
    (0 at active positions)
  fingerprint: fp_len u32, canonical config JSON UTF-8 (carries the model
    architecture, so a checkpoint alone can be reloaded)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .data import RngState
from .errors import ConfigError, FormatError
from .model import Model, ParamId, build_model, prunable_slots
from .sparsity import MaskSet
from .trajectory import ExperimentConfig

MAGIC = b"BPRG"
VERSION = 1


@dataclass
class Checkpoint:
    model: Model
    masks: MaskSet
    config: ExperimentConfig


def pack_bits(bits: np.ndarray) -> bytes:
    """LSB-first bit packing, 8 per byte."""
    return np.packbits(bits.astype(np.uint8), bitorder="little").tobytes()


def unpack_bits(buf: bytes, n: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")
    return bits[:n].astype(np.uint8)


def save_checkpoint(path: str, model: Model, ms: MaskSet, config_json: str) -> None:
    slots = prunable_slots(model)
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    order = model.param_order()
    out += struct.pack("<I", len(order))
    for pid in order:
        p = model.params[pid]
        name = pid.name.encode("utf-8")
        out += struct.pack("<H", len(name))
        out += name
        out += struct.pack("<B", p.data.ndim)
        for d in p.data.shape:
            out += struct.pack("<I", d)
        out += np.ascontiguousarray(p.data, dtype="<f4").tobytes()
    for pid, n in slots:
        out += pack_bits(ms.masks[pid])
        has_grave = bool(np.any(ms.masks[pid] == 0))
        out += struct.pack("<B", 1 if has_grave else 0)
        if has_grave:
            out += np.ascontiguousarray(ms.graveyard[pid], dtype="<f4").tobytes()
    fp = config_json.encode("utf-8")
    out += struct.pack("<I", len(fp))
    out += fp
    with open(path, "wb") as f:
        f.write(bytes(out))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("truncated checkpoint file")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: str) -> Checkpoint:
    from .config import parse_config_dict  # local import to avoid a cycle

    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise FormatError(f"bad checkpoint magic in {path}")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    param_count = r.u32()
    raw_params = []
    for _ in range(param_count):
        name = r.take(r.u16()).decode("utf-8")
        ndim = r.u8()
        dims = tuple(r.u32() for _ in range(ndim))
        n = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims)
        raw_params.append((name, values))
    # masks/graveyard follow, but their slot sizes come from the parameters
    weight_sizes = [(name, v.size) for name, v in raw_params if name.endswith(".weight")]
    masks = {}
    grave = {}
    for name, n in weight_sizes:
        pid = ParamId.parse(name)
        masks[pid] = unpack_bits(r.take((n + 7) // 8), n)
        if r.u8():
            grave[pid] = np.frombuffer(r.take(4 * n), dtype="<f4").copy()
        else:
            grave[pid] = np.zeros(n, dtype=np.float32)
    fp = r.take(r.u32()).decode("utf-8")
    if r.pos != len(buf):
        raise FormatError("trailing bytes after checkpoint fingerprint")
    try:
        cfg = parse_config_dict(json.loads(fp))
    except (json.JSONDecodeError, ValueError, ConfigError) as e:
        raise FormatError(f"invalid checkpoint fingerprint: {e}") from None
    model = build_model(cfg.layers, RngState(0), input_shape=cfg.input_shape)
    by_name = {pid.name: pid for pid in model.param_order()}
    if sorted(by_name) != sorted(name for name, _ in raw_params):
        raise FormatError("checkpoint parameters do not match fingerprint architecture")
    for name, values in raw_params:
        p = model.params[by_name[name]]
        if p.data.shape != values.shape:
            raise FormatError(f"parameter {name} shape mismatch")
        np.copyto(p.data, values)
    return Checkpoint(model, MaskSet(masks, grave), cfg)
