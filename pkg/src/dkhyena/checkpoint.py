"""Flat binary checkpoints, bit-exact round trip.

Layout (all integers little-endian):

    magic   4 bytes  "DKHY"
    version u32      currently 1
    config  u32 length + UTF-8 canonical key=value text
    records, sorted by name, each:
        name    u32 length + UTF-8 bytes
        rank    u32
        extents rank * u64
        payload prod(extents) * f64, row-major

The record set must match the config's parameter manifest exactly.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .configio import model_config_from_text, model_config_text
from .errors import CheckpointFormatError, CheckpointVersionError
from .model import Model, ModelParams, param_shapes

MAGIC = b"DKHY"
VERSION = 1


def save_checkpoint(path, model: Model) -> None:
    """Write atomically (temp file + rename)."""
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    cfg_bytes = model_config_text(model.config).encode("utf-8")
    buf += struct.pack("<I", len(cfg_bytes))
    buf += cfg_bytes
    for name, tensor in sorted(model.params.named_parameters()):
        name_bytes = name.encode("utf-8")
        buf += struct.pack("<I", len(name_bytes))
        buf += name_bytes
        buf += struct.pack("<I", tensor.ndim)
        for extent in tensor.shape:
            buf += struct.pack("<Q", extent)
        buf += np.ascontiguousarray(tensor.data, dtype="<f8").tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointFormatError("truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    @property
    def exhausted(self) -> bool:
        return self.pos == len(self.blob)


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(4) != MAGIC:
        raise CheckpointFormatError("bad magic; not a DKHY checkpoint")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version} unsupported (expected {VERSION})")
    config = model_config_from_text(reader.take(reader.u32()).decode("utf-8"))
    arrays: dict[str, np.ndarray] = {}
    while not reader.exhausted:
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        shape = tuple(reader.u64() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        payload = reader.take(count * 8)
        arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    expected = dict(param_shapes(config))
    if set(arrays) != set(expected):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise CheckpointFormatError(
            f"parameter set mismatch: missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise CheckpointFormatError(
                f"{name}: shape {arrays[name].shape} != expected {shape}")
    params = ModelParams.from_arrays(config, arrays)
    model = Model(config, params)
    model.validate_params()
    return model
