"""Binary model checkpoints and loss-history CSV.

Checkpoint layout, all integers little-endian::

    b"MCCK"  uint32 version  uint16 len + utf-8 variant  uint32 n_tensors
    per tensor: uint16 len + utf-8 name, uint32 ndim, uint32 dims[ndim],
                float64 payload (little-endian, row-major)
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import ParseError
from .model import ClassifierParams, ModelVariant

MAGIC = b"MCCK"
VERSION = 1


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def dumps_checkpoint(params: ClassifierParams) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_str(params.variant.value),
             struct.pack("<I", len(params.tensors))]
    for name in sorted(params.keys()):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        parts += [_pack_str(name), struct.pack("<I", arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ParseError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def loads_checkpoint(data: bytes) -> ClassifierParams:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ParseError("not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    try:
        variant = ModelVariant(r.string())
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    (count,) = r.unpack("<I")
    params = ClassifierParams(variant)
    for _ in range(count):
        name = r.string()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise ParseError("trailing bytes after checkpoint")
    return params


def save_checkpoint(path: str | Path, params: ClassifierParams) -> None:
    Path(path).write_bytes(dumps_checkpoint(params))


def load_checkpoint(path: str | Path) -> ClassifierParams:
    return loads_checkpoint(Path(path).read_bytes())


def loss_history_csv(history: Sequence[float]) -> str:
    return "epoch,loss\n" + "".join(f"{i},{loss!r}\n" for i, loss in enumerate(history))
