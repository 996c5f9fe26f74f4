"""STCK checkpoints: named float64 tensors in a little-endian binary container.

Layout::

    b"STCK"  u16 version=1  u32 record_count
    repeated: u32 name_len, name (utf-8), u32 ndim, ndim * u32 dims,
              prod(dims) * f64 payload
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .errors import CheckpointError, DataFormatError, DataLengthError

STCK_MAGIC = b"STCK"
STCK_VERSION = 1

PathLike = Union[str, Path]


def encode_records(records) -> bytes:
    parts = [STCK_MAGIC, struct.pack("<HI", STCK_VERSION, len(records))]
    for name, arr in records:
        raw_name = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def decode_records(raw: bytes) -> list:
    if len(raw) < 10:
        raise DataLengthError(f"checkpoint has {len(raw)} bytes, shorter than its header")
    if raw[:4] != STCK_MAGIC:
        raise DataFormatError(f"bad checkpoint magic {raw[:4]!r}, expected {STCK_MAGIC!r}")
    version, count = struct.unpack_from("<HI", raw, 4)
    if version != STCK_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}")
    pos = 10
    records = []

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise DataLengthError(f"checkpoint truncated while reading {what}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    for i in range(count):
        (name_len,) = struct.unpack("<I", take(4, f"record {i} name length"))
        name = take(name_len, f"record {i} name").decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4, f"record {name!r} rank"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, f"record {name!r} shape"))
        size = int(np.prod(shape)) if ndim else 1
        payload = take(8 * size, f"record {name!r} payload")
        records.append((name, np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)))
    if pos != len(raw):
        raise DataLengthError(f"checkpoint has {len(raw) - pos} trailing bytes after {count} records")
    return records


def save_checkpoint(model, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_records([(name, t.data) for name, t in model.named_parameters()]))
    return path


def read_checkpoint(path: PathLike) -> list:
    return decode_records(Path(path).read_bytes())


def load_checkpoint(path: PathLike, model, strict: bool = False):
    """Copy every record into the matching tensor of ``model``.

    A record the model does not have, or one with the wrong shape, is an
    error.  Tensors without a record keep their current values unless
    ``strict`` is set, in which case they are an error too.
    """
    targets = dict(model.named_parameters())
    records = read_checkpoint(path)
    if strict:
        missing = sorted(set(targets) - {name for name, _ in records})
        if missing:
            raise CheckpointError(f"checkpoint lacks {len(missing)} model tensors, first {missing[0]!r}")
    for name, arr in records:
        if name not in targets:
            raise CheckpointError(f"checkpoint record {name!r} has no counterpart in the model")
        if targets[name].shape != arr.shape:
            raise CheckpointError(
                f"checkpoint record {name!r} has shape {arr.shape}, model expects {targets[name].shape}")
    for name, arr in records:
        targets[name].assign(arr)
    return model
