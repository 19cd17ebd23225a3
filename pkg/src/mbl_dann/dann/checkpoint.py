"""Binary checkpoints.

Layout (little endian)::

    b"DANN" | u16 version | u32 descriptor_len | descriptor (UTF-8 JSON)
    | u32 crc32(descriptor) | parameter blob | running statistics | u32 crc32(blobs)

The descriptor records the architecture, the training config, and the name,
shape and order of every stored array. Arrays are stored in the model's
dtype (``<f4`` by default), so the round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import (
    CorruptHeaderError,
    CountMismatchError,
    FormatError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .model import Architecture, DannModel

MAGIC = b"DANN"
VERSION = 1

_PREFIX = struct.Struct("<4sHI")
_CRC = struct.Struct("<I")


def save_checkpoint(path, model: DannModel, config=None):
    dtype = model.dtype.newbyteorder("<")
    params = [(name, layer.params[key]) for name, layer, key in model.named_params()]
    buffers = [(name, layer.buffers[key]) for name, layer, key in model.named_buffers()]
    descriptor = {
        "architecture": model.arch.to_dict(),
        "lam": model.lam,
        "rng_seed": model.rng_seed,
        "with_adversary": model.adversary is not None,
        "config": None if config is None else config.to_dict(),
        "params": [[name, list(a.shape)] for name, a in params],
        "buffers": [[name, list(a.shape)] for name, a in buffers],
    }
    header = json.dumps(descriptor, sort_keys=True).encode()
    blob = b"".join(np.ascontiguousarray(a, dtype=dtype).tobytes() for _, a in params + buffers)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        fh.write(_CRC.pack(zlib.crc32(header)))
        fh.write(blob)
        fh.write(_CRC.pack(zlib.crc32(blob)))


def load_checkpoint(path):
    """Returns ``(model, config_dict_or_None)``."""
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CorruptHeaderError(f"{path}: file too short for a checkpoint header")
    magic, version, n = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CorruptHeaderError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {version}, expected {VERSION}")
    end = _PREFIX.size + n
    if len(data) < end + _CRC.size:
        raise CorruptHeaderError(f"{path}: descriptor is cut short")
    header = data[_PREFIX.size:end]
    if _CRC.unpack_from(data, end)[0] != zlib.crc32(header):
        raise CorruptHeaderError(f"{path}: descriptor checksum mismatch")
    try:
        desc = json.loads(header)
        arch = Architecture(**desc["architecture"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptHeaderError(f"{path}: unreadable descriptor ({exc})") from exc

    model = DannModel(arch, lam=desc["lam"], rng_seed=desc["rng_seed"],
                      with_adversary=desc["with_adversary"])
    dtype = model.dtype.newbyteorder("<")
    entries = desc["params"] + desc["buffers"]
    sizes = [int(np.prod(shape)) * dtype.itemsize for _, shape in entries]
    offset = end + _CRC.size
    blob_len = sum(sizes)
    if len(data) < offset + blob_len + _CRC.size:
        raise TruncatedPayloadError(f"{path}: parameter blob is cut short")
    if len(data) > offset + blob_len + _CRC.size:
        raise CountMismatchError(f"{path}: trailing bytes after the parameter blob")
    blob = data[offset:offset + blob_len]
    if _CRC.unpack_from(data, offset + blob_len)[0] != zlib.crc32(blob):
        raise FormatError(f"{path}: parameter blob checksum mismatch")

    expected = {name for name, _, _ in model.named_params()} | {
        name for name, _, _ in model.named_buffers()
    }
    if expected != {name for name, _ in entries}:
        raise CorruptHeaderError(f"{path}: stored arrays do not match the architecture")
    state, pos = {}, 0
    for (name, shape), size in zip(entries, sizes):
        state[name] = np.frombuffer(blob, dtype=dtype, count=size // dtype.itemsize,
                                    offset=pos).reshape(shape).astype(model.dtype)
        pos += size
    model.load_state_dict(state)
    return model, desc["config"]
