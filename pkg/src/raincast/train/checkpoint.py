"""NWCK checkpoint container.

Layout (little-endian)::

    b"NWCK"
    uint64 json_length, json_length bytes of UTF-8 JSON metadata
    uint32 section_count
    per section: uint32 name_length, name, uint64 blob_length, NWF1 blob

The JSON block carries ``format_version``; readers refuse other versions.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from ..tensor import TensorFormatError, decode_tensor, encode_tensor

MAGIC = b"NWCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, corrupt or incompatible checkpoint."""


@dataclass
class Checkpoint:
    meta: dict
    tensors: dict = field(default_factory=dict)   # name -> float32 array


def encode_checkpoint(ckpt):
    meta = {**ckpt.meta, "format_version": FORMAT_VERSION}
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<Q", len(blob)), blob, struct.pack("<I", len(ckpt.tensors))]
    for name in sorted(ckpt.tensors):
        key = name.encode("utf-8")
        data = encode_tensor(ckpt.tensors[name])
        parts += [struct.pack("<I", len(key)), key, struct.pack("<Q", len(data)), data]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))[0]


def decode_checkpoint(buf):
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    try:
        meta = json.loads(r.take(r.unpack("<Q", "json length"), "json block").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata block: {exc}") from None
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version!r}; this reader supports {FORMAT_VERSION}")
    tensors = {}
    for _ in range(r.unpack("<I", "section count")):
        name = r.take(r.unpack("<I", "name length"), "section name").decode("utf-8")
        blob = r.take(r.unpack("<Q", f"length of {name}"), f"section {name}")
        try:
            tensors[name] = decode_tensor(blob)
        except TensorFormatError as exc:
            raise CheckpointError(f"corrupt tensor section {name!r}: {exc}") from None
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after last section")
    return Checkpoint(meta, tensors)


def save_checkpoint(path, ckpt):
    data = encode_checkpoint(ckpt)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    try:
        return decode_checkpoint(buf)
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from None


def checkpoint_io(path, mode, checkpoint=None):
    if mode == "read":
        return load_checkpoint(path)
    if mode == "write":
        save_checkpoint(path, checkpoint)
        return None
    raise ValueError(f"mode must be 'read' or 'write', got {mode!r}")


def pack_state(params, opt=None):
    """Tensor sections (copies, so later training cannot alter them) for a ParamSet and Adam moments."""
    tensors = {k: np.array(v, np.float32) for k, v in params.state_arrays().items()}
    if opt is not None:
        tensors.update({f"adam.m/{k}": np.array(v, np.float32) for k, v in opt.m.items()})
        tensors.update({f"adam.v/{k}": np.array(v, np.float32) for k, v in opt.v.items()})
    return tensors


def unpack_state(tensors):
    from ..models import ParamSet

    model = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    m = {k[len("adam.m/"):]: v.copy() for k, v in tensors.items() if k.startswith("adam.m/")}
    v = {k[len("adam.v/"):]: a.copy() for k, a in tensors.items() if k.startswith("adam.v/")}
    return ParamSet.from_state_arrays(model), m, v
