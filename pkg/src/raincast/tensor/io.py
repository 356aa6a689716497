"""NWF1 single-tensor file format.

Layout: ``b"NWF1"``, one UTF-8 header line ``dtype=f32;shape=d0,d1,...;\\n``,
then the raw little-endian float32 payload in row-major order.
"""
import io
import os

import numpy as np

from .core import Tensor

MAGIC = b"NWF1"


class TensorFormatError(ValueError):
    """Raised for malformed or truncated tensor files."""


def encode_tensor(x):
    arr = np.asarray(x.data if isinstance(x, Tensor) else x)
    header = f"dtype=f32;shape={','.join(str(int(d)) for d in arr.shape)};\n"
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return MAGIC + header.encode("utf-8") + payload


def decode_tensor(buf):
    stream = io.BytesIO(buf)
    arr = _read_stream(stream, len(buf))
    if stream.tell() != len(buf):
        raise TensorFormatError(f"trailing bytes after payload: {len(buf) - stream.tell()}")
    return arr


def _parse_header(line):
    fields = dict(part.split("=", 1) for part in line.strip().split(";") if part)
    if fields.get("dtype") != "f32":
        raise TensorFormatError(f"unsupported dtype {fields.get('dtype')!r}")
    shape_text = fields.get("shape")
    if shape_text is None:
        raise TensorFormatError("header has no shape field")
    shape = tuple(int(d) for d in shape_text.split(",")) if shape_text else ()
    if any(d < 0 for d in shape):
        raise TensorFormatError(f"negative extent in shape {shape}")
    return shape


def _read_stream(stream, total=None):
    magic = stream.read(4)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    line = stream.readline()
    if not line.endswith(b"\n"):
        raise TensorFormatError("truncated header")
    try:
        shape = _parse_header(line.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, TensorFormatError):
            raise
        raise TensorFormatError(f"unparseable header {line!r}") from exc
    expected = int(np.prod(shape, dtype=np.int64)) * 4
    payload = stream.read(expected)
    if len(payload) != expected:
        raise TensorFormatError(
            f"payload truncated: header shape {shape} needs {expected} bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)


def write_tensor(path, x):
    """Write atomically (temp file + rename)."""
    data = encode_tensor(x)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_tensor(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    try:
        return decode_tensor(buf)
    except TensorFormatError as exc:
        raise TensorFormatError(f"{path}: {exc}") from None


def tensor_io(path, mode, tensor=None):
    if mode == "read":
        return Tensor(read_tensor(path))
    if mode == "write":
        write_tensor(path, tensor)
        return None
    raise ValueError(f"mode must be 'read' or 'write', got {mode!r}")
