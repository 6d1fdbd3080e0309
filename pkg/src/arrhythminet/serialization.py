"""Binary model files.

Layout::

    b"ANET1" | version (u8) | header length (u32 LE) | header JSON (UTF-8)
    | float32 LE weight blob, tensors in declaration order

The header JSON carries the model spec, its SHA-256 hash, the variant,
the channel plan and the name/shape of every stored tensor.
"""

import json
import os
import struct

import numpy as np

from .exceptions import (
    BadMagicError,
    DataError,
    SpecHashMismatchError,
    TruncatedModelFileError,
    VersionMismatchError,
)
from .models import ArrhythmiNet, ModelSpec

MAGIC = b"ANET1"
VERSION = 1
_PREFIX = struct.Struct("<5sBI")


def _header(model):
    spec = model.spec
    return {
        "variant": spec.variant,
        "channel_plan": spec.channel_plan,
        "spec": spec.to_dict(),
        "spec_hash": spec.spec_hash,
        "tensors": [[name, list(arr.shape)] for name, arr in model.state()],
    }


def to_bytes(model):
    header = json.dumps(_header(model), sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, arr in model.state())
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + blob


def serialize(model, path):
    """Write ``model`` to ``path`` and return the file size in bytes."""
    data = to_bytes(model)
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


def from_bytes(data, expected_spec_hash=None):
    if len(data) < _PREFIX.size:
        if data[: len(MAGIC)] != MAGIC[: len(data)]:
            raise BadMagicError("not an ArrhythmiNet model file (bad magic)")
        raise TruncatedModelFileError(f"file is {len(data)} bytes, shorter than the fixed prefix")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"not an ArrhythmiNet model file (magic {magic!r}, expected {MAGIC!r})")
    if version != VERSION:
        raise VersionMismatchError(f"model file version {version}, this reader supports {VERSION}")
    start = _PREFIX.size
    if len(data) < start + header_len:
        raise TruncatedModelFileError("file truncated inside the header block")
    try:
        header = json.loads(data[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"model header is not valid JSON: {exc}") from exc

    spec = ModelSpec.from_dict(header["spec"])
    if spec.spec_hash != header["spec_hash"]:
        raise SpecHashMismatchError(
            f"stored spec hash {header['spec_hash'][:12]} does not match spec contents {spec.spec_hash[:12]}"
        )
    if expected_spec_hash is not None and expected_spec_hash != spec.spec_hash:
        raise SpecHashMismatchError(
            f"model spec hash {spec.spec_hash[:12]} does not match expected {expected_spec_hash[:12]}"
        )

    model = ArrhythmiNet(spec, seed=0, dtype=np.float32)
    state = model.state()
    stored = header["tensors"]
    if [n for n, _ in stored] != [n for n, _ in state]:
        raise SpecHashMismatchError("tensor layout in file does not match the layout its spec builds")
    offset = start + header_len
    n_floats = sum(int(np.prod(shape)) for _, shape in stored)
    if len(data) < offset + 4 * n_floats:
        raise TruncatedModelFileError(
            f"weight blob truncated: need {4 * n_floats} bytes, have {len(data) - offset}"
        )
    if len(data) > offset + 4 * n_floats:
        raise DataError("trailing bytes after weight blob")
    for (name, shape), (_, target) in zip(stored, state):
        count = int(np.prod(shape))
        values = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        target[...] = values.reshape(shape)
        offset += 4 * count
    return model


def deserialize(path, expected_spec_hash=None):
    with open(path, "rb") as f:
        data = f.read()
    return from_bytes(data, expected_spec_hash)


def size_report(model, path=None):
    """Serialized size, broken into header and weight bytes (KB = 1024 bytes)."""
    data = to_bytes(model)
    total = os.path.getsize(path) if path is not None else len(data)
    header_len = _PREFIX.unpack_from(data)[2] + _PREFIX.size
    return {
        "bytes": total,
        "kb": total / 1024,
        "header_bytes": header_len,
        "weight_bytes": len(data) - header_len,
        "stored_floats": (len(data) - header_len) // 4,
    }
