"""Binary checkpoint of model parameters and the feature buffer.

Layout (all integers uint32, all reals float64, little-endian)::

    magic        8 bytes  b"IMLPCKPT"
    version      uint32   (1)
    header_len   uint32
    header       JSON, utf-8: {"config": {...}, "params": [names], "optimizer_step": n}
    per param    rows, cols, rows*cols values in row-major order
                 (bias vectors are stored as 1 x n)
    buffer       capacity, dim, fill, capacity*dim values; the first
                 ``fill`` rows are the entries oldest first, the rest zero
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .buffer import FeatureBuffer
from .errors import SchemaError
from .model import ImlpConfig, ImlpParams, PARAM_NAMES

MAGIC = b"IMLPCKPT"
VERSION = 1
_U32 = struct.Struct("<I")


def _pack_matrix(a: np.ndarray) -> bytes:
    m = np.atleast_2d(np.asarray(a, dtype="<f8"))
    return struct.pack("<II", *m.shape) + np.ascontiguousarray(m).tobytes()


def dumps(params: ImlpParams, buffer: FeatureBuffer, optimizer_step: int = 0) -> bytes:
    header = json.dumps(
        {"config": params.config.to_dict(), "params": list(params.names()), "optimizer_step": optimizer_step},
        sort_keys=True,
    ).encode()
    out = [MAGIC, _U32.pack(VERSION), _U32.pack(len(header)), header]
    out.extend(_pack_matrix(a) for _, a in params.items())
    block = np.zeros((buffer.capacity, buffer.dim), dtype="<f8")
    fill = len(buffer)
    if fill:
        block[:fill] = buffer.as_matrix()
    out.append(struct.pack("<III", buffer.capacity, buffer.dim, fill))
    out.append(block.tobytes())
    return b"".join(out)


def loads(blob: bytes) -> tuple[ImlpParams, FeatureBuffer, int]:
    if blob[:8] != MAGIC:
        raise SchemaError("not an IMLP checkpoint")
    pos = 8
    (version,) = _U32.unpack_from(blob, pos)
    if version != VERSION:
        raise SchemaError(f"unsupported checkpoint version {version}")
    (hlen,) = _U32.unpack_from(blob, pos + 4)
    pos += 8
    header = json.loads(blob[pos : pos + hlen])
    pos += hlen
    config = ImlpConfig(**header["config"])
    shapes = config.param_shapes()
    tensors = {}
    for name in header["params"]:
        rows, cols = struct.unpack_from("<II", blob, pos)
        pos += 8
        n = rows * cols
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(rows, cols)
        pos += 8 * n
        tensors[name] = arr.reshape(shapes[name])
    kw = {n: tensors.get(n) for n in PARAM_NAMES}
    params = ImlpParams(config=config, **kw)
    capacity, dim, fill = struct.unpack_from("<III", blob, pos)
    pos += 12
    block = np.frombuffer(blob, dtype="<f8", count=capacity * dim, offset=pos).reshape(capacity, dim)
    buffer = FeatureBuffer.from_entries(capacity, dim, block[:fill])
    return params, buffer, int(header.get("optimizer_step", 0))


def save(path, params: ImlpParams, buffer: FeatureBuffer, optimizer_step: int = 0) -> None:
    Path(path).write_bytes(dumps(params, buffer, optimizer_step))


def load(path) -> tuple[ImlpParams, FeatureBuffer, int]:
    return loads(Path(path).read_bytes())
