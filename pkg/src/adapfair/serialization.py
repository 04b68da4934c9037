"""Versioned binary container for flat parameter vectors.

Layout (all little-endian)::

    magic      8 bytes   b"ADAPFAIR"
    version    uint32
    kind_len   uint32, then kind as UTF-8 (e.g. "flow", "fcnn", "mlp")
    header_len uint32, then a JSON object (dim, blocks, hidden width, seed, ...)
    count      uint64, then ``count`` float64 parameters
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidInput

MAGIC = b"ADAPFAIR"
VERSION = 1


def write_params(path, kind: str, header: dict, params: np.ndarray) -> None:
    params = np.ascontiguousarray(params, dtype="<f8").reshape(-1)
    kind_b = kind.encode()
    header_b = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(kind_b)) + kind_b)
        fh.write(struct.pack("<I", len(header_b)) + header_b)
        fh.write(struct.pack("<Q", params.size))
        fh.write(params.tobytes())


def read_params(path) -> tuple[str, dict, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise InvalidInput(f"{path}: not a parameter file")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != VERSION:
        raise InvalidInput(f"{path}: unsupported version {version}")
    pos = 12
    (n,) = struct.unpack_from("<I", data, pos)
    kind = data[pos + 4 : pos + 4 + n].decode()
    pos += 4 + n
    (n,) = struct.unpack_from("<I", data, pos)
    header = json.loads(data[pos + 4 : pos + 4 + n])
    pos += 4 + n
    (count,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if len(data) - pos != 8 * count:
        raise InvalidInput(f"{path}: truncated parameter block")
    params = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(float)
    return kind, header, params
