"""Binary checkpoints.

Layout: 8-byte magic, little-endian uint32 format version, uint32 header
length, a UTF-8 JSON header, then the arrays back to back in little-endian
byte order.  The header lists each array's name, dtype and shape together
with a ``kind`` tag and arbitrary JSON metadata (usually the run config).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CMPNTCK\x00"
VERSION = 1
_DTYPES = {"f8": "<f8", "i8": "<i8", "b1": "|b1"}


class CheckpointError(ValueError):
    pass


def _code(arr: np.ndarray) -> str:
    if arr.dtype == np.bool_:
        return "b1"
    if np.issubdtype(arr.dtype, np.integer):
        return "i8"
    if np.issubdtype(arr.dtype, np.floating):
        return "f8"
    raise CheckpointError(f"unsupported dtype {arr.dtype}")


def dumps(kind: str, arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries, blobs = [], []
    for name in arrays:
        arr = np.asarray(arrays[name])
        code = _code(arr)
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape)})
        blobs.append(data.tobytes())
    header = json.dumps({"kind": kind, "meta": meta or {}, "arrays": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(header)) + header + b"".join(blobs)


def loads(blob: bytes, kind: str | None = None) -> tuple[str, dict[str, np.ndarray], dict]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    if kind is not None and header["kind"] != kind:
        raise CheckpointError(f"checkpoint holds a {header['kind']!r} state, expected {kind!r}")
    offset = 16 + hlen
    arrays = {}
    for e in header["arrays"]:
        dt = np.dtype(_DTYPES[e["dtype"]])
        count = int(np.prod(e["shape"], dtype=np.int64))
        n = count * dt.itemsize
        if offset + n > len(blob):
            raise CheckpointError(f"truncated checkpoint while reading {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(blob, dtype=dt, count=count, offset=offset).reshape(e["shape"]).copy()
        offset += n
    if offset != len(blob):
        raise CheckpointError("trailing bytes after the last array")
    return header["kind"], arrays, header["meta"]


def save(path: str | Path, kind: str, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(dumps(kind, arrays, meta))


def load(path: str | Path, kind: str | None = None):
    return loads(Path(path).read_bytes(), kind)
