"""Model checkpoints: one binary file, JSON header plus raw named arrays.

The byte layout is magic, a little-endian uint64 header length, the UTF-8
JSON header {"version", "kind", "config", "arrays": [{name, dtype, shape}]},
then each array's bytes in header order.  Arrays are written sorted by name
in C order, so identical parameters always produce identical files (unlike
zip-based formats, which can embed timestamps).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

_MAGIC = b"LEARNCK1"
_VERSION = 1


def save_checkpoint(path: str | Path, kind: str, config: dict, arrays: dict[str, np.ndarray]) -> Path:
    """Write named arrays with a config header; bit-identical for identical
    inputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(arrays)
    index = []
    blobs = []
    for name in names:
        # asarray, not ascontiguousarray: the latter promotes 0-d to (1,)
        arr = np.asarray(arrays[name])
        index.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)})
        blobs.append(arr.tobytes(order="C"))
    header = json.dumps(
        {"version": _VERSION, "kind": kind, "config": config, "arrays": index},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    return path


def load_checkpoint(path: str | Path) -> tuple[str, dict, dict[str, np.ndarray]]:
    """Read (kind, config, arrays) back from a checkpoint file."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < len(_MAGIC) + 8 or data[: len(_MAGIC)] != _MAGIC:
        raise ParseError(f"{path}: not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack_from("<Q", data, len(_MAGIC))
    start = len(_MAGIC) + 8
    try:
        header = json.loads(data[start : start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt header: {exc}") from exc
    if header.get("version") != _VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    arrays: dict[str, np.ndarray] = {}
    offset = start + hlen
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(data):
            raise ParseError(f"{path}: truncated array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(
            data, dtype=dtype, count=count, offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    return header["kind"], header["config"], arrays
