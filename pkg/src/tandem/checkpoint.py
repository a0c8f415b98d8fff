"""Single-file checkpoint container.

Layout (all integers little-endian):

    bytes 0..3    magic ``TDCP``
    bytes 4..7    format version, uint32 (currently 1)
    bytes 8..15   header length in bytes, uint64
    header        UTF-8 JSON: {"meta": {...}, "tensors": {name: entry}}
                  entry = {"dtype": "<f4"|"<f8"|"<u1"|..., "shape": [...],
                           "offset": int, "nbytes": int}
    payload       raw array bytes, row-major, little-endian, packed in
                  sorted-name order at the stated offsets (relative to the
                  payload start)

Writing the same arrays and meta twice yields byte-identical files: the
header JSON uses sorted keys and compact separators, and offsets follow
sorted tensor names.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"TDCP"
VERSION = 1


def _le(dtype: np.dtype) -> np.dtype:
    dtype = np.dtype(dtype)
    return dtype.newbyteorder("<") if dtype.byteorder == ">" else dtype


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named numpy arrays plus a JSON-able meta dict."""
    path = Path(path)
    names = sorted(arrays)
    entries = {}
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(_le(arr.dtype), copy=False)
        blob = arr.tobytes()
        entries[name] = {
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        }
        offset += len(blob)
        blobs.append(blob)
    header = json.dumps(
        {"meta": meta or {}, "tensors": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_arrays(path) -> tuple[dict, dict]:
    """Read back (arrays, meta) from `save_arrays` output."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    payload = raw[16 + hlen :]
    arrays = {}
    for name, entry in header["tensors"].items():
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        arr = np.frombuffer(payload[start : start + nbytes], dtype=np.dtype(entry["dtype"]))
        arrays[name] = arr.reshape(entry["shape"]).copy()
    return arrays, header.get("meta", {})
