"""Flat binary tensor container.

Layout::

    8 bytes   little-endian u64 header length H
    H bytes   UTF-8 JSON header
    ...       little-endian float64 payload, tensors back to back, row-major

The header always carries ``dtype: "f64"`` and ``layout: "row-major"`` plus a
``tensors`` list of ``{name, shape, offset}`` (offset counted in doubles).
Single-matrix files also carry top-level ``m`` and ``n``. Extra metadata keys
are passed through untouched.
"""

import json
import struct
from pathlib import Path

import numpy as np


class ContainerError(ValueError):
    pass


def write_container(path, tensors, meta=None):
    """Write named float64 arrays to ``path``. Key order is preserved."""
    header = dict(meta or {})
    header["dtype"] = "f64"
    header["layout"] = "row-major"
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes(order="C"))
        offset += arr.size
    header["tensors"] = entries
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for chunk in chunks:
            fh.write(chunk)


def read_container(path):
    """Return ``(tensors, header)`` from a container file."""
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ContainerError(f"{path}: truncated container")
    (hlen,) = struct.unpack("<Q", data[:8])
    try:
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: bad header") from exc
    if header.get("dtype") != "f64" or header.get("layout") != "row-major":
        raise ContainerError(f"{path}: unsupported dtype/layout")
    payload = np.frombuffer(data, dtype="<f8", offset=8 + hlen)
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        if start + size > payload.size:
            raise ContainerError(f"{path}: tensor {entry['name']!r} runs past end of file")
        tensors[entry["name"]] = payload[start : start + size].reshape(shape).astype(np.float64)
    return tensors, header
