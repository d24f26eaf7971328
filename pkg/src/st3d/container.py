"""Flat binary container for named tensors.

Layout, in order:

  * 8-byte magic "ST3D1" padded with three NULs,
  * unsigned 32-bit little-endian byte length of the manifest,
  * the manifest: UTF-8 JSON, a list of entries
      {"name", "dtype", "shape", "byte_offset", "byte_length"}
    plus an optional "meta" object per entry for structured metadata,
  * the payload: raw little-endian, C-order tensor bytes.

byte_offset counts from the start of the payload (the first byte after the
manifest).  Supported dtypes: f32, f64, i64.  Reads validate the magic, the
manifest shape, that byte ranges are non-overlapping and inside the file,
and that sizes match dtype times element count.  Round trips are
bit-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"ST3D1\x00\x00\x00"

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"),
           "i64": np.dtype("<i8")}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64",
                np.dtype(np.int64): "i64"}


class ContainerError(ValueError):
    pass


@dataclass
class Container:
    """In-memory view of a tensor container: arrays plus per-entry metadata."""

    arrays: dict[str, np.ndarray]
    meta: dict[str, dict] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def names(self) -> list[str]:
        return list(self.arrays)


def write_container(path, arrays: dict[str, np.ndarray],
                    meta: dict[str, dict] | None = None) -> None:
    meta = meta or {}
    for name in meta:
        if name not in arrays:
            raise ContainerError(f"meta for unknown entry {name!r}")
    manifest = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype not in _DTYPE_NAMES:
            raise ContainerError(f"unsupported dtype {arr.dtype} for {name!r}")
        dtype_name = _DTYPE_NAMES[arr.dtype]
        blob = np.ascontiguousarray(arr).astype(
            _DTYPES[dtype_name], copy=False).tobytes()
        entry = {
            "name": name,
            "dtype": dtype_name,
            "shape": list(arr.shape),
            "byte_offset": offset,
            "byte_length": len(blob),
        }
        if name in meta:
            entry["meta"] = meta[name]
        manifest.append(entry)
        blobs.append(blob)
        offset += len(blob)
    doc = json.dumps(manifest, sort_keys=True,
                     separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(doc)))
        fh.write(doc)
        for blob in blobs:
            fh.write(blob)


def read_container(path) -> Container:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 4:
        raise ContainerError("truncated container (no header)")
    if raw[:len(MAGIC)] != MAGIC:
        raise ContainerError("bad magic; not a tensor container")
    (doc_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    doc_start = len(MAGIC) + 4
    if doc_start + doc_len > len(raw):
        raise ContainerError("truncated container (manifest)")
    try:
        manifest = json.loads(raw[doc_start:doc_start + doc_len])
    except json.JSONDecodeError as e:
        raise ContainerError(f"manifest is not valid JSON: {e}") from e
    if not isinstance(manifest, list):
        raise ContainerError("manifest must be a list of entries")
    payload = raw[doc_start + doc_len:]
    arrays: dict[str, np.ndarray] = {}
    meta: dict[str, dict] = {}
    spans = []
    for entry in manifest:
        if not isinstance(entry, dict):
            raise ContainerError("manifest entries must be objects")
        missing = {"name", "dtype", "shape", "byte_offset",
                   "byte_length"} - entry.keys()
        if missing:
            raise ContainerError(f"manifest entry missing {sorted(missing)}")
        name = entry["name"]
        if name in arrays:
            raise ContainerError(f"duplicate entry name {name!r}")
        if entry["dtype"] not in _DTYPES:
            raise ContainerError(f"unknown dtype {entry['dtype']!r}")
        dtype = _DTYPES[entry["dtype"]]
        shape = tuple(int(n) for n in entry["shape"])
        if any(n < 0 for n in shape):
            raise ContainerError(f"negative dimension in shape of {name!r}")
        off, length = int(entry["byte_offset"]), int(entry["byte_length"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if length != count * dtype.itemsize:
            raise ContainerError(
                f"byte length {length} of {name!r} does not match shape")
        if off < 0 or off + length > len(payload):
            raise ContainerError(f"entry {name!r} extends outside the file")
        spans.append((off, off + length, name))
        arrays[name] = np.frombuffer(
            payload, dtype=dtype, count=count, offset=off).reshape(shape).copy()
        if "meta" in entry:
            meta[name] = entry["meta"]
    spans.sort()
    for (a0, a1, an), (b0, b1, bn) in zip(spans, spans[1:]):
        if b0 < a1:
            raise ContainerError(f"entries {an!r} and {bn!r} overlap")
    return Container(arrays, meta)
