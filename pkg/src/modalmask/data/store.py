"""Deterministic on-disk containers.

A blob file is: 8-byte magic, uint64-LE header length, UTF-8 JSON header
(sorted keys), then each array's raw little-endian bytes in header order.
No timestamps or platform-dependent fields anywhere, so equal content
means equal bytes; payloads are 64-bit floats unless an array genuinely
holds indices (stored as little-endian int64 and tagged in the header).
"""

import hashlib
import json
import os

import numpy as np

MAGIC = b"MMBLOB01"
FORMAT_VERSION = 1


class StoreError(ValueError):
    pass


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_blob(path, arrays, meta=None):
    """`arrays` is {name: ndarray}; `meta` any JSON-able dict."""
    names = sorted(arrays)
    entries = []
    payload = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype == np.int64:
            dtype = "<i8"
        else:
            arr = arr.astype(np.float64, copy=False)
            dtype = "<f8"
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        payload.append(arr.astype(dtype).tobytes())
    header = _canonical_json({"version": FORMAT_VERSION, "meta": meta or {}, "arrays": entries})
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for chunk in payload:
            fh.write(chunk)


def read_blob(path):
    """Returns (arrays dict, meta dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise StoreError(f"{path}: bad magic {magic!r}")
        hlen = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise StoreError(f"{path}: unsupported version {header.get('version')}")
        arrays = {}
        for entry in header["arrays"]:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            buf = fh.read(count * 8)
            arr = np.frombuffer(buf, dtype=entry["dtype"]).reshape(entry["shape"])
            arrays[entry["name"]] = arr.copy()
    return arrays, header["meta"]


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
