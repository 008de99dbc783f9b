"""Binary container for datasets and checkpoints.

Layout: magic ``CTNS``, uint32 format version, uint64 header length, a
UTF-8 JSON header, then raw little-endian array payloads back to back.
The header carries a ``kind`` tag, caller metadata, and an array manifest
(name, dtype, shape, byte offset into the payload). Datasets store all
floating payloads as float32; integer-valued arrays such as regime labels
round-trip exactly through float32 because their magnitudes are tiny.

Integrity is split in two: ``payload_sha256`` covers every payload byte,
while callers may store a separate semantic fingerprint over whichever
arrays should be stable across numeric backends.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
from pathlib import Path

import numpy as np

MAGIC = b"CTNS"
FORMAT_VERSION = 1


class ContainerError(RuntimeError):
    pass


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def hash_arrays(meta, arrays: list[np.ndarray]) -> str:
    """sha256 over canonical metadata plus the given arrays, in order."""
    h = hashlib.sha256()
    h.update(_canonical_json(meta))
    for a in arrays:
        shape = np.asarray(a).shape
        a = np.ascontiguousarray(a).reshape(shape)  # ascontiguousarray promotes 0-d
        h.update(str(a.dtype.newbyteorder("<")).encode())
        h.update(str(a.shape).encode())
        h.update(a.astype(a.dtype.newbyteorder("<"), copy=False).tobytes())
    return h.hexdigest()


def write_container(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> str:
    """Write arrays plus metadata; returns the payload sha256."""
    manifest = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        shape = np.asarray(arrays[name]).shape
        arr = np.ascontiguousarray(arrays[name]).reshape(shape)
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = arr.tobytes()
        manifest.append(
            {
                "name": name,
                "dtype": str(arr.dtype),
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)

    digest = hashlib.sha256()
    for blob in blobs:
        digest.update(blob)
    payload_sha = digest.hexdigest()

    header = {
        "kind": kind,
        "format_version": FORMAT_VERSION,
        "meta": meta,
        "payload_sha256": payload_sha,
        "manifest": manifest,
    }
    header_bytes = _canonical_json(header)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)
    return payload_sha


def read_container(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    """Read a container; returns (kind, meta, arrays).

    A payload checksum mismatch raises a warning rather than an error so
    partially damaged files can still be inspected.
    """
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ContainerError(f"{path}: not a container file (magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version > FORMAT_VERSION:
            raise ContainerError(f"{path}: format version {version} is newer than supported")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode())
        payload = fh.read()

    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("payload_sha256"):
        warnings.warn(f"{path}: payload checksum mismatch, file may be corrupt")

    arrays = {}
    for entry in header["manifest"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header["kind"], header["meta"], arrays
