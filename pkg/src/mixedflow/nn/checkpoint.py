"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic   4 bytes  b"MXFL"
    version u32      format version (currently 1)
    mlen    u64      manifest length in bytes
    manifest         UTF-8 JSON (architecture dims, widths, block counts,
                     training metadata)
    count   u64      number of named arrays
    per array:
        nlen  u32, name UTF-8
        dlen  u16, dtype string (numpy little-endian spec, e.g. "<f4")
        ndim  u32, shape ndim*u64
        raw C-order array bytes

Round-trips bit-exactly; the sha256 of the file doubles as checkpoint id.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..errors import DataFormatError

MAGIC = b"MXFL"
FORMAT_VERSION = 1

__all__ = ["save_checkpoint", "load_checkpoint", "checkpoint_id", "FORMAT_VERSION"]


def _encode(manifest: dict, arrays: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<Q", len(mbytes)))
    chunks.append(mbytes)
    chunks.append(struct.pack("<Q", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.dtype.newbyteorder("<")
        arr = arr.astype(le, copy=False)
        nbytes = name.encode("utf-8")
        dbytes = le.str.encode("ascii")
        chunks.append(struct.pack("<I", len(nbytes)))
        chunks.append(nbytes)
        chunks.append(struct.pack("<H", len(dbytes)))
        chunks.append(dbytes)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.tobytes(order="C"))
    return b"".join(chunks)


def save_checkpoint(path, manifest: dict, arrays: dict[str, np.ndarray]) -> str:
    """Write the container; returns its sha256 hex digest."""
    blob = _encode(manifest, arrays)
    with open(path, "wb") as fh:
        fh.write(blob)
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray], str]:
    with open(path, "rb") as fh:
        blob = fh.read()
    digest = hashlib.sha256(blob).hexdigest()
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    off = 8
    (mlen,) = struct.unpack_from("<Q", view, off)
    off += 8
    manifest = json.loads(bytes(view[off:off + mlen]).decode("utf-8"))
    off += mlen
    (count,) = struct.unpack_from("<Q", view, off)
    off += 8
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", view, off)
        off += 4
        name = bytes(view[off:off + nlen]).decode("utf-8")
        off += nlen
        (dlen,) = struct.unpack_from("<H", view, off)
        off += 2
        dtype = np.dtype(bytes(view[off:off + dlen]).decode("ascii"))
        off += dlen
        (ndim,) = struct.unpack_from("<I", view, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", view, off) if ndim else ()
        off += 8 * ndim
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        arrays[name] = np.frombuffer(view[off:off + nbytes], dtype=dtype).reshape(shape).copy()
        off += nbytes
    if off != len(blob):
        raise DataFormatError(f"{path}: {len(blob) - off} trailing bytes")
    return manifest, arrays, digest


def checkpoint_id(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
