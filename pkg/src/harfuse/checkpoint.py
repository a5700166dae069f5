"""Binary checkpoint format.

Layout::

    b"HARFUSE1"                      8-byte magic
    u64 little-endian                manifest length in bytes
    manifest                         UTF-8 JSON
    blob                             little-endian float32 tensors, back to back

The manifest holds ``format_version``, a free-form ``config`` echo and a
``tensors`` list of ``{"name", "shape", "offset"}`` in blob order, where
``offset`` is a byte offset into the blob.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"HARFUSE1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointManifestError(CheckpointError):
    pass


def encode_checkpoint(tensors: Mapping[str, np.ndarray], config: dict | None = None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    manifest = json.dumps(
        {"format_version": FORMAT_VERSION, "config": config or {}, "tensors": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(manifest)) + manifest + b"".join(chunks)


def decode_checkpoint(raw: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(raw) < 16:
        raise CheckpointTruncatedError(f"checkpoint truncated: {len(raw)} bytes, header needs 16")
    if raw[:8] != MAGIC:
        raise CheckpointError(f"bad magic {raw[:8]!r}")
    (mlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + mlen > len(raw):
        raise CheckpointTruncatedError("checkpoint truncated inside the manifest")
    try:
        manifest = json.loads(raw[16:16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointManifestError(f"unreadable manifest: {exc}") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version!r}, expected {FORMAT_VERSION}")
    blob = raw[16 + mlen:]
    tensors: dict[str, np.ndarray] = {}
    expected = 0
    for entry in manifest.get("tensors", []):
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        if name in tensors:
            raise CheckpointManifestError(f"duplicate tensor {name!r}")
        if offset != expected:
            raise CheckpointManifestError(
                f"tensor {name!r} at offset {offset}, expected {expected}: manifest out of blob order"
            )
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(blob):
            raise CheckpointTruncatedError(
                f"checkpoint truncated: tensor {name!r} needs bytes {offset}..{offset + nbytes}, blob has {len(blob)}"
            )
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape).astype(np.float32)
        expected = offset + nbytes
    if expected != len(blob):
        raise CheckpointManifestError(f"manifest describes {expected} blob bytes but file holds {len(blob)}")
    return tensors, manifest.get("config", {})


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(tensors: Mapping[str, np.ndarray], path, config: dict | None = None) -> None:
    """Write-then-rename, so an interrupted save never leaves a partial file."""
    atomic_write_bytes(path, encode_checkpoint(tensors, config))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
