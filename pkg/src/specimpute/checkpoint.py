"""Two-file checkpoint container: JSON manifest + raw float32 blob.

The manifest records the format version, a full config echo, and an ordered
list of parameter records (name, shape, dtype, byte offset); offsets
partition the blob exactly. Values are little-endian IEEE-754 float32, so a
load/save round trip is bit-identical.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint",
           "MANIFEST_NAME", "BLOB_NAME", "FORMAT_VERSION"]

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def _atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(directory, state: dict, config_echo: dict) -> None:
    """Write ``state`` (name -> numpy array) and the config echo.

    Arrays are stored as little-endian float32 in manifest order (sorted by
    name for stability).
    """
    os.makedirs(directory, exist_ok=True)
    records = []
    chunks = []
    offset = 0
    for name in sorted(state):
        # note: ascontiguousarray would promote 0-d arrays to 1-d
        arr = np.asarray(state[name], dtype="<f4")
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"parameter {name!r} contains non-finite values")
        raw = arr.tobytes()
        records.append({"name": name, "shape": list(arr.shape),
                        "dtype": "float32", "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config_echo,
        "blob_bytes": offset,
        "params": records,
    }
    _atomic_write(os.path.join(directory, MANIFEST_NAME),
                  json.dumps(manifest, sort_keys=True, indent=2).encode())
    _atomic_write(os.path.join(directory, BLOB_NAME), b"".join(chunks))


def load_checkpoint(directory) -> tuple:
    """Read a checkpoint directory; returns (config echo, state dict)."""
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    blob_path = os.path.join(directory, BLOB_NAME)
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {manifest.get('format_version')}")
    try:
        blob = open(blob_path, "rb").read()
    except OSError as exc:
        raise CheckpointError(f"cannot read blob: {exc}") from exc
    if len(blob) != manifest["blob_bytes"]:
        raise CheckpointError(
            f"blob is {len(blob)} bytes, manifest says {manifest['blob_bytes']}")
    state = {}
    expected = 0
    for rec in manifest["params"]:
        if rec["dtype"] != "float32":
            raise CheckpointError(f"{rec['name']}: unsupported dtype {rec['dtype']}")
        if rec["offset"] != expected:
            raise CheckpointError(
                f"{rec['name']}: offset {rec['offset']} does not partition the blob "
                f"(expected {expected})")
        count = int(np.prod(rec["shape"], dtype=np.int64)) if rec["shape"] else 1
        nbytes = count * 4
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=rec["offset"])
        state[rec["name"]] = arr.reshape(rec["shape"]).copy()
        expected = rec["offset"] + nbytes
    if expected != len(blob):
        raise CheckpointError("manifest records do not cover the whole blob")
    return manifest["config"], state
