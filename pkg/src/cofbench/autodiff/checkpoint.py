"""Checkpoints: JSON manifest plus a flat little-endian float32 blob.

The manifest lists every tensor (name, shape, offset) in a fixed order and
the sha256 of the blob, so frozen weights can be referenced by content.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

FORMAT = "cofbench-checkpoint/1"


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def pack_state(state: dict[str, np.ndarray]) -> tuple[bytes, list[dict]]:
    table, chunks, offset = [], [], 0
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f4")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    return b"".join(chunks), table


def blob_hash(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(path, state: dict[str, np.ndarray], meta: dict | None = None) -> str:
    """Write ``path``.json and ``path``.bin; returns the blob hash."""
    path = Path(path)
    blob, table = pack_state(state)
    digest = blob_hash(blob)
    manifest = {"format": FORMAT, "sha256": digest, "tensors": table, "meta": meta or {}}
    atomic_write(path.with_suffix(".bin"), blob)
    atomic_write(path.with_suffix(".json"), (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode())
    return digest


def read_manifest(path) -> dict:
    path = Path(path).with_suffix(".json")
    if not path.exists():
        raise FileNotFoundError(str(path))
    return json.loads(path.read_text())


def load_checkpoint(path, expected_shapes: dict[str, tuple] | None = None):
    """Returns (state, manifest). Validates the hash and, if given, the exact shape table."""
    manifest = read_manifest(path)
    bin_path = Path(path).with_suffix(".bin")
    if not bin_path.exists():
        raise FileNotFoundError(str(bin_path))
    blob = bin_path.read_bytes()
    if blob_hash(blob) != manifest["sha256"]:
        raise ValueError(f"{bin_path}: content hash does not match its manifest")
    flat = np.frombuffer(blob, dtype="<f4")
    state = {}
    for entry in manifest["tensors"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        state[entry["name"]] = flat[entry["offset"]:entry["offset"] + n].reshape(entry["shape"]).copy()
    if expected_shapes is not None:
        got = {k: tuple(v.shape) for k, v in state.items()}
        want = {k: tuple(v) for k, v in expected_shapes.items()}
        if got != want:
            diff = sorted(set(got.items()) ^ set(want.items()))
            raise ValueError(f"checkpoint shape table mismatch: {diff[:6]}")
    return state, manifest


def state_checksum(state: dict[str, np.ndarray]) -> str:
    """Hash of the float32 packing of a state dict."""
    return blob_hash(pack_state(state)[0])
