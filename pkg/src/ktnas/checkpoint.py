"""Checkpoint format: ``manifest.json`` plus one little-endian float32 blob.

The manifest lists every tensor's name, shape, dtype, byte offset and byte
length, in blob order, plus a free-form ``meta`` object.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

FORMAT = "ktnas-checkpoint/1"
MANIFEST = "manifest.json"
BLOB = "weights.bin"


class CheckpointError(RuntimeError):
    pass


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_checkpoint(directory: str | Path, tensors: Mapping[str, torch.Tensor], meta: dict | None = None) -> Path:
    directory = Path(directory)
    entries = []
    chunks = []
    offset = 0
    for name, t in tensors.items():
        arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
        raw = arr.tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": "float32", "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format": FORMAT, "byteorder": "little", "tensors": entries, "meta": meta or {}}
    try:
        directory.mkdir(parents=True, exist_ok=True)
        _atomic_write(directory / BLOB, b"".join(chunks))
        _atomic_write(directory / MANIFEST, (json.dumps(manifest, indent=1) + "\n").encode())
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint to {directory}: {exc}") from exc
    return directory


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise CheckpointError(f"no checkpoint manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
    return manifest


def load_checkpoint(directory: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    directory = Path(directory)
    manifest = read_manifest(directory)
    try:
        blob = (directory / BLOB).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {directory / BLOB}: {exc}") from exc
    tensors = {}
    for e in manifest["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(blob):
            raise CheckpointError(f"tensor {e['name']} extends past the end of the blob")
        arr = np.frombuffer(blob, dtype="<f4", count=e["nbytes"] // 4, offset=e["offset"])
        tensors[e["name"]] = torch.from_numpy(arr.reshape(e["shape"]).astype(np.float32))
    return tensors, manifest["meta"]
