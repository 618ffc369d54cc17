"""Checkpoint directory: ``manifest.json`` + ``weights.f32``.

The manifest lists every tensor (name, kind, shape, byte offset into the
payload) together with the run configuration, preprocessing state and
metrics history. The payload is contiguous little-endian float32.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import ParamStore

FORMAT = "csfmamba-checkpoint"
VERSION = 1


def save_checkpoint(path, store: ParamStore, meta: dict) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    buffers = {n for n, _ in store.buffers()}
    for name, t in store.items():
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        entries.append({"name": name, "kind": "buffer" if name in buffers else "param",
                        "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    (path / "weights.f32").write_bytes(b"".join(chunks))
    manifest = {"format": FORMAT, "version": VERSION, "dtype": "f32le", "tensors": entries, **meta}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_checkpoint(path):
    """Return (manifest, {name: float32 array})."""
    path = Path(path)
    if path.name == "manifest.json":
        path = path.parent
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{path} is not a {FORMAT} directory")
    payload = (path / "weights.f32").read_bytes()
    tensors = {}
    for e in manifest["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise ValueError(f"weights.f32 is truncated at tensor {e['name']!r}")
        tensors[e["name"]] = np.frombuffer(payload, dtype="<f4", count=e["nbytes"] // 4,
                                           offset=e["offset"]).reshape(e["shape"]).copy()
    return manifest, tensors
