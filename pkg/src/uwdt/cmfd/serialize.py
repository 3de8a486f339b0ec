"""Model parameters as one flat little-endian f32 blob plus a JSON manifest
listing each tensor's name, shape and element offset."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

DTYPE = np.dtype("<f4")


def pack(models: dict[str, dict[str, np.ndarray]]) -> tuple[bytes, dict]:
    entries, chunks, offset = [], [], 0
    for model in sorted(models):
        for name in sorted(models[model]):
            arr = np.asarray(models[model][name], dtype=DTYPE)
            entries.append({"model": model, "name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(arr.ravel().tobytes())
            offset += arr.size
    return b"".join(chunks), {"dtype": "float32", "byteorder": "little", "count": offset, "tensors": entries}


def unpack(blob: bytes, manifest: dict) -> dict[str, dict[str, np.ndarray]]:
    flat = np.frombuffer(blob, dtype=DTYPE)
    if flat.size != manifest["count"]:
        raise ValueError(f"blob holds {flat.size} values, manifest expects {manifest['count']}")
    out: dict[str, dict[str, np.ndarray]] = {}
    for e in manifest["tensors"]:
        size = int(np.prod(e["shape"], dtype=int))
        out.setdefault(e["model"], {})[e["name"]] = flat[e["offset"]: e["offset"] + size].reshape(e["shape"]).copy()
    return out


def save(models, path: Path) -> tuple[Path, Path]:
    """Write ``path`` (.bin) and ``path`` with a .json suffix."""
    path = Path(path)
    blob, manifest = pack(models)
    path.write_bytes(blob)
    man = path.with_suffix(".json")
    man.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path, man


def load(path: Path) -> dict[str, dict[str, np.ndarray]]:
    path = Path(path)
    return unpack(path.read_bytes(), json.loads(path.with_suffix(".json").read_text()))
