"""Binary checkpoint format.

Layout (all integers little-endian):
    magic   8 bytes  b"AMPTNSR\\0"
    version uint32   currently 1
    count   uint32   number of named tensors
    then per tensor, in ascending name order:
    name_len uint32, name utf-8 bytes, ndim uint32, shape uint64*ndim,
    data float64*prod(shape)

A JSON manifest is written next to the binary (same path + ".json") listing
tensor names/shapes plus caller metadata. Writes are atomic (tmp + rename).
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"AMPTNSR\x00"
VERSION = 1


def save_checkpoint(path: str | Path, tensors: dict, meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    manifest_tensors = []
    for name in sorted(tensors):
        value = tensors[name]
        arr = np.asarray(value.data if isinstance(value, Tensor) else value, dtype=np.float64)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
        manifest_tensors.append({"name": name, "shape": list(arr.shape)})

    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)

    manifest = {
        "format": "amprl-checkpoint",
        "version": VERSION,
        "tensors": manifest_tensors,
        "meta": meta or {},
    }
    mpath = path.with_name(path.name + ".json")
    mtmp = mpath.with_name(mpath.name + ".tmp")
    mtmp.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    os.replace(mtmp, mpath)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    offset = len(MAGIC)
    version, count = struct.unpack_from("<II", blob, offset)
    offset += 8
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}Q", blob, offset)
        offset += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).reshape(shape)
        offset += 8 * size
        tensors[name] = arr.astype(np.float64)
    meta: dict = {}
    mpath = path.with_name(path.name + ".json")
    if mpath.exists():
        meta = json.loads(mpath.read_text(encoding="utf-8")).get("meta", {})
    return tensors, meta
