"""Binary checkpoint format.

Layout, all integers little-endian:

    b"PEGC"                 magic
    u32                     format version (1)
    u32                     header length in bytes
    header                  UTF-8 JSON: {"config": {...}, "tensors": [
                                {"name", "kind": "param"|"buffer", "shape", "offset", "nbytes"}, ...]}
    blobs                   float32 little-endian tensors in manifest order;
                            offsets are relative to the first blob byte
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import ModelConfig, PeGCNModel

MAGIC = b"PEGC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(model: PeGCNModel) -> bytes:
    entries, blobs, offset = [], [], 0
    for kind, store in (("param", model.params), ("buffer", model.buffers)):
        for name in sorted(store):
            raw = np.ascontiguousarray(store[name], dtype="<f4").tobytes()
            entries.append({"name": name, "kind": kind, "shape": list(store[name].shape),
                            "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
    header = json.dumps({"config": model.cfg.to_dict(), "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(header)) + header + b"".join(blobs)


def save_checkpoint(model: PeGCNModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def load_checkpoint(path) -> PeGCNModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 12:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
        cfg = ModelConfig(**header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad header ({exc})") from exc
    base = 12 + hlen
    dt = cfg.np_dtype
    params, buffers = {}, {}
    for e in header["tensors"]:
        start = base + e["offset"]
        if start + e["nbytes"] > len(raw) or e["nbytes"] != 4 * int(np.prod(e["shape"])):
            raise CheckpointError(f"{path}: tensor {e['name']!r} has an inconsistent extent")
        arr = np.frombuffer(raw, dtype="<f4", count=e["nbytes"] // 4, offset=start)
        (params if e["kind"] == "param" else buffers)[e["name"]] = arr.reshape(e["shape"]).astype(dt)
    try:
        return PeGCNModel(cfg, params, buffers)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
