"""Checkpoint files and checkpoint averaging.

Layout: the 5 magic bytes ``MOCE1``, a little-endian uint32 header length, a
UTF-8 JSON header (config, vocabulary languages, tensor table), then raw
little-endian float32 tensor blobs in header order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import Model, ModelConfig, build_model
from .tokenizer import build_vocab

MAGIC = b"MOCE1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: Model, path, extra: dict | None = None) -> None:
    table, offset = [], 0
    for name, p in model.params.items():
        n = p.size * 4
        table.append({"name": name, "shape": list(p.shape), "offset": offset})
        offset += n
    header = {
        "config": model.config.to_dict(),
        "languages": list(model.vocab.languages),
        "tensors": table,
        "extra": extra or {},
    }
    blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for p in model.params.values():
            f.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def read_header(path) -> tuple[dict, int]:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a MOCE1 checkpoint")
        (n,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(n).decode("utf-8"))
    return header, len(MAGIC) + 4 + n


def load_checkpoint(path, dtype: str | None = None) -> Model:
    """Rebuild the model and fill it from the file, validating every shape."""
    header, start = read_header(path)
    config = ModelConfig.from_dict(header["config"])
    if dtype is not None:
        config.dtype = dtype
    model = build_model(config, build_vocab(header["languages"]))
    raw = Path(path).read_bytes()[start:]
    names = [t["name"] for t in header["tensors"]]
    if set(names) != set(model.params):
        missing = set(model.params) - set(names)
        unknown = set(names) - set(model.params)
        raise CheckpointError(f"{path}: tensor set mismatch (missing {sorted(missing)}, unknown {sorted(unknown)})")
    for entry in header["tensors"]:
        p = model.params[entry["name"]]
        if tuple(entry["shape"]) != p.shape:
            raise CheckpointError(f"{path}: {entry['name']} has shape {entry['shape']}, config implies {list(p.shape)}")
        n = p.size
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=entry["offset"])
        p.data[...] = arr.reshape(p.shape).astype(p.dtype)
    return model


def average_checkpoints(paths) -> Model:
    """Element-wise mean of every parameter over checkpoints with one config."""
    paths = list(paths)
    if not paths:
        raise ValueError("no checkpoints to average")
    headers = [read_header(p)[0] for p in paths]

    def shape_key(h):
        # the init seed does not affect the architecture
        return {k: v for k, v in h["config"].items() if k != "seed"}, h["languages"]
    ref = shape_key(headers[0])
    for p, h in zip(paths[1:], headers[1:]):
        if shape_key(h) != ref:
            raise CheckpointError(f"{p}: config differs from {paths[0]}")
    models = [load_checkpoint(p, dtype="float64") for p in paths]
    out = load_checkpoint(paths[0])
    for name, p in out.params.items():
        acc = sum(m.params[name].data for m in models)
        p.data[...] = (acc / len(models)).astype(p.dtype)
    return out
