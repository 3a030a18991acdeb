"""Checkpoint container for attention and/or learner tensors.

Layout::

    b"AFSCKPT1"                      8-byte magic
    u32 little-endian                length of the metadata document
    UTF-8 JSON metadata              format version, config echo, tensor table
    float32 little-endian tensors    in metadata order, C order
    u32 little-endian                CRC-32 of every byte before it

Metadata is serialized with sorted keys and fixed separators, so a file
that is loaded and saved again comes out byte-identical.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .attention import AttentionConfig, AttentionParams
from .learner import LearnerConfig, LearnerParams

MAGIC = b"AFSCKPT1"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def _dumps(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_checkpoint(tensors: dict[str, np.ndarray], config: dict | None = None) -> bytes:
    table = []
    blobs = []
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        table.append({"name": name, "shape": list(arr.shape), "dtype": "float32"})
        blobs.append(arr.tobytes())
    meta = _dumps({"format_version": FORMAT_VERSION, "config": config or {}, "tensors": table})
    body = MAGIC + struct.pack("<I", len(meta)) + meta + b"".join(blobs)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < len(MAGIC) + 8:
        raise CheckpointError("checkpoint truncated: shorter than its fixed header")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {data[:len(MAGIC)]!r}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch (corrupted or truncated file)")
    (meta_len,) = struct.unpack("<I", body[8:12])
    try:
        meta = json.loads(body[12:12 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint metadata: {exc}") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('format_version')}")
    offset = 12 + meta_len
    tensors = {}
    for entry in meta["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 4 * count
        if end > len(body):
            raise CheckpointError(f"tensor {entry['name']} runs past the end of the file")
        tensors[entry["name"]] = np.frombuffer(body[offset:end], dtype="<f4").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(body):
        raise CheckpointError(f"{len(body) - offset} trailing bytes after the last tensor")
    return meta, tensors


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_checkpoint(path, attention: AttentionParams | None = None, learner: LearnerParams | None = None,
                    config: dict | None = None) -> None:
    """Write whichever of ``attention`` / ``learner`` is given."""
    if attention is None and learner is None:
        raise ValueError("save_checkpoint needs attention and/or learner params")
    echo = dict(config or {})
    tensors = {}
    if attention is not None:
        echo.setdefault("attention", {
            "input_dim": attention.config.input_dim,
            "n_e": attention.config.n_e,
            "hidden_layers": attention.config.hidden_layers,
            "hidden_width": attention.config.hidden_width,
        })
        tensors.update({p.name: p.value for p in attention})
    if learner is not None:
        echo.setdefault("learner", {
            "layer_sizes": list(learner.config.layer_sizes),
            "task": learner.config.task,
            "activation": learner.config.activation,
        })
        tensors.update({p.name: p.value for p in learner})
    _atomic_write(Path(path), encode_checkpoint(tensors, echo))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def _fill(params, tensors: dict[str, np.ndarray], path) -> None:
    for p in params:
        if p.name not in tensors:
            raise CheckpointError(f"{path}: missing tensor {p.name}")
        value = tensors[p.name]
        if value.shape != p.value.shape:
            raise CheckpointError(
                f"{path}: tensor {p.name} has shape {value.shape}, expected {p.value.shape}"
            )
        p.value = value.copy()
        p.grad = np.zeros_like(p.value)
        p.adam_m = np.zeros_like(p.value)
        p.adam_v = np.zeros_like(p.value)


def load_learner(path, config: LearnerConfig) -> LearnerParams:
    _, tensors = load_checkpoint(path)
    params = LearnerParams(config, seed=0)
    _fill(params, tensors, path)
    return params


def load_attention(path, config: AttentionConfig) -> AttentionParams:
    _, tensors = load_checkpoint(path)
    params = AttentionParams(config, seed=0)
    _fill(params, tensors, path)
    return params
