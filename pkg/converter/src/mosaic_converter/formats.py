"""Writers for the pruning engine's on-disk formats.

The checkpoint layout is: 4-byte magic "MOSC", little-endian u32 format
version, u64 header length, a JSON header (sorted keys; config, tensor
table, live head/channel lists, mask table, header SHA-256), then raw
little-endian float32 tensors. Token streams are "MOST", u32 vocab size,
u64 count, u32 ids. Both are reproduced here byte-for-byte from the format
documentation so this tool stays decoupled from the engine's internals.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

CHECKPOINT_MAGIC = b"MOSC"
STREAM_MAGIC = b"MOST"
FORMAT_VERSION = 1

PROJECTION_KINDS = ("q", "k", "v", "o", "g", "u", "d")

CONFIG_KEYS = (
    "n_layers",
    "d_model",
    "n_heads",
    "head_dim",
    "d_ff",
    "vocab_size",
    "max_seq_len",
    "norm_eps",
    "rope_base",
)


class FormatError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def tensor_names(n_layers: int) -> list[str]:
    """Payload order of tensors in a checkpoint."""
    names = ["embedding"]
    for n in range(n_layers):
        names.extend(f"layers.{n}.{kind}" for kind in PROJECTION_KINDS)
        names.append(f"layers.{n}.attn_norm")
        names.append(f"layers.{n}.ffn_norm")
    names.extend(["final_norm", "lm_head"])
    return names


def _header_digest(header: dict) -> str:
    doc = {k: v for k, v in header.items() if k != "header_sha256"}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def checkpoint_bytes(config: dict, tensors: dict[str, np.ndarray]) -> bytes:
    """Serialize a dense model; live lists cover every head and channel."""
    missing = [k for k in CONFIG_KEYS if k not in config]
    if missing:
        raise FormatError(f"config missing keys: {missing}")
    order = tensor_names(config["n_layers"])
    unknown = set(tensors) - set(order)
    if unknown or set(order) - set(tensors):
        raise FormatError(
            f"tensor set mismatch: unknown={sorted(unknown)} "
            f"missing={sorted(set(order) - set(tensors))}"
        )
    table = {}
    chunks = []
    offset = 0
    for name in order:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"tensor {name} holds non-finite values")
        raw = arr.tobytes()
        table[name] = {
            "dtype": "f32",
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "config": {k: config[k] for k in CONFIG_KEYS},
        "live_heads": [list(range(config["n_heads"]))] * config["n_layers"],
        "live_ff_channels": [list(range(config["d_ff"]))] * config["n_layers"],
        "tensors": table,
        "masks": {},
    }
    header["header_sha256"] = _header_digest(header)
    header_json = json.dumps(header, sort_keys=True).encode()
    head = CHECKPOINT_MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header_json))
    return head + header_json + b"".join(chunks)


def model_fingerprint(config: dict, tensors: dict[str, np.ndarray]) -> str:
    """Content hash matching the engine's fingerprint recipe."""
    h = hashlib.sha256()
    h.update(json.dumps({k: config[k] for k in CONFIG_KEYS}, sort_keys=True).encode())
    heads = list(range(config["n_heads"]))
    channels = list(range(config["d_ff"]))
    for _ in range(config["n_layers"]):
        h.update(json.dumps([heads, channels]).encode())
    for name in tensor_names(config["n_layers"]):
        h.update(np.ascontiguousarray(tensors[name], dtype="<f4").tobytes())
    return h.hexdigest()


def stream_bytes(ids: np.ndarray, vocab_size: int) -> bytes:
    ids = np.asarray(ids)
    if ids.ndim != 1 or ids.size == 0:
        raise FormatError("token stream must be a nonempty 1-D array")
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise FormatError("token id out of vocabulary range")
    head = STREAM_MAGIC + struct.pack("<IQ", int(vocab_size), int(ids.size))
    return head + np.ascontiguousarray(ids, dtype="<u4").tobytes()
