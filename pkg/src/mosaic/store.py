"""File formats: binary checkpoints, token streams, rank and plan JSON.

A checkpoint is a single file: 4-byte magic "MOSC", a little-endian u32
format version, a u64 header length, a JSON header (config, tensor table,
live head/channel indices, mask table, and a SHA-256 of the header itself),
then the raw payload of little-endian float32 tensors followed by packed
mask bitsets. Token streams use magic "MOST" with a u32 vocab size, u64
count, and u32 token ids. All writers publish atomically (temp file then
rename) and are byte-deterministic for fixed inputs.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .errors import InputError, IntegrityError
from .model import (
    PROJECTION_KINDS,
    ActivationNorms,
    DecoderLayer,
    LanguageModel,
    ModelConfig,
    ProjectionId,
)
from .pruning import PruningPlan
from .ranking import GlobalRank

CHECKPOINT_MAGIC = b"MOSC"
STREAM_MAGIC = b"MOST"
FORMAT_VERSION = 1


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


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _tensor_order(model: LanguageModel):
    yield "embedding", model.embedding
    for n, layer in enumerate(model.layers):
        for kind in PROJECTION_KINDS:
            yield f"layers.{n}.{kind}", layer.projection(kind)
        yield f"layers.{n}.attn_norm", layer.attn_norm_gain
        yield f"layers.{n}.ffn_norm", layer.ffn_norm_gain
    yield "final_norm", model.final_norm_gain
    yield "lm_head", model.lm_head


def _header_digest(header: dict) -> str:
    doc = {k: v for k, v in header.items() if k != "header_sha256"}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def checkpoint_bytes(
    model: LanguageModel, masks: dict[ProjectionId, np.ndarray] | None = None
) -> bytes:
    """Serialize a model (and optional zero-masks) into checkpoint bytes."""
    model.validate()
    masks = masks or {}
    tensor_table = {}
    chunks = []
    offset = 0
    for name, arr in _tensor_order(model):
        if not np.all(np.isfinite(arr)):
            raise InputError(f"tensor {name} holds non-finite values")
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensor_table[name] = {
            "dtype": "f32",
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    mask_table = {}
    for pid in sorted(masks):
        mask = np.asarray(masks[pid], dtype=bool)
        expected = model.projection(pid).shape
        if mask.shape != expected:
            raise InputError(f"mask for {pid} has shape {mask.shape}, weights {expected}")
        raw = np.packbits(mask.ravel(), bitorder="little").tobytes()
        mask_table[f"{pid}.mask"] = {
            "shape": list(mask.shape),
            "offset": offset,
            "nbytes": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "live_heads": [layer.live_heads for layer in model.layers],
        "live_ff_channels": [layer.live_ff_channels for layer in model.layers],
        "tensors": tensor_table,
        "masks": mask_table,
    }
    header["header_sha256"] = _header_digest(header)
    header_json = json.dumps(header, sort_keys=True).encode()
    head = CHECKPOINT_MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header_json))
    return head + header_json + b"".join(chunks)


def save_checkpoint(path, model: LanguageModel, masks=None) -> None:
    atomic_write_bytes(path, checkpoint_bytes(model, masks))


def _parse_header(data: bytes) -> tuple[dict, bytes]:
    if len(data) < 16 or data[:4] != CHECKPOINT_MAGIC:
        raise InputError("not a checkpoint file (bad magic)")
    version, header_len = struct.unpack("<IQ", data[4:16])
    if version != FORMAT_VERSION:
        raise InputError(f"unsupported checkpoint format version {version}")
    if len(data) < 16 + header_len:
        raise InputError("checkpoint truncated inside header")
    try:
        header = json.loads(data[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InputError(f"checkpoint header is not valid JSON: {e}") from e
    stored = header.get("header_sha256")
    if stored != _header_digest(header):
        raise IntegrityError("checkpoint header hash mismatch")
    return header, data[16 + header_len :]


def _check_extents(table: dict, payload_len: int) -> None:
    spans = sorted((e["offset"], e["offset"] + e["nbytes"]) for e in table.values())
    prev_end = 0
    for start, end in spans:
        if start < prev_end:
            raise InputError("checkpoint payload extents overlap")
        if end > payload_len:
            raise InputError("checkpoint payload extent out of bounds")
        prev_end = end


def checkpoint_from_bytes(data: bytes) -> tuple[LanguageModel, dict[ProjectionId, np.ndarray]]:
    header, payload = _parse_header(data)
    cfg = ModelConfig.from_dict(header["config"])
    _check_extents({**header["tensors"], **header["masks"]}, len(payload))

    def tensor(name: str) -> np.ndarray:
        if name not in header["tensors"]:
            raise InputError(f"checkpoint is missing tensor {name}")
        entry = header["tensors"][name]
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
        if not np.all(np.isfinite(arr)):
            raise InputError(f"tensor {name} holds non-finite values")
        return arr

    layers = []
    for n in range(cfg.n_layers):
        layers.append(
            DecoderLayer(
                q=tensor(f"layers.{n}.q"),
                k=tensor(f"layers.{n}.k"),
                v=tensor(f"layers.{n}.v"),
                o=tensor(f"layers.{n}.o"),
                g=tensor(f"layers.{n}.g"),
                u=tensor(f"layers.{n}.u"),
                d=tensor(f"layers.{n}.d"),
                attn_norm_gain=tensor(f"layers.{n}.attn_norm"),
                ffn_norm_gain=tensor(f"layers.{n}.ffn_norm"),
                live_heads=list(header["live_heads"][n]),
                live_ff_channels=list(header["live_ff_channels"][n]),
            )
        )
    model = LanguageModel(
        config=cfg,
        embedding=tensor("embedding"),
        layers=layers,
        final_norm_gain=tensor("final_norm"),
        lm_head=tensor("lm_head"),
    )
    model.validate()

    masks: dict[ProjectionId, np.ndarray] = {}
    for name, entry in header["masks"].items():
        base = name.removesuffix(".mask")
        parts = base.split(".")
        pid = ProjectionId(int(parts[1]), parts[2])
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        count = int(np.prod(entry["shape"]))
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[:count]
        masks[pid] = bits.astype(bool).reshape(entry["shape"])
        if masks[pid].shape != model.projection(pid).shape:
            raise IntegrityError(f"mask {name} does not match its weight shape")
    return model, masks


def load_checkpoint(path) -> tuple[LanguageModel, dict[ProjectionId, np.ndarray]]:
    with open(path, "rb") as f:
        return checkpoint_from_bytes(f.read())


def save_stream(path, ids, vocab_size: int) -> None:
    ids = np.asarray(ids)
    if ids.ndim != 1 or ids.size == 0:
        raise InputError("token stream must be a nonempty 1-D array")
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise InputError("token id out of vocabulary range")
    head = STREAM_MAGIC + struct.pack("<IQ", int(vocab_size), int(ids.size))
    atomic_write_bytes(path, head + np.ascontiguousarray(ids, dtype="<u4").tobytes())


def load_stream(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16 or data[:4] != STREAM_MAGIC:
        raise InputError("not a token stream file (bad magic)")
    vocab_size, count = struct.unpack("<IQ", data[4:16])
    payload = data[16:]
    if len(payload) != count * 4:
        raise InputError("token stream truncated")
    ids = np.frombuffer(payload, dtype="<u4").astype(np.int64)
    if ids.size and ids.max() >= vocab_size:
        raise InputError("token id out of vocabulary range")
    return ids, int(vocab_size)


def _norms_to_dict(norms: ActivationNorms) -> dict:
    return {
        "token_count": norms.token_count,
        "vectors": {str(pid): norms.norms[pid].tolist() for pid in sorted(norms.norms)},
    }


def _norms_from_dict(d: dict) -> ActivationNorms:
    vectors = {}
    for name, values in d["vectors"].items():
        parts = name.split(".")
        vectors[ProjectionId(int(parts[1]), parts[2])] = np.asarray(values, dtype=np.float32)
    return ActivationNorms(norms=vectors, token_count=int(d["token_count"]))


def rank_json(rank: GlobalRank, norms: ActivationNorms | None = None) -> str:
    doc = rank.to_dict()
    if norms is not None:
        doc["activation_norms"] = _norms_to_dict(norms)
    return json.dumps(doc, sort_keys=True, indent=1)


def save_rank(path, rank: GlobalRank, norms: ActivationNorms | None = None) -> None:
    atomic_write_text(path, rank_json(rank, norms))


def load_rank(path) -> tuple[GlobalRank, ActivationNorms | None]:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise InputError(f"rank file is not valid JSON: {e}") from e
    norms = _norms_from_dict(doc["activation_norms"]) if "activation_norms" in doc else None
    return GlobalRank.from_dict(doc), norms


def plan_json(plan: PruningPlan, norms: ActivationNorms | None = None) -> str:
    doc = plan.to_dict()
    if norms is not None:
        doc["activation_norms"] = _norms_to_dict(norms)
    return json.dumps(doc, sort_keys=True, indent=1)


def save_plan(path, plan: PruningPlan, norms: ActivationNorms | None = None) -> None:
    atomic_write_text(path, plan_json(plan, norms))


def load_plan(path) -> tuple[PruningPlan, ActivationNorms | None]:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise InputError(f"plan file is not valid JSON: {e}") from e
    norms = _norms_from_dict(doc["activation_norms"]) if "activation_norms" in doc else None
    return PruningPlan.from_dict(doc), norms
