"""One-shot LLaMA-family checkpoint conversion.

Reads a Hugging Face model directory (config.json plus model.safetensors or
pytorch_model.bin), checks the architecture is one the target runtime can
execute (full multi-head attention, no biases), casts everything to 32-bit
float, and emits a single-file checkpoint plus the manifest that records the
mapping and the converted model's fingerprint.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .formats import atomic_write_bytes, checkpoint_bytes, model_fingerprint
from .manifest import ConversionError, ConversionManifest, default_tensor_map


def _load_config(src_dir: str) -> dict:
    path = os.path.join(src_dir, "config.json")
    if not os.path.exists(path):
        raise ConversionError(f"{src_dir} has no config.json")
    with open(path) as f:
        return json.load(f)


def _load_tensors(src_dir: str) -> dict[str, np.ndarray]:
    st_path = os.path.join(src_dir, "model.safetensors")
    if os.path.exists(st_path):
        from safetensors.numpy import load_file

        try:
            return load_file(st_path)
        except (TypeError, ValueError):
            # numpy backend rejects some dtypes (e.g. bf16); fall back to torch
            from safetensors.torch import load_file as load_torch

            return {k: v.float().numpy() for k, v in load_torch(st_path).items()}
    bin_path = os.path.join(src_dir, "pytorch_model.bin")
    if os.path.exists(bin_path):
        import torch

        state = torch.load(bin_path, map_location="cpu", weights_only=True)
        return {k: v.float().numpy() for k, v in state.items()}
    raise ConversionError(f"{src_dir} has neither model.safetensors nor pytorch_model.bin")


def _target_config(cfg: dict) -> dict:
    if cfg.get("model_type") != "llama":
        raise ConversionError(f"unsupported architecture {cfg.get('model_type')!r}")
    heads = cfg["num_attention_heads"]
    kv_heads = cfg.get("num_key_value_heads", heads)
    if kv_heads != heads:
        raise ConversionError(
            f"grouped-query attention is unsupported (num_key_value_heads="
            f"{kv_heads} != num_attention_heads={heads}); the runtime expects "
            "full per-head key/value projections"
        )
    hidden = cfg["hidden_size"]
    head_dim = cfg.get("head_dim") or hidden // heads
    if heads * head_dim != hidden:
        raise ConversionError("num_attention_heads * head_dim must equal hidden_size")
    if head_dim % 2 != 0:
        raise ConversionError("head_dim must be even for rotary position encoding")
    if cfg.get("attention_bias") or cfg.get("mlp_bias"):
        raise ConversionError("projection biases are unsupported")
    return {
        "n_layers": cfg["num_hidden_layers"],
        "d_model": hidden,
        "n_heads": heads,
        "head_dim": head_dim,
        "d_ff": cfg["intermediate_size"],
        "vocab_size": cfg["vocab_size"],
        "max_seq_len": cfg["max_position_embeddings"],
        "norm_eps": cfg.get("rms_norm_eps", 1e-5),
        "rope_base": float(cfg.get("rope_theta", 10000.0)),
    }


def convert_model(
    src_dir: str,
    manifest: ConversionManifest | None = None,
    out_path: str | None = None,
) -> tuple[bytes, ConversionManifest]:
    """Convert a source checkpoint directory; returns (bytes, manifest)."""
    src_cfg = _load_config(src_dir)
    target_cfg = _target_config(src_cfg)
    tied = bool(src_cfg.get("tie_word_embeddings", False))

    source = _load_tensors(src_dir)
    if tied and "lm_head.weight" in source:
        tied = False  # weights are materialized; no duplication needed
    if manifest is None:
        manifest = ConversionManifest(
            source_model_id=os.path.basename(os.path.normpath(src_dir)),
            tensor_map=default_tensor_map(target_cfg["n_layers"], tied),
        )
    manifest.validate(target_cfg["n_layers"])

    tensors = {}
    for target, src_name in manifest.tensor_map.items():
        if src_name not in source:
            raise ConversionError(f"source tensor {src_name!r} (for {target}) not found")
        tensors[target] = np.asarray(source[src_name], dtype=np.float32)
    blob = checkpoint_bytes(target_cfg, tensors)
    manifest.converted_fingerprint = model_fingerprint(target_cfg, tensors)
    if out_path:
        atomic_write_bytes(out_path, blob)
    return blob, manifest
