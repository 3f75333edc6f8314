"""Conversion manifest: what maps where, and how it was cast."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .formats import tensor_names


class ConversionError(ValueError):
    pass


def default_tensor_map(n_layers: int, tied_embeddings: bool) -> dict[str, str]:
    """Target-name -> source-name mapping for stock LLaMA checkpoints."""
    mapping = {
        "embedding": "model.embed_tokens.weight",
        "final_norm": "model.norm.weight",
        "lm_head": "model.embed_tokens.weight" if tied_embeddings else "lm_head.weight",
    }
    for n in range(n_layers):
        prefix = f"model.layers.{n}"
        mapping[f"layers.{n}.q"] = f"{prefix}.self_attn.q_proj.weight"
        mapping[f"layers.{n}.k"] = f"{prefix}.self_attn.k_proj.weight"
        mapping[f"layers.{n}.v"] = f"{prefix}.self_attn.v_proj.weight"
        mapping[f"layers.{n}.o"] = f"{prefix}.self_attn.o_proj.weight"
        mapping[f"layers.{n}.g"] = f"{prefix}.mlp.gate_proj.weight"
        mapping[f"layers.{n}.u"] = f"{prefix}.mlp.up_proj.weight"
        mapping[f"layers.{n}.d"] = f"{prefix}.mlp.down_proj.weight"
        mapping[f"layers.{n}.attn_norm"] = f"{prefix}.input_layernorm.weight"
        mapping[f"layers.{n}.ffn_norm"] = f"{prefix}.post_attention_layernorm.weight"
    return mapping


@dataclass
class ConversionManifest:
    source_model_id: str
    dtype_cast: str = "float32"
    tensor_map: dict[str, str] = field(default_factory=dict)
    corpus: dict = field(default_factory=dict)
    converted_fingerprint: str | None = None

    def validate(self, n_layers: int) -> None:
        required = tensor_names(n_layers)
        missing = [t for t in required if t not in self.tensor_map]
        extra = [t for t in self.tensor_map if t not in required]
        if missing:
            raise ConversionError(f"manifest leaves targets unmapped: {missing[:4]}...")
        if extra:
            raise ConversionError(f"manifest maps unknown targets: {extra[:4]}")
        if self.dtype_cast != "float32":
            raise ConversionError("only the float32 cast policy is supported")

    def to_json(self) -> str:
        return json.dumps(
            {
                "source_model_id": self.source_model_id,
                "dtype_cast": self.dtype_cast,
                "tensor_map": self.tensor_map,
                "corpus": self.corpus,
                "converted_fingerprint": self.converted_fingerprint,
            },
            sort_keys=True,
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "ConversionManifest":
        doc = json.loads(text)
        return cls(
            source_model_id=doc["source_model_id"],
            dtype_cast=doc.get("dtype_cast", "float32"),
            tensor_map=dict(doc.get("tensor_map", {})),
            corpus=dict(doc.get("corpus", {})),
            converted_fingerprint=doc.get("converted_fingerprint"),
        )
