"""Decoder transformer runtime with activation taps for calibration.

The architecture is the usual pre-norm decoder stack: RMS-normalized
residual blocks, rotary position encoding on query/key, multi-head causal
attention, and a SiLU-gated feed-forward. Each layer owns seven weight
matrices, addressed by the single-letter kinds q, k, v, o (attention) and
g, u, d (feed-forward). Structured pruning may drop attention heads or
feed-forward channels; the surviving indices are tracked per layer in
live_heads / live_ff_channels and the forward pass works off the actual
tensor shapes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .errors import InputError, ShapeError, StateError

PROJECTION_KINDS = ("q", "k", "v", "o", "g", "u", "d")
ATTENTION_KINDS = ("q", "k", "v", "o")
FFN_KINDS = ("g", "u", "d")


@dataclass(frozen=True, order=True)
class ProjectionId:
    """Address of one projection: layer index plus kind letter."""

    layer: int
    kind: str

    def __post_init__(self):
        if self.kind not in PROJECTION_KINDS:
            raise InputError(f"unknown projection kind {self.kind!r}")
        if self.layer < 0:
            raise InputError("layer index must be nonnegative")

    def __str__(self) -> str:
        return f"layers.{self.layer}.{self.kind}"


@dataclass
class ModelConfig:
    n_layers: int
    d_model: int
    n_heads: int
    head_dim: int
    d_ff: int
    vocab_size: int
    max_seq_len: int
    norm_eps: float = 1e-5
    rope_base: float = 10000.0

    def validate(self) -> None:
        if self.n_layers < 0:
            raise InputError("n_layers must be >= 0")
        if min(self.d_model, self.n_heads, self.head_dim, self.d_ff, self.vocab_size) < 1:
            raise InputError("model dimensions must be positive")
        if self.max_seq_len < 1:
            raise InputError("max_seq_len must be >= 1")
        if self.head_dim % 2 != 0:
            raise InputError("head_dim must be even (rotary encoding pairs channels)")
        if self.n_heads * self.head_dim != self.d_model:
            raise InputError(
                f"n_heads*head_dim = {self.n_heads * self.head_dim} != d_model = {self.d_model}"
            )

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "head_dim": self.head_dim,
            "d_ff": self.d_ff,
            "vocab_size": self.vocab_size,
            "max_seq_len": self.max_seq_len,
            "norm_eps": self.norm_eps,
            "rope_base": self.rope_base,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass
class DecoderLayer:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    o: np.ndarray
    g: np.ndarray
    u: np.ndarray
    d: np.ndarray
    attn_norm_gain: np.ndarray
    ffn_norm_gain: np.ndarray
    live_heads: list[int] = field(default_factory=list)
    live_ff_channels: list[int] = field(default_factory=list)

    def projection(self, kind: str) -> np.ndarray:
        if kind not in PROJECTION_KINDS:
            raise InputError(f"unknown projection kind {kind!r}")
        return getattr(self, kind)

    def set_projection(self, kind: str, weights: np.ndarray) -> None:
        if kind not in PROJECTION_KINDS:
            raise InputError(f"unknown projection kind {kind!r}")
        setattr(self, kind, np.ascontiguousarray(weights, dtype=np.float32))


@dataclass
class LanguageModel:
    config: ModelConfig
    embedding: np.ndarray
    layers: list[DecoderLayer]
    final_norm_gain: np.ndarray
    lm_head: np.ndarray

    def projection(self, pid: ProjectionId) -> np.ndarray:
        return self.layers[pid.layer].projection(pid.kind)

    def set_projection(self, pid: ProjectionId, weights: np.ndarray) -> None:
        self.layers[pid.layer].set_projection(pid.kind, weights)

    def projection_ids(self):
        for n in range(len(self.layers)):
            for kind in PROJECTION_KINDS:
                yield ProjectionId(n, kind)

    def param_count(self) -> int:
        total = self.embedding.size + self.lm_head.size + self.final_norm_gain.size
        for layer in self.layers:
            for kind in PROJECTION_KINDS:
                total += layer.projection(kind).size
            total += layer.attn_norm_gain.size + layer.ffn_norm_gain.size
        return int(total)

    def nonzero_param_count(self) -> int:
        total = (
            np.count_nonzero(self.embedding)
            + np.count_nonzero(self.lm_head)
            + np.count_nonzero(self.final_norm_gain)
        )
        for layer in self.layers:
            for kind in PROJECTION_KINDS:
                total += np.count_nonzero(layer.projection(kind))
            total += np.count_nonzero(layer.attn_norm_gain)
            total += np.count_nonzero(layer.ffn_norm_gain)
        return int(total)

    def validate(self) -> None:
        cfg = self.config
        cfg.validate()
        if len(self.layers) != cfg.n_layers:
            raise ShapeError(f"{len(self.layers)} layers but config says {cfg.n_layers}")
        if self.embedding.shape != (cfg.vocab_size, cfg.d_model):
            raise ShapeError(f"embedding shape {self.embedding.shape} invalid")
        if self.lm_head.shape != (cfg.vocab_size, cfg.d_model):
            raise ShapeError(f"lm_head shape {self.lm_head.shape} invalid")
        if self.final_norm_gain.shape != (cfg.d_model,):
            raise ShapeError("final_norm_gain length must equal d_model")
        for n, layer in enumerate(self.layers):
            if not layer.live_heads or not layer.live_ff_channels:
                raise ShapeError(f"layer {n} has no live heads or channels")
            attn_dim = len(layer.live_heads) * cfg.head_dim
            ff_dim = len(layer.live_ff_channels)
            expect = {
                "q": (attn_dim, cfg.d_model),
                "k": (attn_dim, cfg.d_model),
                "v": (attn_dim, cfg.d_model),
                "o": (cfg.d_model, attn_dim),
                "g": (ff_dim, cfg.d_model),
                "u": (ff_dim, cfg.d_model),
                "d": (cfg.d_model, ff_dim),
            }
            for kind, shape in expect.items():
                got = layer.projection(kind).shape
                if got != shape:
                    raise ShapeError(f"layer {n} projection {kind} is {got}, expected {shape}")


def original_projection_shape(cfg: ModelConfig, kind: str) -> tuple[int, int]:
    """Dense (unpruned) shape of a projection kind under a config."""
    attn_dim = cfg.n_heads * cfg.head_dim
    shapes = {
        "q": (attn_dim, cfg.d_model),
        "k": (attn_dim, cfg.d_model),
        "v": (attn_dim, cfg.d_model),
        "o": (cfg.d_model, attn_dim),
        "g": (cfg.d_ff, cfg.d_model),
        "u": (cfg.d_ff, cfg.d_model),
        "d": (cfg.d_model, cfg.d_ff),
    }
    if kind not in shapes:
        raise InputError(f"unknown projection kind {kind!r}")
    return shapes[kind]


def random_model(config: ModelConfig, seed: int = 0, scale: float = 0.05) -> LanguageModel:
    """Gaussian-initialized model, deterministic for a fixed seed."""
    config.validate()
    rng = np.random.default_rng(seed)

    def w(shape):
        return (rng.standard_normal(shape) * scale).astype(np.float32)

    layers = []
    for _ in range(config.n_layers):
        layers.append(
            DecoderLayer(
                q=w(original_projection_shape(config, "q")),
                k=w(original_projection_shape(config, "k")),
                v=w(original_projection_shape(config, "v")),
                o=w(original_projection_shape(config, "o")),
                g=w(original_projection_shape(config, "g")),
                u=w(original_projection_shape(config, "u")),
                d=w(original_projection_shape(config, "d")),
                attn_norm_gain=np.ones(config.d_model, dtype=np.float32),
                ffn_norm_gain=np.ones(config.d_model, dtype=np.float32),
                live_heads=list(range(config.n_heads)),
                live_ff_channels=list(range(config.d_ff)),
            )
        )
    model = LanguageModel(
        config=config,
        embedding=w((config.vocab_size, config.d_model)),
        layers=layers,
        final_norm_gain=np.ones(config.d_model, dtype=np.float32),
        lm_head=w((config.vocab_size, config.d_model)),
    )
    model.validate()
    return model


def clone_model(model: LanguageModel) -> LanguageModel:
    layers = [
        DecoderLayer(
            q=layer.q.copy(),
            k=layer.k.copy(),
            v=layer.v.copy(),
            o=layer.o.copy(),
            g=layer.g.copy(),
            u=layer.u.copy(),
            d=layer.d.copy(),
            attn_norm_gain=layer.attn_norm_gain.copy(),
            ffn_norm_gain=layer.ffn_norm_gain.copy(),
            live_heads=list(layer.live_heads),
            live_ff_channels=list(layer.live_ff_channels),
        )
        for layer in model.layers
    ]
    return LanguageModel(
        config=ModelConfig(**model.config.to_dict()),
        embedding=model.embedding.copy(),
        layers=layers,
        final_norm_gain=model.final_norm_gain.copy(),
        lm_head=model.lm_head.copy(),
    )


def fingerprint(model: LanguageModel) -> str:
    """Content hash over config, live indices, and all weight bytes."""
    h = hashlib.sha256()
    h.update(json.dumps(model.config.to_dict(), sort_keys=True).encode())
    for layer in model.layers:
        h.update(json.dumps([layer.live_heads, layer.live_ff_channels]).encode())
    h.update(np.ascontiguousarray(model.embedding, dtype="<f4").tobytes())
    for layer in model.layers:
        for kind in PROJECTION_KINDS:
            h.update(np.ascontiguousarray(layer.projection(kind), dtype="<f4").tobytes())
        h.update(np.ascontiguousarray(layer.attn_norm_gain, dtype="<f4").tobytes())
        h.update(np.ascontiguousarray(layer.ffn_norm_gain, dtype="<f4").tobytes())
    h.update(np.ascontiguousarray(model.final_norm_gain, dtype="<f4").tobytes())
    h.update(np.ascontiguousarray(model.lm_head, dtype="<f4").tobytes())
    return h.hexdigest()


class NormAccumulator:
    """Running per-channel sums of squares of projection inputs.

    One accumulator can absorb any number of forward passes; independent
    accumulators (e.g. one per worker thread) merge by adding their sums.
    """

    def __init__(self):
        self._sums: dict[ProjectionId, np.ndarray] = {}
        self._tokens = 0

    @property
    def token_count(self) -> int:
        return self._tokens

    def record(self, pid: ProjectionId, inputs: np.ndarray) -> None:
        sums = np.sum(np.square(inputs, dtype=np.float64), axis=0)
        if pid in self._sums:
            self._sums[pid] += sums
        else:
            self._sums[pid] = sums

    def count_tokens(self, n: int) -> None:
        self._tokens += int(n)

    def merge(self, other: "NormAccumulator") -> None:
        for pid, sums in other._sums.items():
            if pid in self._sums:
                self._sums[pid] += sums
            else:
                self._sums[pid] = sums.copy()
        self._tokens += other._tokens

    def sums_of_squares(self) -> dict[ProjectionId, np.ndarray]:
        return {pid: s.copy() for pid, s in self._sums.items()}


@dataclass
class ActivationNorms:
    """Per-projection l2 norms of input channels over a calibration stream."""

    norms: dict[ProjectionId, np.ndarray]
    token_count: int

    def for_projection(self, pid: ProjectionId) -> np.ndarray:
        if pid not in self.norms:
            raise InputError(f"no activation norms recorded for {pid}")
        return self.norms[pid]


def finalize_norms(sink: NormAccumulator, token_count: int | None = None) -> ActivationNorms:
    """Turn accumulated sums of squares into per-channel norms."""
    if sink.token_count == 0 or not sink._sums:
        raise StateError("no calibration tokens accumulated")
    norms = {pid: np.sqrt(s).astype(np.float32) for pid, s in sink._sums.items()}
    return ActivationNorms(norms=norms, token_count=int(token_count or sink.token_count))


def _rope_tables(seq_len: int, head_dim: int, base: float) -> tuple[np.ndarray, np.ndarray]:
    half = head_dim // 2
    inv_freq = base ** (-np.arange(0, half, dtype=np.float64) * 2.0 / head_dim)
    angles = np.arange(seq_len, dtype=np.float64)[:, None] * inv_freq[None, :]
    cos = np.concatenate([np.cos(angles), np.cos(angles)], axis=1).astype(np.float32)
    sin = np.concatenate([np.sin(angles), np.sin(angles)], axis=1).astype(np.float32)
    return cos, sin


def _rotate_half(x: np.ndarray) -> np.ndarray:
    half = x.shape[-1] // 2
    return np.concatenate([-x[..., half:], x[..., :half]], axis=-1)


def _check_tokens(model: LanguageModel, tokens) -> np.ndarray:
    ids = np.asarray(tokens)
    if ids.ndim != 1 or ids.size == 0:
        raise InputError("tokens must be a nonempty 1-D sequence")
    if not np.issubdtype(ids.dtype, np.integer):
        raise InputError("token ids must be integers")
    if ids.min() < 0 or ids.max() >= model.config.vocab_size:
        raise InputError("token id out of vocabulary range")
    if ids.size > model.config.max_seq_len:
        raise InputError(f"sequence length {ids.size} exceeds max {model.config.max_seq_len}")
    return ids.astype(np.int64)


def _forward(model: LanguageModel, tokens, sink: NormAccumulator | None) -> np.ndarray:
    cfg = model.config
    ids = _check_tokens(model, tokens)
    seq = ids.size
    cos, sin = _rope_tables(seq, cfg.head_dim, cfg.rope_base)
    inv_scale = 1.0 / np.sqrt(np.float32(cfg.head_dim))
    causal = np.triu(np.full((seq, seq), -np.inf, dtype=np.float32), k=1)

    x = model.embedding[ids]
    for n, layer in enumerate(model.layers):
        heads = len(layer.live_heads)
        h = tensor.rms_norm_rows(x, layer.attn_norm_gain, cfg.norm_eps)
        if sink is not None:
            for kind in ("q", "k", "v"):
                sink.record(ProjectionId(n, kind), h)
        q = (h @ layer.q.T).reshape(seq, heads, cfg.head_dim).transpose(1, 0, 2)
        k = (h @ layer.k.T).reshape(seq, heads, cfg.head_dim).transpose(1, 0, 2)
        v = (h @ layer.v.T).reshape(seq, heads, cfg.head_dim).transpose(1, 0, 2)
        q = q * cos + _rotate_half(q) * sin
        k = k * cos + _rotate_half(k) * sin
        scores = (q @ k.transpose(0, 2, 1)) * inv_scale + causal
        probs = tensor.softmax_rows(scores.reshape(heads * seq, seq)).reshape(heads, seq, seq)
        ctx = (probs @ v).transpose(1, 0, 2).reshape(seq, heads * cfg.head_dim)
        if sink is not None:
            sink.record(ProjectionId(n, "o"), ctx)
        x = x + ctx @ layer.o.T

        h2 = tensor.rms_norm_rows(x, layer.ffn_norm_gain, cfg.norm_eps)
        if sink is not None:
            sink.record(ProjectionId(n, "g"), h2)
            sink.record(ProjectionId(n, "u"), h2)
        act = tensor.silu(h2 @ layer.g.T) * (h2 @ layer.u.T)
        if sink is not None:
            sink.record(ProjectionId(n, "d"), act)
        x = x + act @ layer.d.T

    final = tensor.rms_norm_rows(x, model.final_norm_gain, cfg.norm_eps)
    logits = final @ model.lm_head.T
    if sink is not None:
        sink.count_tokens(seq)
    return logits


def forward(model: LanguageModel, tokens) -> np.ndarray:
    """Logits for a token sequence, one row per position."""
    return _forward(model, tokens, None)


def forward_with_taps(model: LanguageModel, tokens, sink: NormAccumulator) -> np.ndarray:
    """forward() that also streams every projection's inputs into sink.

    The taps are pure observers: logits are bitwise identical to forward().
    """
    return _forward(model, tokens, sink)
