"""Outlier-based importance ranking of projections.

A projection's weight metric multiplies each weight magnitude by the l2 norm
of the input channel it reads, accumulated over a calibration stream. Entries
far above the projection's own mean metric are outliers; projections that
hold more outliers carry more of the model's quality and should be pruned
less. The normalized matrix of per-projection outlier ratios is the global
rank that downstream target allocation modulates.

A layer-granularity variant (outliers counted against the whole layer's mean)
is kept as the coarser baseline.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ShapeError, StateError
from .model import (
    PROJECTION_KINDS,
    ActivationNorms,
    LanguageModel,
    ProjectionId,
    fingerprint,
)

DEFAULT_ALPHA = 5.0


def weight_metric(weights: np.ndarray, input_norms: np.ndarray) -> np.ndarray:
    """|weight| times the l2 norm of its input channel, in float64."""
    weights = np.asarray(weights)
    input_norms = np.asarray(input_norms)
    if weights.ndim != 2 or input_norms.ndim != 1:
        raise ShapeError("weights must be 2-D and input_norms 1-D")
    if input_norms.shape[0] != weights.shape[1]:
        raise ShapeError(
            f"norms length {input_norms.shape[0]} != weight columns {weights.shape[1]}"
        )
    return np.abs(weights.astype(np.float64)) * input_norms.astype(np.float64)[None, :]


def count_projection_outliers(metric: np.ndarray, alpha: float) -> int:
    """Entries exceeding alpha times the projection's own mean metric."""
    if alpha <= 0:
        raise InputError("alpha must be positive")
    metric = np.asarray(metric, dtype=np.float64)
    return int(np.count_nonzero(metric > alpha * metric.mean()))


def count_layer_outliers(metrics_by_kind: dict[str, np.ndarray], alpha: float) -> int:
    """Entries exceeding alpha times the mean metric of the whole layer."""
    if alpha <= 0:
        raise InputError("alpha must be positive")
    missing = [k for k in PROJECTION_KINDS if k not in metrics_by_kind]
    if missing:
        raise InputError(f"layer metrics missing projections: {missing}")
    flat = np.concatenate(
        [np.asarray(metrics_by_kind[k], dtype=np.float64).ravel() for k in PROJECTION_KINDS]
    )
    return int(np.count_nonzero(flat > alpha * flat.mean()))


def projection_metrics(
    model: LanguageModel, norms: ActivationNorms
) -> dict[ProjectionId, np.ndarray]:
    """Weight metric for every projection of the model."""
    out = {}
    for pid in model.projection_ids():
        out[pid] = weight_metric(model.projection(pid), norms.for_projection(pid))
    return out


@dataclass
class ProjectionRank:
    projection: ProjectionId
    outlier_count: int
    param_count: int

    @property
    def rank(self) -> float:
        return 100.0 * self.outlier_count / self.param_count


@dataclass
class CalibrationInfo:
    sample_count: int
    seq_len: int
    corpus: str

    def to_dict(self) -> dict:
        return {"samples": self.sample_count, "seq_len": self.seq_len, "corpus": self.corpus}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationInfo":
        return cls(sample_count=d["samples"], seq_len=d["seq_len"], corpus=d["corpus"])


def normalize_ranks(raw: np.ndarray) -> tuple[np.ndarray, bool]:
    """Scale raw outlier ratios to mean 1; all-zero input falls back to ones."""
    raw = np.asarray(raw, dtype=np.float64)
    mean = raw.mean()
    if mean <= 0.0:
        return np.ones_like(raw), True
    return raw / mean, False


@dataclass
class GlobalRank:
    """Normalized per-projection outlier ranks plus provenance metadata."""

    alpha: float
    entries: np.ndarray  # (n_layers, 7), mean 1
    raw_ranks: np.ndarray  # (n_layers, 7), percent of outlier parameters
    param_counts: np.ndarray  # (n_layers, 7), int64
    model_fingerprint: str
    calibration: CalibrationInfo
    degenerate: bool = False
    granularity: str = "projection"

    def validate(self) -> None:
        if self.entries.ndim != 2 or self.entries.shape[1] != len(PROJECTION_KINDS):
            raise ShapeError(f"rank entries must be N x 7, got {self.entries.shape}")
        if self.entries.shape != self.raw_ranks.shape != self.param_counts.shape:
            raise ShapeError("rank matrices must share one shape")
        if np.any(self.entries < 0):
            raise InputError("rank entries must be nonnegative")
        if abs(self.entries.mean() - 1.0) > 1e-9:
            raise InputError(f"rank entries mean {self.entries.mean()!r} != 1")

    def entry(self, pid: ProjectionId) -> float:
        return float(self.entries[pid.layer, PROJECTION_KINDS.index(pid.kind)])

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "granularity": self.granularity,
            "degenerate": self.degenerate,
            "calibration": self.calibration.to_dict(),
            "model_fingerprint": self.model_fingerprint,
            "entries": self.entries.tolist(),
            "raw_outlier_ratios": self.raw_ranks.tolist(),
            "param_counts": self.param_counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GlobalRank":
        rank = cls(
            alpha=float(d["alpha"]),
            entries=np.asarray(d["entries"], dtype=np.float64),
            raw_ranks=np.asarray(d["raw_outlier_ratios"], dtype=np.float64),
            param_counts=np.asarray(d["param_counts"], dtype=np.int64),
            model_fingerprint=d["model_fingerprint"],
            calibration=CalibrationInfo.from_dict(d["calibration"]),
            degenerate=bool(d["degenerate"]),
            granularity=d.get("granularity", "projection"),
        )
        rank.validate()
        return rank

    def digest(self) -> str:
        """Content hash of the rank, recorded by plans built from it."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class LayerRank:
    """Layer-granularity outlier ratios (the coarser pruning baseline)."""

    alpha: float
    ratios: np.ndarray  # (n_layers,), percent of outlier parameters
    param_counts: np.ndarray  # (n_layers, 7), int64
    model_fingerprint: str
    calibration: CalibrationInfo
    degenerate: bool = field(init=False, default=False)
    entries: np.ndarray = field(init=False, default=None)

    def __post_init__(self):
        per_layer, degenerate = normalize_ranks(self.ratios)
        self.degenerate = degenerate
        self.entries = np.repeat(per_layer[:, None], len(PROJECTION_KINDS), axis=1)

    def as_global_rank(self) -> GlobalRank:
        """Expand to projection shape: every projection inherits its layer's rank."""
        return GlobalRank(
            alpha=self.alpha,
            entries=self.entries.copy(),
            raw_ranks=np.repeat(self.ratios[:, None], len(PROJECTION_KINDS), axis=1),
            param_counts=self.param_counts.copy(),
            model_fingerprint=self.model_fingerprint,
            calibration=self.calibration,
            degenerate=self.degenerate,
            granularity="layer",
        )


def uniform_rank(model: LanguageModel, calibration: CalibrationInfo | None = None) -> GlobalRank:
    """All-ones rank: target allocation reduces to uniform (global) pruning."""
    shape = (model.config.n_layers, len(PROJECTION_KINDS))
    counts = _param_count_matrix(model)
    return GlobalRank(
        alpha=0.0,
        entries=np.ones(shape),
        raw_ranks=np.zeros(shape),
        param_counts=counts,
        model_fingerprint=fingerprint(model),
        calibration=calibration or CalibrationInfo(0, 0, "none"),
        degenerate=True,
        granularity="global",
    )


def _param_count_matrix(model: LanguageModel) -> np.ndarray:
    counts = np.zeros((model.config.n_layers, len(PROJECTION_KINDS)), dtype=np.int64)
    for pid in model.projection_ids():
        counts[pid.layer, PROJECTION_KINDS.index(pid.kind)] = model.projection(pid).size
    return counts


def _require_norms(model: LanguageModel, norms: ActivationNorms) -> None:
    if norms.token_count < 1:
        raise StateError("activation norms cover no calibration tokens")
    for pid in model.projection_ids():
        vec = norms.for_projection(pid)
        if vec.shape[0] != model.projection(pid).shape[1]:
            raise ShapeError(f"norms for {pid} have length {vec.shape[0]}")


def build_global_rank(
    model: LanguageModel,
    norms: ActivationNorms,
    alpha: float = DEFAULT_ALPHA,
    calibration: CalibrationInfo | None = None,
) -> GlobalRank:
    """Rank every projection by its outlier ratio and normalize to mean 1.

    Deterministic for a fixed (model, calibration stream, alpha); the model
    fingerprint and calibration metadata are recorded so one rank can be
    reused for any number of pruning levels.
    """
    if alpha <= 0:
        raise InputError("alpha must be positive")
    _require_norms(model, norms)
    n_layers = model.config.n_layers
    raw = np.zeros((n_layers, len(PROJECTION_KINDS)), dtype=np.float64)
    counts = np.zeros((n_layers, len(PROJECTION_KINDS)), dtype=np.int64)
    for pid in model.projection_ids():
        m = PROJECTION_KINDS.index(pid.kind)
        metric = weight_metric(model.projection(pid), norms.for_projection(pid))
        outliers = count_projection_outliers(metric, alpha)
        counts[pid.layer, m] = metric.size
        raw[pid.layer, m] = 100.0 * outliers / metric.size
    entries, degenerate = normalize_ranks(raw)
    rank = GlobalRank(
        alpha=float(alpha),
        entries=entries,
        raw_ranks=raw,
        param_counts=counts,
        model_fingerprint=fingerprint(model),
        calibration=calibration or CalibrationInfo(0, norms.token_count, "unspecified"),
        degenerate=degenerate,
    )
    rank.validate()
    return rank


def build_layer_rank(
    model: LanguageModel,
    norms: ActivationNorms,
    alpha: float = DEFAULT_ALPHA,
    calibration: CalibrationInfo | None = None,
) -> LayerRank:
    """Outlier ratios at layer granularity: one ratio per decoder layer."""
    if alpha <= 0:
        raise InputError("alpha must be positive")
    _require_norms(model, norms)
    n_layers = model.config.n_layers
    ratios = np.zeros(n_layers, dtype=np.float64)
    for n in range(n_layers):
        metrics = {
            kind: weight_metric(
                model.projection(ProjectionId(n, kind)),
                norms.for_projection(ProjectionId(n, kind)),
            )
            for kind in PROJECTION_KINDS
        }
        total = sum(m.size for m in metrics.values())
        ratios[n] = 100.0 * count_layer_outliers(metrics, alpha) / total
    return LayerRank(
        alpha=float(alpha),
        ratios=ratios,
        param_counts=_param_count_matrix(model),
        model_fingerprint=fingerprint(model),
        calibration=calibration or CalibrationInfo(0, norms.token_count, "unspecified"),
    )
