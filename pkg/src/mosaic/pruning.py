"""Target allocation and the three pruning executors.

A single pruning knob p fans out into one sparsity target per projection:
targets modulate linearly against the normalized outlier rank (higher rank,
lower target), stay inside a band of half-width `spread` around p, and are
corrected so their parameter-count-weighted mean equals p exactly. Three
executors consume a plan:

  unstructured  mask the lowest-metric weights to zero, shapes unchanged
  structured    physically remove whole attention heads / feed-forward
                channels, lowest magnitude first
  composite     structured first (a configurable share of each block's
                budget), then masking tops every projection up to its target

Every pruner returns a fresh model plus a ledger of zeroed and removed
parameters per projection; inputs are never mutated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import tensor
from .errors import InputError, IntegrityError, PlanError, ShapeError
from .model import (
    ATTENTION_KINDS,
    FFN_KINDS,
    PROJECTION_KINDS,
    LanguageModel,
    ProjectionId,
    clone_model,
    fingerprint,
    original_projection_shape,
)
from .ranking import GlobalRank

DEFAULT_SPREAD = 0.08
TARGET_CEILING = 0.95
DEFAULT_STRUCTURED_SHARE = 0.5


class PruneCategory(str, Enum):
    UNSTRUCTURED = "unstructured"
    STRUCTURED = "structured"
    COMPOSITE = "composite"


DEVICE_TIERS = ("cloud", "desktop", "soc", "cpu-only")


@dataclass
class DeviceProfile:
    gpu_memory_bytes: int
    has_sparse_accelerator: bool
    tier: str

    def __post_init__(self):
        if self.gpu_memory_bytes <= 0:
            raise InputError("device memory must be positive")
        if self.tier not in DEVICE_TIERS:
            raise InputError(f"tier must be one of {DEVICE_TIERS}")


def select_category(profile: DeviceProfile, model_size_bytes: int) -> PruneCategory:
    """Pick a pruning category for a deployment platform.

    Hosts without any GPU get structured pruning (dense small tensors only).
    Unstructured pruning pays off only where the dense model fits and a
    sparse accelerator exists; everything in between gets composite.
    """
    if profile.tier == "cpu-only":
        return PruneCategory.STRUCTURED
    fits = model_size_bytes <= profile.gpu_memory_bytes
    if fits and profile.has_sparse_accelerator:
        return PruneCategory.UNSTRUCTURED
    return PruneCategory.COMPOSITE


@dataclass
class PruningPlan:
    """Per-projection sparsity targets plus the category to execute."""

    p: float
    spread: float
    targets: np.ndarray  # (n_layers, 7) float64
    category: PruneCategory
    structured_share: float
    rank_fingerprint: str
    model_fingerprint: str
    param_counts: np.ndarray  # (n_layers, 7) int64
    warnings: list[str] = field(default_factory=list)

    def target(self, pid: ProjectionId) -> float:
        return float(self.targets[pid.layer, PROJECTION_KINDS.index(pid.kind)])

    def weighted_mean(self) -> float:
        w = self.param_counts / self.param_counts.sum()
        return float((w * self.targets).sum())

    def band(self) -> tuple[float, float]:
        return max(0.0, self.p - self.spread), min(TARGET_CEILING, self.p + self.spread)

    def validate(self) -> None:
        if not 0.0 <= self.p < 1.0:
            raise InputError(f"p must be in [0, 1), got {self.p}")
        if self.targets.shape != self.param_counts.shape:
            raise ShapeError("targets and param_counts must share a shape")
        lo, hi = self.band()
        if np.any(self.targets < lo - 1e-12) or np.any(self.targets > hi + 1e-12):
            raise InputError("targets escape the spread band")
        if abs(self.weighted_mean() - self.p) > 1e-6:
            raise InputError(
                f"weighted mean target {self.weighted_mean()!r} misses p={self.p!r}"
            )
        if not 0.0 <= self.structured_share <= 1.0:
            raise InputError("structured_share must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "lambda": self.spread,
            "targets": self.targets.tolist(),
            "category": self.category.value,
            "structured_share": self.structured_share,
            "rank_fingerprint": self.rank_fingerprint,
            "model_fingerprint": self.model_fingerprint,
            "param_counts": self.param_counts.tolist(),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PruningPlan":
        plan = cls(
            p=float(d["p"]),
            spread=float(d["lambda"]),
            targets=np.asarray(d["targets"], dtype=np.float64),
            category=PruneCategory(d["category"]),
            structured_share=float(d["structured_share"]),
            rank_fingerprint=d["rank_fingerprint"],
            model_fingerprint=d["model_fingerprint"],
            param_counts=np.asarray(d["param_counts"], dtype=np.int64),
            warnings=list(d.get("warnings", [])),
        )
        plan.validate()
        return plan


def allocate_targets(
    rank: GlobalRank,
    p: float,
    spread: float = DEFAULT_SPREAD,
    model: LanguageModel | None = None,
    category: PruneCategory = PruneCategory.UNSTRUCTURED,
    structured_share: float = DEFAULT_STRUCTURED_SHARE,
) -> PruningPlan:
    """Fan the global knob p out into one target per projection.

    Raw targets fall linearly with normalized rank, scaled so the extreme
    rank lands exactly `spread` away from p, then get clamped to the band
    and shifted (clamp/shift to a fixed point) until the parameter-weighted
    mean equals p. A uniform rank therefore reproduces global pruning.

    When a model is passed, its fingerprint must match the rank's.
    """
    if not 0.0 <= p < 1.0:
        raise InputError(f"p must be in [0, 1), got {p}")
    if spread < 0.0:
        raise InputError("spread must be nonnegative")
    rank.validate()
    if model is not None:
        if fingerprint(model) != rank.model_fingerprint:
            raise IntegrityError("rank was built for a different model")
    counts = rank.param_counts.astype(np.float64)
    if p >= TARGET_CEILING:
        raise PlanError(f"p={p} exceeds the per-projection ceiling {TARGET_CEILING}")
    lo = max(0.0, p - spread)
    hi = min(TARGET_CEILING, p + spread)
    warnings = []
    if p + spread > TARGET_CEILING:
        warnings.append(f"target band clipped by the {TARGET_CEILING} ceiling")
    if rank.degenerate:
        warnings.append("degenerate rank (no outliers): uniform targets, global pruning")

    deviation = rank.entries - 1.0
    max_dev = float(np.max(np.abs(deviation)))
    weights = counts / counts.sum()
    if max_dev == 0.0 or spread == 0.0:
        targets = np.full_like(rank.entries, p)
    else:
        raw = p - spread * deviation / max_dev
        # The weighted mean of clip(raw + delta) is monotone in delta; find
        # the shift that lands on p, then spread any float residue over the
        # entries not pinned at the band edges.
        a = lo - float(raw.max())
        b = hi - float(raw.min())
        for _ in range(200):
            mid = 0.5 * (a + b)
            if float((weights * np.clip(raw + mid, lo, hi)).sum()) < p:
                a = mid
            else:
                b = mid
        targets = np.clip(raw + b, lo, hi)
        for _ in range(20):
            residual = p - float((weights * targets).sum())
            if abs(residual) <= 1e-12:
                break
            free = (targets > lo) & (targets < hi)
            if not free.any():
                break
            targets[free] += residual / float(weights[free].sum())
            targets = np.clip(targets, lo, hi)
    if abs(float((weights * targets).sum()) - p) > 1e-9:
        raise PlanError("no target assignment in the spread band averages to p")

    plan = PruningPlan(
        p=float(p),
        spread=float(spread),
        targets=targets,
        category=category,
        structured_share=float(structured_share),
        rank_fingerprint=rank.digest(),
        model_fingerprint=rank.model_fingerprint,
        param_counts=rank.param_counts.copy(),
        warnings=warnings,
    )
    plan.validate()
    return plan


@dataclass
class ProjectionLedger:
    original_params: int
    zeroed_params: int = 0
    removed_params: int = 0

    @property
    def effective_sparsity(self) -> float:
        return (self.zeroed_params + self.removed_params) / self.original_params


@dataclass
class SparsityLedger:
    projections: dict[ProjectionId, ProjectionLedger]

    @classmethod
    def for_model(cls, model: LanguageModel) -> "SparsityLedger":
        # Originals come from the config's dense shapes, so pruning an
        # already-reduced model keeps accounting against the true baseline.
        projections = {}
        for pid in model.projection_ids():
            original = int(np.prod(original_projection_shape(model.config, pid.kind)))
            projections[pid] = ProjectionLedger(
                original_params=original,
                removed_params=original - int(model.projection(pid).size),
            )
        return cls(projections=projections)

    @property
    def total_original(self) -> int:
        return sum(e.original_params for e in self.projections.values())

    @property
    def total_zeroed(self) -> int:
        return sum(e.zeroed_params for e in self.projections.values())

    @property
    def total_removed(self) -> int:
        return sum(e.removed_params for e in self.projections.values())

    @property
    def global_effective_sparsity(self) -> float:
        return (self.total_zeroed + self.total_removed) / self.total_original

    def to_table(self) -> str:
        lines = [
            f"{'projection':<14}{'params':>10}{'zeroed':>10}{'removed':>10}{'sparsity':>10}"
        ]
        for pid in sorted(self.projections):
            e = self.projections[pid]
            lines.append(
                f"{str(pid):<14}{e.original_params:>10}{e.zeroed_params:>10}"
                f"{e.removed_params:>10}{e.effective_sparsity:>10.4f}"
            )
        lines.append(
            f"{'total':<14}{self.total_original:>10}{self.total_zeroed:>10}"
            f"{self.total_removed:>10}{self.global_effective_sparsity:>10.4f}"
        )
        return "\n".join(lines)


@dataclass
class PrunedModel:
    model: LanguageModel
    masks: dict[ProjectionId, np.ndarray]  # bool, True marks a zeroed weight
    ledger: SparsityLedger
    plan: PruningPlan
    warnings: list[str] = field(default_factory=list)


def _check_metrics(model: LanguageModel, metrics: dict[ProjectionId, np.ndarray]) -> None:
    for pid in model.projection_ids():
        if pid not in metrics:
            raise InputError(f"missing weight metric for {pid}")
        if metrics[pid].shape != model.projection(pid).shape:
            raise ShapeError(
                f"metric shape {metrics[pid].shape} != weights "
                f"{model.projection(pid).shape} for {pid}"
            )


def _mask_k_lowest(
    work: LanguageModel,
    pid: ProjectionId,
    metric: np.ndarray,
    k: int,
    masks: dict[ProjectionId, np.ndarray],
    ledger: SparsityLedger,
) -> None:
    weights = work.projection(pid)
    mask = tensor.lowest_k_mask(metric.ravel(), k).reshape(weights.shape)
    weights[mask] = 0.0
    masks[pid] = mask
    ledger.projections[pid].zeroed_params += int(k)


def unstructured_prune(
    model: LanguageModel,
    plan: PruningPlan,
    metrics: dict[ProjectionId, np.ndarray],
) -> PrunedModel:
    """Zero the floor(target * size) lowest-metric weights of each projection."""
    if plan.category not in (PruneCategory.UNSTRUCTURED, PruneCategory.COMPOSITE):
        raise InputError(f"plan category {plan.category.value} is not mask-based")
    plan.validate()
    _check_metrics(model, metrics)
    work = clone_model(model)
    ledger = SparsityLedger.for_model(work)
    masks: dict[ProjectionId, np.ndarray] = {}
    for pid in work.projection_ids():
        size = work.projection(pid).size
        k = int(math.floor(plan.target(pid) * size))
        _mask_k_lowest(work, pid, metrics[pid], k, masks, ledger)
    return PrunedModel(model=work, masks=masks, ledger=ledger, plan=plan)


def _head_importance(layer) -> np.ndarray:
    heads = len(layer.live_heads)
    head_dim = layer.q.shape[0] // heads
    imp = np.zeros(heads, dtype=np.float64)
    for i in range(heads):
        rows = slice(i * head_dim, (i + 1) * head_dim)
        imp[i] = (
            np.abs(layer.q[rows].astype(np.float64)).sum()
            + np.abs(layer.k[rows].astype(np.float64)).sum()
            + np.abs(layer.v[rows].astype(np.float64)).sum()
            + np.abs(layer.o[:, rows].astype(np.float64)).sum()
        )
    return imp


def _channel_importance(layer) -> np.ndarray:
    return (
        np.abs(layer.g.astype(np.float64)).sum(axis=1)
        + np.abs(layer.u.astype(np.float64)).sum(axis=1)
        + np.abs(layer.d.astype(np.float64)).sum(axis=0)
    )


def _groups_to_remove(
    importance: np.ndarray, fraction: float, total_groups: int
) -> tuple[list[int], bool]:
    """Lowest-importance live-group positions filling the fraction of the
    original group count, ties by index.

    The budget floor(fraction * total_groups) counts groups already gone,
    so re-pruning a reduced model removes nothing new. At least one group
    always survives. Returns (positions, clamped_flag).
    """
    live = importance.size
    want_total = int(math.floor(fraction * total_groups))
    r = max(0, want_total - (total_groups - live))
    clamped = False
    if r >= live:
        r = live - 1
        clamped = True
    order = np.argsort(importance, kind="stable")
    return sorted(int(i) for i in order[:r]), clamped


def _structured_core(
    work: LanguageModel,
    ledger: SparsityLedger,
    block_fractions: dict[int, tuple[float, float]],
    warnings: list[str],
) -> dict[int, tuple[list[int], list[int]]]:
    """Remove head/channel groups in place; returns kept positions per layer."""
    cfg = work.config
    kept: dict[int, tuple[list[int], list[int]]] = {}
    for n, layer in enumerate(work.layers):
        attn_fraction, ffn_fraction = block_fractions[n]
        heads = len(layer.live_heads)
        drop_heads, clamped = _groups_to_remove(
            _head_importance(layer), attn_fraction, cfg.n_heads
        )
        if clamped:
            warnings.append(f"layer {n}: kept the last attention head")
        keep_heads = [i for i in range(heads) if i not in set(drop_heads)]
        rows = np.concatenate(
            [np.arange(i * cfg.head_dim, (i + 1) * cfg.head_dim) for i in keep_heads]
        )
        removed_rows = heads * cfg.head_dim - rows.size
        for kind in ("q", "k", "v"):
            w = layer.projection(kind)
            ledger.projections[ProjectionId(n, kind)].removed_params += removed_rows * w.shape[1]
            layer.set_projection(kind, w[rows, :])
        ledger.projections[ProjectionId(n, "o")].removed_params += layer.o.shape[0] * removed_rows
        layer.set_projection("o", layer.o[:, rows])
        layer.live_heads = [layer.live_heads[i] for i in keep_heads]

        channels = len(layer.live_ff_channels)
        drop_ch, clamped = _groups_to_remove(
            _channel_importance(layer), ffn_fraction, cfg.d_ff
        )
        if clamped:
            warnings.append(f"layer {n}: kept the last feed-forward channel")
        keep_ch = np.array([i for i in range(channels) if i not in set(drop_ch)], dtype=np.int64)
        removed_ch = channels - keep_ch.size
        for kind in ("g", "u"):
            w = layer.projection(kind)
            ledger.projections[ProjectionId(n, kind)].removed_params += removed_ch * w.shape[1]
            layer.set_projection(kind, w[keep_ch, :])
        ledger.projections[ProjectionId(n, "d")].removed_params += layer.d.shape[0] * removed_ch
        layer.set_projection("d", layer.d[:, keep_ch])
        layer.live_ff_channels = [layer.live_ff_channels[i] for i in keep_ch]

        kept[n] = ([int(i) for i in keep_heads], [int(i) for i in keep_ch])
    return kept


def _block_targets(plan: PruningPlan, n: int) -> tuple[float, float]:
    attn_idx = [PROJECTION_KINDS.index(k) for k in ATTENTION_KINDS]
    ffn_idx = [PROJECTION_KINDS.index(k) for k in FFN_KINDS]
    return (
        float(plan.targets[n, attn_idx].mean()),
        float(plan.targets[n, ffn_idx].mean()),
    )


def structured_prune(model: LanguageModel, plan: PruningPlan) -> PrunedModel:
    """Physically remove the least important heads and channels per layer.

    Each block (attention, feed-forward) removes whole groups until the
    removed fraction fills the mean of its projections' targets; group
    granularity means the achieved fraction can undershoot the target by
    up to one group.
    """
    if plan.category not in (PruneCategory.STRUCTURED, PruneCategory.COMPOSITE):
        raise InputError(f"plan category {plan.category.value} is not structural")
    plan.validate()
    work = clone_model(model)
    ledger = SparsityLedger.for_model(work)
    warnings: list[str] = []
    fractions = {n: _block_targets(plan, n) for n in range(len(work.layers))}
    _structured_core(work, ledger, fractions, warnings)
    return PrunedModel(model=work, masks={}, ledger=ledger, plan=plan, warnings=warnings)


def composite_prune(
    model: LanguageModel,
    plan: PruningPlan,
    metrics: dict[ProjectionId, np.ndarray],
) -> PrunedModel:
    """Structured removal of a share of each block's budget, then masking.

    Phase one removes groups worth structured_share of each block's mean
    target. Phase two masks the surviving weights so every projection's
    zeroed+removed count reaches floor(target * original size); projections
    the structural phase over-delivered keep mask rate zero and the
    deviation is recorded.
    """
    if plan.category is not PruneCategory.COMPOSITE:
        raise InputError("composite_prune requires a composite plan")
    plan.validate()
    _check_metrics(model, metrics)
    share = plan.structured_share
    work = clone_model(model)
    ledger = SparsityLedger.for_model(work)
    warnings: list[str] = []

    if share > 0.0:
        fractions = {}
        for n in range(len(work.layers)):
            attn_target, ffn_target = _block_targets(plan, n)
            fractions[n] = (share * attn_target, share * ffn_target)
        kept = _structured_core(work, ledger, fractions, warnings)
    else:
        kept = {
            n: (list(range(len(layer.live_heads))), list(range(len(layer.live_ff_channels))))
            for n, layer in enumerate(work.layers)
        }

    if share == 1.0:
        # The whole budget is structural; the gap left by group granularity
        # is deliberate, so no masks are applied.
        return PrunedModel(model=work, masks={}, ledger=ledger, plan=plan, warnings=warnings)

    cfg = work.config
    masks: dict[ProjectionId, np.ndarray] = {}
    for pid in work.projection_ids():
        entry = ledger.projections[pid]
        need = int(math.floor(plan.target(pid) * entry.original_params))
        k = need - entry.removed_params
        if k < 0:
            warnings.append(
                f"{pid}: structural phase removed {entry.removed_params} of a "
                f"{need}-parameter budget; mask rate clamped to zero"
            )
            k = 0
        keep_heads, keep_ch = kept[pid.layer]
        metric = metrics[pid]
        if pid.kind in ("q", "k", "v"):
            rows = np.concatenate(
                [np.arange(i * cfg.head_dim, (i + 1) * cfg.head_dim) for i in keep_heads]
            )
            metric = metric[rows, :]
        elif pid.kind == "o":
            rows = np.concatenate(
                [np.arange(i * cfg.head_dim, (i + 1) * cfg.head_dim) for i in keep_heads]
            )
            metric = metric[:, rows]
        elif pid.kind in ("g", "u"):
            metric = metric[np.asarray(keep_ch, dtype=np.int64), :]
        else:
            metric = metric[:, np.asarray(keep_ch, dtype=np.int64)]
        _mask_k_lowest(work, pid, metric, k, masks, ledger)
    return PrunedModel(model=work, masks=masks, ledger=ledger, plan=plan, warnings=warnings)


def prune(
    model: LanguageModel,
    plan: PruningPlan,
    metrics: dict[ProjectionId, np.ndarray] | None = None,
) -> PrunedModel:
    """Dispatch to the executor named by the plan's category."""
    if plan.category is PruneCategory.STRUCTURED:
        return structured_prune(model, plan)
    if metrics is None:
        raise InputError(f"{plan.category.value} pruning needs weight metrics")
    if plan.category is PruneCategory.UNSTRUCTURED:
        return unstructured_prune(model, plan, metrics)
    return composite_prune(model, plan, metrics)


def recount_ledger(pruned: PrunedModel) -> SparsityLedger:
    """Rebuild the ledger from tensors alone (zeros and shrunken dims)."""
    cfg = pruned.model.config
    fresh = SparsityLedger(projections={})
    for pid in pruned.model.projection_ids():
        weights = pruned.model.projection(pid)
        original = int(np.prod(original_projection_shape(cfg, pid.kind)))
        zeroed = int(np.count_nonzero(weights == 0.0))
        fresh.projections[pid] = ProjectionLedger(
            original_params=original,
            zeroed_params=zeroed,
            removed_params=original - int(weights.size),
        )
    return fresh


def verify_ledger(pruned: PrunedModel) -> None:
    """Cross-check the recorded ledger against a recount from the tensors."""
    recounted = recount_ledger(pruned)
    for pid, entry in pruned.ledger.projections.items():
        fresh = recounted.projections[pid]
        if (
            fresh.original_params != entry.original_params
            or fresh.zeroed_params != entry.zeroed_params
            or fresh.removed_params != entry.removed_params
        ):
            raise IntegrityError(
                f"ledger mismatch for {pid}: recorded "
                f"({entry.original_params}, {entry.zeroed_params}, {entry.removed_params}), "
                f"recounted ({fresh.original_params}, {fresh.zeroed_params}, "
                f"{fresh.removed_params})"
            )
        mask = pruned.masks.get(pid)
        if mask is not None:
            weights = pruned.model.projection(pid)
            if mask.shape != weights.shape:
                raise IntegrityError(f"mask shape mismatch for {pid}")
            if np.any(weights[mask] != 0.0):
                raise IntegrityError(f"masked weights of {pid} are not zero")


def finalize_for_deployment(pruned: PrunedModel) -> bytes:
    """Ledger-checked single-file checkpoint bytes for the pruned model."""
    verify_ledger(pruned)
    from . import store

    return store.checkpoint_bytes(pruned.model, pruned.masks)
