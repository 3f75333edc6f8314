"""Composite projection pruning for small decoder transformers.

Rank every projection by its activation-weighted outlier count, fan a single
pruning knob out into non-uniform per-projection sparsity targets, and apply
unstructured masking, structured head/channel removal, or the composite of
both. Perplexity and latency tooling closes the loop.
"""

from .errors import (
    InputError,
    IntegrityError,
    MosaicError,
    PlanError,
    ShapeError,
    StateError,
)
from .evaluate import (
    BenchReport,
    ComparisonTable,
    PerplexityReport,
    bench,
    calibration_sweep,
    collect_norms,
    compare_methods,
    perplexity,
    sparsity_audit,
)
from .model import (
    ActivationNorms,
    DecoderLayer,
    LanguageModel,
    ModelConfig,
    NormAccumulator,
    PROJECTION_KINDS,
    ProjectionId,
    clone_model,
    finalize_norms,
    fingerprint,
    forward,
    forward_with_taps,
    random_model,
)
from .pruning import (
    DeviceProfile,
    PruneCategory,
    PrunedModel,
    PruningPlan,
    SparsityLedger,
    allocate_targets,
    composite_prune,
    finalize_for_deployment,
    prune,
    select_category,
    structured_prune,
    unstructured_prune,
)
from .ranking import (
    CalibrationInfo,
    GlobalRank,
    LayerRank,
    build_global_rank,
    build_layer_rank,
    count_layer_outliers,
    count_projection_outliers,
    projection_metrics,
    uniform_rank,
    weight_metric,
)

__version__ = "0.1.0"
