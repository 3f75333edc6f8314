"""Quality (perplexity) and runtime effects of pruning, side by side.

On a randomly initialized toy model perplexity differences between ranking
granularities are noise; the point here is the protocol: one calibration
pass, three plans per p whose weighted mean target is identical, a shared
evaluation stream, and a latency/parameter benchmark for the composite
model. Run the converter under frontends on a trained checkpoint to see the
quality ordering emerge.
"""

import numpy as np

from mosaic import (
    ModelConfig,
    PruneCategory,
    allocate_targets,
    bench,
    build_global_rank,
    collect_norms,
    compare_methods,
    composite_prune,
    projection_metrics,
    random_model,
    sparsity_audit,
)

cfg = ModelConfig(n_layers=4, d_model=128, n_heads=8, head_dim=16, d_ff=512,
                  vocab_size=97, max_seq_len=256)
model = random_model(cfg, seed=13, scale=0.25)
rng = np.random.default_rng(2)
calib = rng.integers(0, cfg.vocab_size, size=8192)
eval_ids = rng.integers(0, cfg.vocab_size, size=1024)

table = compare_methods(model, calib, eval_ids, [0.0, 0.5], samples=8, seq_len=128,
                        context_len=128)
print(table.to_text())

norms, _ = collect_norms(model, calib, samples=8, seq_len=128)
rank = build_global_rank(model, norms)
plan = allocate_targets(rank, 0.5, model=model, category=PruneCategory.COMPOSITE)
pruned = composite_prune(model, plan, projection_metrics(model, norms))
audit = sparsity_audit(pruned)
print(f"\ncomposite audit: effective={audit.global_effective_sparsity:.4f} "
      f"(zeroed {audit.total_zeroed}, removed {audit.total_removed})")

dense = bench(model, input_tokens=240, output_tokens=8, trials=5, threads=1)
small = bench(pruned.model, input_tokens=240, output_tokens=8, trials=5, threads=1)
print(f"dense : {dense.to_text()}")
print(f"pruned: {small.to_text()}")
print(f"latency ratio {small.mean_latency_s / dense.mean_latency_s:.3f}, "
      f"param ratio {small.model_param_count / dense.model_param_count:.3f}")
