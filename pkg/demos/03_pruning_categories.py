"""The three pruning categories and what each does to the tensors.

Unstructured pruning masks weights to zero and keeps every shape; structured
pruning physically removes whole attention heads and feed-forward channels;
composite runs a structural phase for part of the budget and masks the rest
so every projection still lands on its exact target. The device profile
picks the category: no GPU means structured, dense-fit plus a sparse
accelerator means unstructured, anything in between means composite.
"""

import numpy as np

from mosaic import (
    DeviceProfile,
    ModelConfig,
    PruneCategory,
    allocate_targets,
    build_global_rank,
    collect_norms,
    composite_prune,
    projection_metrics,
    random_model,
    select_category,
    structured_prune,
    unstructured_prune,
)

GIB = 1024**3
for profile, size in [
    (DeviceProfile(80 * GIB, True, "cloud"), 16 * GIB),
    (DeviceProfile(10 * GIB, False, "desktop"), 13 * GIB),
    (DeviceProfile(4 * GIB, False, "cpu-only"), 13 * GIB),
]:
    picked = select_category(profile, size)
    print(f"{profile.tier:<9} mem={profile.gpu_memory_bytes // GIB:>3} GiB "
          f"accel={profile.has_sparse_accelerator!s:<5} -> {picked.value}")

cfg = ModelConfig(n_layers=2, d_model=64, n_heads=4, head_dim=16, d_ff=128,
                  vocab_size=101, max_seq_len=128)
model = random_model(cfg, seed=3, scale=0.3)
calib = np.random.default_rng(1).integers(0, cfg.vocab_size, size=2048)
norms, _ = collect_norms(model, calib, samples=8, seq_len=128)
rank = build_global_rank(model, norms)
metrics = projection_metrics(model, norms)

print("\np = 0.5 under each category:")
for category in PruneCategory:
    plan = allocate_targets(rank, 0.5, model=model, category=category)
    if category is PruneCategory.UNSTRUCTURED:
        pruned = unstructured_prune(model, plan, metrics)
    elif category is PruneCategory.STRUCTURED:
        pruned = structured_prune(model, plan)
    else:
        pruned = composite_prune(model, plan, metrics)
    led = pruned.ledger
    heads = len(pruned.model.layers[0].live_heads)
    channels = len(pruned.model.layers[0].live_ff_channels)
    print(
        f"  {category.value:<13} zeroed={led.total_zeroed:>6} "
        f"removed={led.total_removed:>6} effective={led.global_effective_sparsity:.4f} "
        f"layer0: {heads}/4 heads, {channels}/128 channels"
    )

print("\ncomposite ledger detail (first layer):")
plan = allocate_targets(rank, 0.5, model=model, category=PruneCategory.COMPOSITE)
pruned = composite_prune(model, plan, metrics)
for pid, entry in sorted(pruned.ledger.projections.items()):
    if pid.layer == 0:
        print(f"  {str(pid):<12} target={plan.target(pid):.4f} "
              f"zeroed={entry.zeroed_params:>5} removed={entry.removed_params:>5} "
              f"effective={entry.effective_sparsity:.4f}")
