"""Evaluate training snapshots and report which reproduce the pruning trend.

For each candidate checkpoint: convert it, rank with the default alpha, and
measure global/layer/projection perplexity at p in {0.5, 0.6} on disjoint
evaluation slices. A snapshot is viable when, on every slice, projection <=
global at both p and projection <= layer <= global at one p or more.

Usage: python pick_fixture.py SNAP_DIR... (each a HF checkpoint directory)
"""

import sys

import numpy as np

import mosaic
import mosaic.store as store
from mosaic_converter import convert_corpus, convert_model

CORPUS = ("tests/fixtures/corpus/calib.txt", "tests/fixtures/corpus/eval.txt")
SLICES = 2
SLICE_TOKENS = 24_000
CONTEXT = 256


def trend(model, calib, eval_slices):
    norms, _ = mosaic.collect_norms(model, calib, samples=128, seq_len=128)
    metrics = mosaic.projection_metrics(model, norms)
    ranks = {
        "global": mosaic.uniform_rank(model),
        "layer": mosaic.build_layer_rank(model, norms).as_global_rank(),
        "projection": mosaic.build_global_rank(model, norms),
    }
    table = {}
    for p in (0.5, 0.6):
        pruned = {}
        for method, rank in ranks.items():
            plan = mosaic.allocate_targets(rank, p, model=model)
            pruned[method] = mosaic.unstructured_prune(model, plan, metrics).model
        for s, ids in enumerate(eval_slices):
            for method, m in pruned.items():
                table[(p, s, method)] = mosaic.perplexity(m, ids, CONTEXT).ppl
    return table


def main() -> int:
    for snap in sys.argv[1:]:
        blob, _ = convert_model(snap)
        model, _ = store.checkpoint_from_bytes(blob)
        calib, ev, _ = convert_corpus(list(CORPUS), snap, seq_len=128, calib_windows=128)
        slices = [
            ev[i * SLICE_TOKENS : (i + 1) * SLICE_TOKENS] for i in range(SLICES)
        ]
        table = trend(model, calib, slices)
        print(f"\n=== {snap}")
        viable = True
        for s in range(SLICES):
            chain_ps = []
            for p in (0.5, 0.6):
                g = table[(p, s, "global")]
                l = table[(p, s, "layer")]
                pr = table[(p, s, "projection")]
                pg = pr <= g
                chain = pr <= l <= g
                if chain:
                    chain_ps.append(p)
                viable &= pg
                print(f"  slice {s} p={p}: global={g:9.2f} layer={l:9.2f} "
                      f"proj={pr:9.2f}  {'pg ' if pg else 'XX '}"
                      f"{'chain' if chain else ''}")
            viable &= bool(chain_ps)
        print(f"  viable: {viable}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
