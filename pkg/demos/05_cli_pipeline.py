"""The full command-line pipeline in a scratch directory.

rank profiles the checkpoint once, plan fans a pruning level out into
targets (reusing the same rank file for every level), prune executes the
plan's category and writes a deployable checkpoint, and eval/bench/compare
close the loop. Every file format round-trips bit-exactly, so rerunning any
stage reproduces identical bytes.
"""

import tempfile
from pathlib import Path

import numpy as np

from mosaic import ModelConfig, random_model, store
from mosaic.cli import main

root = Path(tempfile.mkdtemp(prefix="mosaic-demo-"))
print(f"working in {root}")

cfg = ModelConfig(n_layers=2, d_model=64, n_heads=4, head_dim=16, d_ff=128,
                  vocab_size=73, max_seq_len=256)
store.save_checkpoint(root / "toy.mosc", random_model(cfg, seed=5, scale=0.3))
rng = np.random.default_rng(0)
store.save_stream(root / "calib.most", rng.integers(0, 73, size=8192), vocab_size=73)
store.save_stream(root / "eval.most", rng.integers(0, 73, size=1024), vocab_size=73)

steps = [
    ["rank", "--model", f"{root}/toy.mosc", "--calib", f"{root}/calib.most",
     "--samples", "16", "--seq-len", "128", "--out", f"{root}/rank.json"],
    ["plan", "--rank", f"{root}/rank.json", "--p", "0.5", "--category", "auto",
     "--model", f"{root}/toy.mosc", "--device-tier", "desktop",
     "--device-mem", str(2 * 1024**3), "--out", f"{root}/plan.json"],
    ["prune", "--model", f"{root}/toy.mosc", "--plan", f"{root}/plan.json",
     "--out", f"{root}/pruned.mosc"],
    ["eval", "--model", f"{root}/pruned.mosc", "--stream", f"{root}/eval.most",
     "--context", "128"],
    ["bench", "--model", f"{root}/pruned.mosc", "--in", "128", "--out-tokens", "4",
     "--trials", "5"],
    ["compare", "--model", f"{root}/toy.mosc", "--calib", f"{root}/calib.most",
     "--eval", f"{root}/eval.most", "--p-list", "0,0.5", "--samples", "16",
     "--seq-len", "128", "--context", "128", "--out", f"{root}/compare.csv"],
    ["sweep", "--model", f"{root}/toy.mosc", "--calib", f"{root}/calib.most",
     "--eval", f"{root}/eval.most", "--p", "0.5", "--sample-sizes", "1,4,16",
     "--seq-len", "128", "--context", "128", "--out", f"{root}/sweep.csv"],
]

for argv in steps:
    print(f"\n$ mosaic {' '.join(argv)}")
    code = main(argv)
    assert code == 0, f"step failed with exit code {code}"

print(f"\nartifacts: {sorted(p.name for p in root.iterdir())}")
