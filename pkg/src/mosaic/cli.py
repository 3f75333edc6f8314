"""Command-line pipeline: rank -> plan -> prune -> eval/bench/compare/sweep.

Exit codes: 0 success, 2 malformed input or file, 3 integrity or fingerprint
failure, 4 infeasible plan. Set MOSAIC_LOG=debug|info|warning for verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import evaluate, pruning, ranking, store
from .errors import InputError, IntegrityError, PlanError
from .model import PROJECTION_KINDS, fingerprint
from .pruning import DeviceProfile, PruneCategory
from .ranking import CalibrationInfo

log = logging.getLogger("mosaic")


def _corpus_id(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _apply_threads(threads: int | None):
    if threads is None:
        return None
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=threads)
    except ImportError:
        log.warning("threadpoolctl unavailable; --threads ignored")
        return None


def cmd_rank(args) -> int:
    model, _ = store.load_checkpoint(args.model)
    ids, _ = store.load_stream(args.calib)
    norms, used = evaluate.collect_norms(model, ids, args.samples, args.seq_len)
    if used < args.samples:
        log.warning("calibration stream yields %d windows, requested %d", used, args.samples)
    calibration = CalibrationInfo(used, args.seq_len, _corpus_id(args.calib))
    rank = ranking.build_global_rank(model, norms, args.alpha, calibration)
    store.save_rank(args.out, rank, norms=norms)
    print(f"{'projection':<14}{'params':>10}{'outlier %':>12}{'rank':>10}")
    for n in range(rank.entries.shape[0]):
        for m, kind in enumerate(PROJECTION_KINDS):
            print(
                f"{f'layers.{n}.{kind}':<14}{rank.param_counts[n, m]:>10}"
                f"{rank.raw_ranks[n, m]:>12.4f}{rank.entries[n, m]:>10.4f}"
            )
    if rank.degenerate:
        print("note: no outliers found anywhere; rank fell back to uniform")
    print(f"rank written to {args.out}")
    return 0


def cmd_plan(args) -> int:
    rank, norms = store.load_rank(args.rank)
    model = None
    if args.model:
        model, _ = store.load_checkpoint(args.model)
    if args.category == "auto":
        if model is None:
            raise InputError("--category auto needs --model to size the deployment")
        profile = DeviceProfile(
            gpu_memory_bytes=args.device_mem,
            has_sparse_accelerator=args.sparse_accelerator,
            tier=args.device_tier,
        )
        category = pruning.select_category(profile, model.param_count() * 4)
        log.info("auto-selected category %s", category.value)
    else:
        category = PruneCategory(args.category)
    plan = pruning.allocate_targets(
        rank,
        args.p,
        spread=getattr(args, "lambda"),
        model=model,
        category=category,
        structured_share=args.structured_share,
    )
    store.save_plan(args.out, plan, norms=norms)
    lo, hi = plan.band()
    print(
        f"category={plan.category.value} p={plan.p} band=[{lo:.4f}, {hi:.4f}] "
        f"weighted_mean={plan.weighted_mean():.8f} "
        f"targets=[{plan.targets.min():.4f}, {plan.targets.max():.4f}]"
    )
    for w in plan.warnings:
        print(f"warning: {w}")
    print(f"plan written to {args.out}")
    return 0


def cmd_prune(args) -> int:
    model, _ = store.load_checkpoint(args.model)
    plan, norms = store.load_plan(args.plan)
    if plan.model_fingerprint != fingerprint(model):
        raise IntegrityError("plan fingerprint does not match this model")
    metrics = None
    if plan.category is not PruneCategory.STRUCTURED:
        if norms is None:
            raise InputError("plan file lacks activation norms needed for masking")
        metrics = ranking.projection_metrics(model, norms)
    pruned = pruning.prune(model, plan, metrics)
    store.atomic_write_bytes(args.out, pruning.finalize_for_deployment(pruned))
    print(pruned.ledger.to_table())
    for w in pruned.warnings:
        print(f"warning: {w}")
    print(f"pruned checkpoint written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, _ = store.load_checkpoint(args.model)
    ids, _ = store.load_stream(args.stream)
    report = evaluate.perplexity(
        model, ids, args.context, args.stride, corpus=_corpus_id(args.stream)
    )
    print(report.to_text())
    return 0


def cmd_bench(args) -> int:
    model, _ = store.load_checkpoint(args.model)
    report = evaluate.bench(
        model,
        input_tokens=args.in_tokens,
        output_tokens=args.out_tokens,
        batch=args.batch,
        trials=args.trials,
        threads=args.threads,
    )
    print(report.to_text())
    return 0


def cmd_compare(args) -> int:
    model, _ = store.load_checkpoint(args.model)
    calib, _ = store.load_stream(args.calib)
    eval_ids, _ = store.load_stream(args.eval)
    p_list = [float(x) for x in args.p_list.split(",") if x != ""]
    table = evaluate.compare_methods(
        model,
        calib,
        eval_ids,
        p_list,
        alpha=args.alpha,
        spread=getattr(args, "lambda"),
        samples=args.samples,
        seq_len=args.seq_len,
        context_len=args.context,
        stride=args.stride,
        corpus=_corpus_id(args.eval),
        calib_corpus=_corpus_id(args.calib),
    )
    print(table.to_text())
    if args.out:
        store.atomic_write_text(args.out, table.to_csv_text())
        print(f"csv written to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    model, _ = store.load_checkpoint(args.model)
    calib, _ = store.load_stream(args.calib)
    eval_ids, _ = store.load_stream(args.eval)
    sizes = [int(x) for x in args.sample_sizes.split(",") if x != ""]
    rows = evaluate.calibration_sweep(
        model,
        calib,
        eval_ids,
        args.p,
        sizes,
        alpha=args.alpha,
        spread=getattr(args, "lambda"),
        seq_len=args.seq_len,
        context_len=args.context,
        stride=args.stride,
    )
    csv_text = "sample_size,ppl,rank_time_s\n" + "".join(
        f"{r.sample_size},{r.ppl!r},{r.rank_time_s!r}\n" for r in rows
    )
    print(csv_text, end="")
    if args.out:
        store.atomic_write_text(args.out, csv_text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mosaic",
        description="Outlier-aware projection pruning for decoder transformers",
    )
    parser.add_argument("--seed", type=int, default=0, help="seed for any randomized step")
    parser.add_argument("--threads", type=int, default=None, help="pin BLAS thread count")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rank", help="profile a model and write its projection rank")
    p.add_argument("--model", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--seq-len", type=int, default=2048)
    p.add_argument("--alpha", type=float, default=5.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("plan", help="allocate per-projection sparsity targets")
    p.add_argument("--rank", required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--lambda", type=float, default=pruning.DEFAULT_SPREAD)
    p.add_argument(
        "--category",
        choices=["auto", "unstructured", "structured", "composite"],
        default="auto",
    )
    p.add_argument("--structured-share", type=float, default=pruning.DEFAULT_STRUCTURED_SHARE)
    p.add_argument("--device-mem", type=int, default=8 * 1024**3)
    p.add_argument("--device-tier", choices=list(pruning.DEVICE_TIERS), default="desktop")
    p.add_argument("--sparse-accelerator", action="store_true")
    p.add_argument("--model", default=None, help="checkpoint (required for --category auto)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("prune", help="execute a plan and write the pruned checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("eval", help="sliding-window perplexity over a token stream")
    p.add_argument("--model", required=True)
    p.add_argument("--stream", required=True)
    p.add_argument("--context", type=int, default=2048)
    p.add_argument("--stride", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="latency and memory of prefill plus greedy decode")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="in_tokens", type=int, default=256)
    p.add_argument("--out-tokens", type=int, default=16)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--trials", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare", help="global vs layer vs projection pruning quality")
    p.add_argument("--model", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--eval", required=True)
    p.add_argument("--p-list", required=True, help="comma-separated pruning targets")
    p.add_argument("--alpha", type=float, default=5.0)
    p.add_argument("--lambda", type=float, default=pruning.DEFAULT_SPREAD)
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--seq-len", type=int, default=128)
    p.add_argument("--context", type=int, default=256)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--out", default=None, help="write rows as CSV here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="quality and ranking time per calibration budget")
    p.add_argument("--model", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--eval", required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--sample-sizes", required=True, help="comma-separated window counts")
    p.add_argument("--alpha", type=float, default=5.0)
    p.add_argument("--lambda", type=float, default=pruning.DEFAULT_SPREAD)
    p.add_argument("--seq-len", type=int, default=128)
    p.add_argument("--context", type=int, default=256)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("MOSAIC_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = build_parser().parse_args(argv)
    np.random.seed(args.seed)
    limiter = _apply_threads(args.threads)
    try:
        return int(args.func(args) or 0)
    except (InputError, OSError, json.JSONDecodeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except IntegrityError as e:
        print(f"integrity error: {e}", file=sys.stderr)
        return 3
    except PlanError as e:
        print(f"infeasible plan: {e}", file=sys.stderr)
        return 4
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
