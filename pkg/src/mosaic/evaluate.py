"""Quality and runtime measurement: perplexity, sparsity audit, benchmarks.

Perplexity follows the sliding-window protocol: the stream is scored in
windows of context_len tokens advanced by stride, each position's next-token
negative log-likelihood (natural log) is counted exactly once, and the
reported value is exp of the mean. With stride == context_len the windows
are disjoint and window-boundary positions are skipped (they have no
context), which is the fast default.
"""

from __future__ import annotations

import math
import time
import tracemalloc
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .model import (
    ActivationNorms,
    LanguageModel,
    NormAccumulator,
    finalize_norms,
    forward,
    forward_with_taps,
)
from .pruning import (
    PruneCategory,
    PrunedModel,
    SparsityLedger,
    allocate_targets,
    recount_ledger,
    unstructured_prune,
    verify_ledger,
)
from .ranking import (
    CalibrationInfo,
    build_global_rank,
    build_layer_rank,
    projection_metrics,
    uniform_rank,
)


def nll_from_logits(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-row next-token negative log-likelihood in nats (float64)."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise InputError("need one logits row per target")
    row_max = logits.max(axis=1)
    lse = row_max + np.log(np.exp(logits - row_max[:, None]).sum(axis=1))
    picked = logits[np.arange(logits.shape[0]), targets]
    return lse - picked


@dataclass
class PerplexityReport:
    corpus: str
    token_count: int
    mean_nll: float
    ppl: float
    stride: int
    context_len: int

    def to_text(self) -> str:
        return (
            f"corpus={self.corpus} tokens_scored={self.token_count} "
            f"context={self.context_len} stride={self.stride} "
            f"mean_nll={self.mean_nll:.6f} ppl={self.ppl:.4f}"
        )


def perplexity(
    model: LanguageModel,
    stream,
    context_len: int,
    stride: int | None = None,
    corpus: str = "unspecified",
) -> PerplexityReport:
    """Sliding-window perplexity of the model over a token stream."""
    ids = np.asarray(stream)
    if ids.ndim != 1 or ids.size < 2:
        raise InputError("stream must hold at least two tokens")
    if context_len < 2:
        raise InputError("context_len must be at least 2")
    if stride is None:
        stride = context_len
    if not 1 <= stride <= context_len:
        raise InputError("stride must be in [1, context_len]")

    total = 0.0
    counted = 0
    scored_until = 1  # position 0 has no context and is never scored
    begin = 0
    n = ids.size
    while True:
        end = min(begin + context_len, n)
        first = max(begin + 1, scored_until)
        if first < end:
            logits = forward(model, ids[begin:end])
            rows = logits[first - begin - 1 : end - begin - 1]
            total += float(nll_from_logits(rows, ids[first:end]).sum())
            counted += end - first
            scored_until = end
        if end >= n:
            break
        begin += stride
    mean_nll = total / counted
    return PerplexityReport(
        corpus=corpus,
        token_count=counted,
        mean_nll=mean_nll,
        ppl=float(math.exp(mean_nll)),
        stride=stride,
        context_len=context_len,
    )


def sparsity_audit(pruned: PrunedModel) -> SparsityLedger:
    """Recount zeros and removed dims from the tensors and cross-check."""
    verify_ledger(pruned)
    return recount_ledger(pruned)


@dataclass
class BenchReport:
    input_tokens: int
    output_tokens: int
    batch: int
    trials: int
    mean_latency_s: float
    stddev_latency_s: float | None  # populated only from five or more trials
    peak_resident_bytes: int
    model_param_count: int
    threads: int | None

    def to_text(self) -> str:
        std = "n/a" if self.stddev_latency_s is None else f"{self.stddev_latency_s:.4f}s"
        return (
            f"in={self.input_tokens} out={self.output_tokens} batch={self.batch} "
            f"trials={self.trials} mean_latency={self.mean_latency_s:.4f}s stddev={std} "
            f"peak_bytes={self.peak_resident_bytes} params={self.model_param_count} "
            f"threads={self.threads or 'default'}"
        )


def _greedy_generate(model: LanguageModel, prompt: np.ndarray, new_tokens: int) -> np.ndarray:
    seq = prompt
    logits = forward(model, seq)
    for _ in range(new_tokens):
        nxt = int(np.argmax(logits[-1]))
        seq = np.append(seq, nxt)
        logits = forward(model, seq)
    return seq


def bench(
    model: LanguageModel,
    input_tokens: int = 256,
    output_tokens: int = 16,
    batch: int = 1,
    trials: int = 5,
    threads: int | None = None,
) -> BenchReport:
    """Wall-clock prefill plus greedy decode, averaged over trials."""
    if trials < 1 or batch < 1 or input_tokens < 1 or output_tokens < 0:
        raise InputError("trials, batch, input_tokens must be positive")
    if input_tokens + output_tokens > model.config.max_seq_len:
        raise InputError("benchmark sequence exceeds the model's max_seq_len")
    prompt = ((np.arange(input_tokens, dtype=np.int64) * 7 + 3) % model.config.vocab_size)

    def run_trials() -> list[float]:
        times = []
        for _ in range(trials):
            t0 = time.perf_counter()
            for _ in range(batch):
                _greedy_generate(model, prompt.copy(), output_tokens)
            times.append(time.perf_counter() - t0)
        return times

    tracemalloc.start()
    try:
        if threads is not None:
            try:
                from threadpoolctl import threadpool_limits

                with threadpool_limits(limits=threads):
                    latencies = run_trials()
            except ImportError:
                latencies = run_trials()
        else:
            latencies = run_trials()
        peak = tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()

    return BenchReport(
        input_tokens=input_tokens,
        output_tokens=output_tokens,
        batch=batch,
        trials=trials,
        mean_latency_s=float(np.mean(latencies)),
        stddev_latency_s=float(np.std(latencies, ddof=1)) if trials >= 5 else None,
        peak_resident_bytes=int(peak),
        model_param_count=model.nonzero_param_count(),
        threads=threads,
    )


def calibration_windows(ids, samples: int, seq_len: int) -> list[np.ndarray]:
    """First `samples` disjoint windows of seq_len tokens (truncated stream
    yields fewer, and a stream shorter than one window yields itself)."""
    ids = np.asarray(ids)
    if ids.size == 0:
        raise InputError("calibration stream is empty")
    if samples < 1 or seq_len < 1:
        raise InputError("samples and seq_len must be positive")
    if ids.size < seq_len:
        return [ids]
    available = ids.size // seq_len
    take = min(samples, available)
    return [ids[i * seq_len : (i + 1) * seq_len] for i in range(take)]


def collect_norms(
    model: LanguageModel, calib_ids, samples: int, seq_len: int
) -> tuple[ActivationNorms, int]:
    """Stream calibration windows through the model and finalize norms."""
    windows = calibration_windows(calib_ids, samples, seq_len)
    sink = NormAccumulator()
    for window in windows:
        forward_with_taps(model, window, sink)
    return finalize_norms(sink), len(windows)


METHODS = ("global", "layer", "projection")


@dataclass
class ComparisonRow:
    p: float
    method: str
    ppl: float
    effective_sparsity: float
    nonzero_params: int


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow]

    def to_csv_text(self) -> str:
        lines = ["p,method,ppl,effective_sparsity,nonzero_params"]
        for r in self.rows:
            lines.append(
                f"{r.p!r},{r.method},{r.ppl!r},{r.effective_sparsity!r},{r.nonzero_params}"
            )
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [f"{'p':>6} {'method':<12}{'ppl':>14}{'sparsity':>10}{'params':>12}"]
        for r in self.rows:
            lines.append(
                f"{r.p:>6.2f} {r.method:<12}{r.ppl:>14.4f}"
                f"{r.effective_sparsity:>10.4f}{r.nonzero_params:>12}"
            )
        return "\n".join(lines)


def compare_methods(
    model: LanguageModel,
    calib_ids,
    eval_ids,
    p_list,
    alpha: float = 5.0,
    spread: float = 0.08,
    samples: int = 128,
    seq_len: int = 128,
    context_len: int = 256,
    stride: int | None = None,
    corpus: str = "eval",
    calib_corpus: str = "calib",
) -> ComparisonTable:
    """Perplexity of global vs layer vs projection pruning at each p.

    All three methods share one calibration pass and prune by masking, so
    rows differ only in how targets distribute over projections. Every plan's
    parameter-weighted mean target equals p.
    """
    norms, used = collect_norms(model, calib_ids, samples, seq_len)
    calibration = CalibrationInfo(used, seq_len, calib_corpus)
    metrics = projection_metrics(model, norms)
    ranks = {
        "global": uniform_rank(model, calibration),
        "layer": build_layer_rank(model, norms, alpha, calibration).as_global_rank(),
        "projection": build_global_rank(model, norms, alpha, calibration),
    }
    rows = []
    for p in p_list:
        for method in METHODS:
            if p == 0.0:
                subject = model
                effective = 0.0
            else:
                plan = allocate_targets(
                    ranks[method], p, spread, model=model, category=PruneCategory.UNSTRUCTURED
                )
                pruned = unstructured_prune(model, plan, metrics)
                subject = pruned.model
                effective = pruned.ledger.global_effective_sparsity
            report = perplexity(subject, eval_ids, context_len, stride, corpus=corpus)
            rows.append(
                ComparisonRow(
                    p=float(p),
                    method=method,
                    ppl=report.ppl,
                    effective_sparsity=effective,
                    nonzero_params=subject.nonzero_param_count(),
                )
            )
    return ComparisonTable(rows=rows)


@dataclass
class SweepRow:
    sample_size: int
    ppl: float
    rank_time_s: float


def calibration_sweep(
    model: LanguageModel,
    calib_ids,
    eval_ids,
    p: float,
    sample_sizes,
    alpha: float = 5.0,
    spread: float = 0.08,
    seq_len: int = 128,
    context_len: int = 256,
    stride: int | None = None,
) -> list[SweepRow]:
    """Projection-pruned perplexity and ranking wall time per sample budget."""
    rows = []
    for size in sample_sizes:
        t0 = time.perf_counter()
        norms, used = collect_norms(model, calib_ids, size, seq_len)
        rank = build_global_rank(
            model, norms, alpha, CalibrationInfo(used, seq_len, "sweep")
        )
        rank_time = time.perf_counter() - t0
        metrics = projection_metrics(model, norms)
        plan = allocate_targets(rank, p, spread, model=model)
        pruned = unstructured_prune(model, plan, metrics)
        report = perplexity(pruned.model, eval_ids, context_len, stride, corpus="sweep")
        rows.append(SweepRow(sample_size=int(size), ppl=report.ppl, rank_time_s=rank_time))
    return rows
