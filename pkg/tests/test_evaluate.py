import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mosaic.errors import InputError, IntegrityError
from mosaic.evaluate import (
    bench,
    calibration_windows,
    compare_methods,
    nll_from_logits,
    perplexity,
    sparsity_audit,
)
from mosaic.model import (
    LanguageModel,
    ModelConfig,
    ProjectionId,
    forward,
    random_model,
)
from mosaic.pruning import PruneCategory, allocate_targets, structured_prune, unstructured_prune
from tests.test_model import tiny_config
from tests.test_pruning import pruning_setup


def uniform_logit_model(vocab=11):
    model = random_model(tiny_config(vocab_size=vocab), seed=1)
    model.lm_head = np.zeros_like(model.lm_head)
    return model


def perfect_predictor(vocab=16, scale=50.0):
    """Zero-layer model that maps token t to a huge logit on (t+1) % vocab."""
    cfg = ModelConfig(
        n_layers=0, d_model=vocab, n_heads=1, head_dim=vocab, d_ff=vocab,
        vocab_size=vocab, max_seq_len=4096,
    )
    shift = np.zeros((vocab, vocab), np.float32)
    for t in range(vocab):
        shift[(t + 1) % vocab, t] = scale
    return LanguageModel(
        config=cfg,
        embedding=np.eye(vocab, dtype=np.float32),
        layers=[],
        final_norm_gain=np.ones(vocab, np.float32),
        lm_head=shift,
    )


class TestNll:
    @given(
        st.lists(st.floats(-30, 30), min_size=3, max_size=8),
        st.floats(-50, 50),
    )
    @settings(max_examples=60, deadline=None)
    def test_shift_invariance(self, row, shift):
        row = np.array([row], dtype=np.float64)
        target = np.array([len(row[0]) // 2])
        a = nll_from_logits(row, target)
        b = nll_from_logits(row + shift, target)
        assert abs(float(a[0] - b[0])) < 1e-6

    def test_matches_manual_softmax(self):
        logits = np.array([[1.0, 2.0, 0.5]])
        probs = np.exp(logits[0]) / np.exp(logits[0]).sum()
        want = -math.log(probs[1])
        assert abs(float(nll_from_logits(logits, np.array([1]))[0]) - want) < 1e-12


class TestPerplexity:
    def test_uniform_logits_give_vocab_size(self):
        model = uniform_logit_model(vocab=11)
        stream = (np.arange(64) * 3 + 1) % 11
        report = perplexity(model, stream, context_len=16)
        assert abs(report.ppl - 11.0) <= 11.0 * 1e-3
        assert abs(report.ppl - math.exp(report.mean_nll)) < 1e-9

    def test_perfect_predictor_reaches_one(self):
        model = perfect_predictor()
        stream = np.arange(128) % 16
        report = perplexity(model, stream, context_len=32)
        assert abs(report.ppl - 1.0) < 1e-6

    def test_three_token_hand_oracle(self):
        model = random_model(tiny_config(), seed=5, scale=0.4)
        stream = np.array([3, 7, 1])
        logits = forward(model, stream).astype(np.float64)
        want = 0.0
        for pos in (1, 2):
            row = logits[pos - 1]
            row = row - row.max()
            probs = np.exp(row) / np.exp(row).sum()
            want += -math.log(probs[stream[pos]])
        want /= 2
        report = perplexity(model, stream, context_len=8)
        assert abs(report.mean_nll - want) < 1e-5
        assert abs(report.ppl - math.exp(want)) < 1e-5

    def test_disjoint_windows_score_interiors_once(self):
        model = uniform_logit_model()
        report = perplexity(model, (np.arange(10)) % 11, context_len=4, stride=4)
        assert report.token_count == 7  # 3 + 3 + 1; boundary tokens skipped

    def test_overlapping_stride_scores_everything(self):
        model = uniform_logit_model()
        report = perplexity(model, (np.arange(10)) % 11, context_len=4, stride=2)
        assert report.token_count == 9

    def test_short_stream_rejected(self):
        model = uniform_logit_model()
        with pytest.raises(InputError):
            perplexity(model, np.array([1]), context_len=4)

    def test_bad_stride_rejected(self):
        model = uniform_logit_model()
        with pytest.raises(InputError):
            perplexity(model, np.arange(8) % 11, context_len=4, stride=5)

    def test_ppl_finite_and_at_least_one(self):
        model = random_model(tiny_config(), seed=9, scale=0.5)
        report = perplexity(model, (np.arange(40) * 7 + 2) % 11, context_len=8)
        assert report.ppl >= 1.0 and math.isfinite(report.ppl)


class TestSparsityAudit:
    def test_unpruned_model_is_all_zero(self):
        model, _, rank, metrics = pruning_setup(seed=81)
        plan = allocate_targets(rank, 0.0, model=model)
        pruned = unstructured_prune(model, plan, metrics)
        audit = sparsity_audit(pruned)
        assert audit.total_zeroed == 0 and audit.total_removed == 0

    def test_masked_fraction_reported_exactly(self):
        model, _, rank, metrics = pruning_setup(seed=83)
        plan = allocate_targets(rank, 0.5, spread=0.0, model=model)
        pruned = unstructured_prune(model, plan, metrics)
        audit = sparsity_audit(pruned)
        for pid, entry in audit.projections.items():
            size = model.projection(pid).size
            assert entry.effective_sparsity == int(np.floor(0.5 * size)) / size

    def test_composite_audit_equals_ledger(self):
        from mosaic.pruning import composite_prune

        model, _, rank, metrics = pruning_setup(seed=87)
        plan = allocate_targets(rank, 0.6, model=model, category=PruneCategory.COMPOSITE)
        pruned = composite_prune(model, plan, metrics)
        audit = sparsity_audit(pruned)
        for pid, entry in audit.projections.items():
            assert entry == pruned.ledger.projections[pid]

    def test_tampered_ledger_detected(self):
        model, _, rank, metrics = pruning_setup(seed=89)
        plan = allocate_targets(rank, 0.4, model=model)
        pruned = unstructured_prune(model, plan, metrics)
        pruned.ledger.projections[ProjectionId(1, "g")].zeroed_params -= 3
        with pytest.raises(IntegrityError):
            sparsity_audit(pruned)

    def test_masked_weights_survive_inference(self):
        model, _, rank, metrics = pruning_setup(seed=91)
        plan = allocate_targets(rank, 0.5, model=model)
        pruned = unstructured_prune(model, plan, metrics)
        for _ in range(3):
            forward(pruned.model, (np.arange(24) * 3) % 13)
        for pid, mask in pruned.masks.items():
            assert np.all(pruned.model.projection(pid)[mask] == 0.0)


class TestBench:
    def test_prefill_only(self):
        model = random_model(tiny_config(), seed=2)
        report = bench(model, input_tokens=8, output_tokens=0, batch=1, trials=1)
        assert report.mean_latency_s > 0
        assert report.stddev_latency_s is None

    def test_five_trials_report_stddev(self):
        model = random_model(tiny_config(), seed=2)
        report = bench(model, input_tokens=8, output_tokens=2, batch=1, trials=5)
        assert report.trials == 5
        assert report.stddev_latency_s is not None

    def test_structured_param_count_drops_by_ledger(self):
        model, _, rank, _ = pruning_setup(seed=93)
        plan = allocate_targets(rank, 0.5, model=model, category=PruneCategory.STRUCTURED)
        pruned = structured_prune(model, plan)
        dense = bench(model, input_tokens=8, output_tokens=0, trials=1)
        small = bench(pruned.model, input_tokens=8, output_tokens=0, trials=1)
        assert dense.model_param_count - small.model_param_count == pruned.ledger.total_removed

    def test_repeat_runs_are_stable(self):
        cfg = tiny_config(d_model=64, n_heads=4, head_dim=16, d_ff=128,
                          vocab_size=64, max_seq_len=256)
        model = random_model(cfg, seed=3)
        a = bench(model, input_tokens=128, output_tokens=0, batch=2, trials=5, threads=1)
        b = bench(model, input_tokens=128, output_tokens=0, batch=2, trials=5, threads=1)
        assert a.mean_latency_s <= 1.25 * b.mean_latency_s
        assert b.mean_latency_s <= 1.25 * a.mean_latency_s

    def test_argument_validation(self):
        model = random_model(tiny_config(), seed=2)
        with pytest.raises(InputError):
            bench(model, input_tokens=8, output_tokens=0, trials=0)


class TestCalibrationWindows:
    def test_disjoint_window_split(self):
        windows = calibration_windows(np.arange(100), samples=3, seq_len=20)
        assert len(windows) == 3
        assert np.array_equal(windows[1], np.arange(20, 40))

    def test_short_stream_yields_itself(self):
        windows = calibration_windows(np.arange(5), samples=4, seq_len=16)
        assert len(windows) == 1 and windows[0].size == 5

    def test_capped_by_stream_length(self):
        assert len(calibration_windows(np.arange(64), samples=100, seq_len=16)) == 4


class TestCompareMethods:
    def test_p_zero_rows_are_identical(self):
        model, *_ = pruning_setup(seed=95)
        calib = (np.arange(64) * 5 + 1) % 13
        table = compare_methods(model, calib, calib, [0.0], samples=4, seq_len=16,
                                context_len=16)
        ppls = {row.ppl for row in table.rows}
        assert len(table.rows) == 3 and len(ppls) == 1

    def test_degenerate_model_gives_identical_methods(self):
        model = random_model(tiny_config(), seed=0)
        for pid in model.projection_ids():
            model.set_projection(pid, np.full_like(model.projection(pid), 0.125))
        calib = (np.arange(64) * 3 + 2) % 11
        table = compare_methods(model, calib, calib, [0.4], samples=4, seq_len=16,
                                context_len=16)
        assert len({row.ppl for row in table.rows}) == 1

    def test_rows_cover_methods_and_sparsity(self):
        model, *_ = pruning_setup(seed=97)
        calib = (np.arange(64) * 5 + 1) % 13
        table = compare_methods(model, calib, calib, [0.0, 0.5], samples=4, seq_len=16,
                                context_len=16)
        assert [r.method for r in table.rows] == ["global", "layer", "projection"] * 2
        for row in table.rows[3:]:
            assert 0.45 < row.effective_sparsity < 0.51
        csv_text = table.to_csv_text()
        assert csv_text.splitlines()[0] == "p,method,ppl,effective_sparsity,nonzero_params"
        assert len(csv_text.splitlines()) == 7
