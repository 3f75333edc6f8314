import math

import numpy as np
import pytest

from mosaic import tensor
from mosaic.errors import InputError, StateError
from mosaic.model import (
    ActivationNorms,
    LanguageModel,
    ModelConfig,
    NormAccumulator,
    ProjectionId,
    clone_model,
    finalize_norms,
    fingerprint,
    forward,
    forward_with_taps,
    random_model,
)


def tiny_config(**overrides):
    base = dict(
        n_layers=2,
        d_model=8,
        n_heads=2,
        head_dim=4,
        d_ff=16,
        vocab_size=11,
        max_seq_len=32,
    )
    base.update(overrides)
    return ModelConfig(**base)


def ref_forward(model: LanguageModel, tokens):
    """Straight-line per-position reference in float64 (no shared kernels)."""
    cfg = model.config

    def rms(vec, gain):
        ms = float((vec**2).mean())
        return gain.astype(np.float64) * vec / math.sqrt(ms + cfg.norm_eps)

    def rope(vec, pos):
        hd = cfg.head_dim
        half = hd // 2
        out = np.zeros(hd)
        for i in range(half):
            angle = pos * cfg.rope_base ** (-2.0 * i / hd)
            c, s = math.cos(angle), math.sin(angle)
            out[i] = vec[i] * c - vec[i + half] * s
            out[i + half] = vec[i + half] * c + vec[i] * s
        return out

    seq = len(tokens)
    x = [model.embedding[t].astype(np.float64) for t in tokens]
    for layer in model.layers:
        heads = len(layer.live_heads)
        hd = cfg.head_dim
        h = [rms(v, layer.attn_norm_gain) for v in x]
        q = [layer.q.astype(np.float64) @ v for v in h]
        k = [layer.k.astype(np.float64) @ v for v in h]
        vv = [layer.v.astype(np.float64) @ v for v in h]
        for pos in range(seq):
            for hi in range(heads):
                sl = slice(hi * hd, (hi + 1) * hd)
                q[pos][sl] = rope(q[pos][sl], pos)
                k[pos][sl] = rope(k[pos][sl], pos)
        ctx = [np.zeros(heads * hd) for _ in range(seq)]
        for pos in range(seq):
            for hi in range(heads):
                sl = slice(hi * hd, (hi + 1) * hd)
                scores = [
                    float(q[pos][sl] @ k[j][sl]) / math.sqrt(hd) for j in range(pos + 1)
                ]
                mx = max(scores)
                exps = [math.exp(s - mx) for s in scores]
                z = sum(exps)
                for j in range(pos + 1):
                    ctx[pos][sl] += (exps[j] / z) * vv[j][sl]
        for pos in range(seq):
            x[pos] = x[pos] + layer.o.astype(np.float64) @ ctx[pos]
        h2 = [rms(v, layer.ffn_norm_gain) for v in x]
        for pos in range(seq):
            gate = layer.g.astype(np.float64) @ h2[pos]
            gate = gate / (1.0 + np.exp(-gate)) * (layer.u.astype(np.float64) @ h2[pos])
            x[pos] = x[pos] + layer.d.astype(np.float64) @ gate
    out = np.zeros((seq, cfg.vocab_size))
    for pos in range(seq):
        final = rms(x[pos], model.final_norm_gain)
        out[pos] = model.lm_head.astype(np.float64) @ final
    return out


def shrink_layer(model: LanguageModel, layer_idx: int, keep_heads, keep_channels):
    """Hand-built structurally reduced layer for shape soundness tests."""
    cfg = model.config
    layer = model.layers[layer_idx]
    rows = np.concatenate(
        [np.arange(h * cfg.head_dim, (h + 1) * cfg.head_dim) for h in keep_heads]
    )
    ch = np.asarray(keep_channels)
    layer.q = layer.q[rows, :]
    layer.k = layer.k[rows, :]
    layer.v = layer.v[rows, :]
    layer.o = layer.o[:, rows]
    layer.g = layer.g[ch, :]
    layer.u = layer.u[ch, :]
    layer.d = layer.d[:, ch]
    layer.live_heads = list(keep_heads)
    layer.live_ff_channels = [int(c) for c in keep_channels]


class TestForward:
    def test_single_token_shape(self):
        model = random_model(tiny_config(), seed=0)
        assert forward(model, [3]).shape == (1, 11)

    def test_zeroed_lm_head_gives_uniform_softmax(self):
        model = random_model(tiny_config(), seed=1)
        model.lm_head = np.zeros_like(model.lm_head)
        logits = forward(model, [1, 2, 3])
        assert np.array_equal(logits, np.zeros_like(logits))
        probs = tensor.softmax_rows(logits)
        np.testing.assert_allclose(probs, 1.0 / 11, atol=1e-7)

    def test_matches_reference_implementation(self):
        model = random_model(tiny_config(), seed=42, scale=0.3)
        tokens = [1, 5, 2, 9]
        got = forward(model, tokens)
        want = ref_forward(model, tokens)
        np.testing.assert_allclose(got, want, atol=1e-4, rtol=1e-4)

    def test_reference_match_on_shrunk_model(self):
        model = random_model(tiny_config(), seed=7, scale=0.3)
        shrink_layer(model, 0, keep_heads=[1], keep_channels=list(range(0, 16, 2)))
        model.validate()
        tokens = [4, 4, 0, 10, 6]
        np.testing.assert_allclose(
            forward(model, tokens), ref_forward(model, tokens), atol=1e-4, rtol=1e-4
        )

    def test_token_out_of_range(self):
        model = random_model(tiny_config(), seed=0)
        with pytest.raises(InputError):
            forward(model, [11])

    def test_sequence_too_long(self):
        model = random_model(tiny_config(max_seq_len=4), seed=0)
        with pytest.raises(InputError):
            forward(model, [0] * 5)

    def test_causality_is_exact(self):
        rng = np.random.default_rng(0)
        for trial in range(10):
            model = random_model(tiny_config(), seed=100 + trial, scale=0.2)
            tokens = rng.integers(0, 11, size=8)
            altered = tokens.copy()
            altered[5:] = (altered[5:] + 1 + rng.integers(0, 9, size=3)) % 11
            a = forward(model, tokens)
            b = forward(model, altered)
            assert np.array_equal(a[:5], b[:5])


class TestTaps:
    def test_taps_do_not_perturb_logits(self):
        model = random_model(tiny_config(), seed=3)
        tokens = [1, 2, 3, 4, 5]
        plain = forward(model, tokens)
        tapped = forward_with_taps(model, tokens, NormAccumulator())
        assert np.array_equal(plain, tapped)

    def test_zero_embedding_gives_equal_qkv_norms(self):
        model = random_model(tiny_config(), seed=4)
        model.embedding = np.zeros_like(model.embedding)
        sink = NormAccumulator()
        forward_with_taps(model, [1, 2, 3], sink)
        norms = finalize_norms(sink)
        for kind in ("q", "k", "v"):
            assert np.array_equal(
                norms.for_projection(ProjectionId(0, kind)), np.zeros(8, np.float32)
            )

    def test_accumulated_norms_match_explicit_capture(self):
        model = random_model(tiny_config(n_layers=1), seed=5)
        tokens = [7, 1, 4]

        captured = {}

        class CapturingSink(NormAccumulator):
            def record(self, pid, inputs):
                captured.setdefault(pid, []).append(np.array(inputs, copy=True))
                super().record(pid, inputs)

        sink = CapturingSink()
        forward_with_taps(model, tokens, sink)
        norms = finalize_norms(sink)
        for pid, mats in captured.items():
            stacked = np.vstack(mats)
            want = tensor.column_l2_norms(stacked)
            np.testing.assert_allclose(norms.for_projection(pid), want, atol=1e-5)


class TestNormAccumulation:
    def test_single_sample(self):
        sink = NormAccumulator()
        sink.record(ProjectionId(0, "q"), np.array([[3.0, 4.0, 0.0]], np.float32))
        sink.count_tokens(1)
        norms = finalize_norms(sink)
        np.testing.assert_allclose(norms.for_projection(ProjectionId(0, "q")), [3, 4, 0])

    def test_two_identical_tokens(self):
        x = np.array([1.5, -2.0, 0.5], np.float32)
        sink = NormAccumulator()
        sink.record(ProjectionId(0, "q"), np.vstack([x, x]))
        sink.count_tokens(2)
        norms = finalize_norms(sink)
        np.testing.assert_allclose(
            norms.for_projection(ProjectionId(0, "q")), math.sqrt(2.0) * np.abs(x), rtol=1e-6
        )

    def test_many_tokens_match_batch_oracle(self):
        rng = np.random.default_rng(6)
        rows = rng.standard_normal((128, 9)).astype(np.float32)
        sink = NormAccumulator()
        for row in rows:
            sink.record(ProjectionId(1, "d"), row[None, :])
        sink.count_tokens(128)
        norms = finalize_norms(sink)
        np.testing.assert_allclose(
            norms.for_projection(ProjectionId(1, "d")),
            tensor.column_l2_norms(rows),
            atol=1e-5,
        )

    def test_order_independent(self):
        rng = np.random.default_rng(8)
        rows = rng.standard_normal((32, 5)).astype(np.float32)
        a, b = NormAccumulator(), NormAccumulator()
        pid = ProjectionId(0, "u")
        for row in rows:
            a.record(pid, row[None, :])
        for row in rows[::-1]:
            b.record(pid, row[None, :])
        a.count_tokens(32)
        b.count_tokens(32)
        np.testing.assert_allclose(
            finalize_norms(a).for_projection(pid),
            finalize_norms(b).for_projection(pid),
            atol=1e-6,
        )

    def test_merge_equals_single_accumulator(self):
        rng = np.random.default_rng(9)
        rows = rng.standard_normal((20, 4)).astype(np.float32)
        pid = ProjectionId(0, "g")
        whole = NormAccumulator()
        whole.record(pid, rows)
        whole.count_tokens(20)
        left, right = NormAccumulator(), NormAccumulator()
        left.record(pid, rows[:11])
        left.count_tokens(11)
        right.record(pid, rows[11:])
        right.count_tokens(9)
        left.merge(right)
        assert left.token_count == 20
        np.testing.assert_allclose(
            finalize_norms(left).for_projection(pid),
            finalize_norms(whole).for_projection(pid),
            atol=1e-9,
        )

    def test_empty_accumulator_rejected(self):
        with pytest.raises(StateError):
            finalize_norms(NormAccumulator())


class TestModelPlumbing:
    def test_fingerprint_changes_with_weights(self):
        model = random_model(tiny_config(), seed=10)
        fp = fingerprint(model)
        other = clone_model(model)
        assert fingerprint(other) == fp
        other.layers[0].q[0, 0] += 1.0
        assert fingerprint(other) != fp

    def test_config_validation(self):
        with pytest.raises(InputError):
            ModelConfig(
                n_layers=1, d_model=9, n_heads=2, head_dim=4, d_ff=8,
                vocab_size=5, max_seq_len=8,
            ).validate()

    def test_activation_norms_lookup_error(self):
        norms = ActivationNorms(norms={}, token_count=1)
        with pytest.raises(InputError):
            norms.for_projection(ProjectionId(0, "q"))
