import numpy as np
import pytest

from mosaic.errors import InputError, ShapeError
from mosaic.model import (
    PROJECTION_KINDS,
    ActivationNorms,
    ProjectionId,
    clone_model,
    random_model,
)
from mosaic.ranking import (
    CalibrationInfo,
    build_global_rank,
    build_layer_rank,
    count_layer_outliers,
    count_projection_outliers,
    normalize_ranks,
    uniform_rank,
    weight_metric,
)
from tests.test_model import tiny_config


def scan_outliers(metric, alpha, mean=None):
    """Pure-python full scan; mean computed with a plain accumulator."""
    flat = [float(v) for v in np.asarray(metric).ravel()]
    if mean is None:
        mean = sum(flat) / len(flat)
    return sum(1 for v in flat if v > alpha * mean)


def ones_norms(model):
    return ActivationNorms(
        norms={
            pid: np.ones(model.projection(pid).shape[1], np.float32)
            for pid in model.projection_ids()
        },
        token_count=1,
    )


class TestWeightMetric:
    def test_zero_weights(self):
        out = weight_metric(np.zeros((3, 2), np.float32), np.ones(2, np.float32))
        assert np.array_equal(out, np.zeros((3, 2)))

    def test_small_example(self):
        out = weight_metric(
            np.array([[1.0, -2.0]], np.float32), np.array([3.0, 1.0], np.float32)
        )
        assert np.array_equal(out, [[3.0, 2.0]])

    def test_matches_double_loop(self):
        rng = np.random.default_rng(0)
        w = rng.standard_normal((6, 4)).astype(np.float32)
        norms = np.abs(rng.standard_normal(4)).astype(np.float32)
        got = weight_metric(w, norms)
        for i in range(6):
            for j in range(4):
                assert abs(got[i, j] - abs(float(w[i, j])) * float(norms[j])) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            weight_metric(np.ones((2, 3), np.float32), np.ones(2, np.float32))


class TestProjectionOutliers:
    def test_constant_metric_has_none(self):
        assert count_projection_outliers(np.full((3, 3), 2.0), 5.0) == 0

    def test_single_spike(self):
        metric = np.array([10.0] + [1.0] * 9)  # mean 1.9, threshold 9.5
        assert count_projection_outliers(metric, 5.0) == 1

    def test_matches_full_scan_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            rows, cols = rng.integers(1, 33, size=2)
            metric = np.abs(rng.standard_normal((rows, cols))) ** 3
            for alpha in (3.0, 5.0, 7.0):
                assert count_projection_outliers(metric, alpha) == scan_outliers(
                    metric, alpha, mean=float(np.mean(metric))
                )

    def test_alpha_validation(self):
        with pytest.raises(InputError):
            count_projection_outliers(np.ones(3), 0.0)

    def test_count_below_param_count_for_alpha_ge_one(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            metric = np.abs(rng.standard_normal(rng.integers(1, 64)))
            assert count_projection_outliers(metric, 1.0) < metric.size


class TestLayerOutliers:
    def metrics_for(self, model, layer, norms):
        return {
            kind: weight_metric(
                model.projection(ProjectionId(layer, kind)),
                norms.for_projection(ProjectionId(layer, kind)),
            )
            for kind in PROJECTION_KINDS
        }

    def test_constant_layer(self):
        metrics = {k: np.full((4, 4), 1.0) for k in PROJECTION_KINDS}
        assert count_layer_outliers(metrics, 5.0) == 0

    def test_dominant_projection_counted_whole(self):
        metrics = {k: np.full((4, 4), 1.0) for k in PROJECTION_KINDS}
        metrics["k"] = np.full((4, 4), 100.0)
        # layer mean is (6 + 100)/7; alpha=3 puts the threshold near 45
        assert count_layer_outliers(metrics, 3.0) == 16

    def test_matches_concatenation_oracle(self):
        model = random_model(tiny_config(), seed=3, scale=0.4)
        norms = ones_norms(model)
        metrics = self.metrics_for(model, 0, norms)
        flat = np.concatenate([metrics[k].ravel() for k in PROJECTION_KINDS])
        for alpha in (3.0, 5.0, 7.0):
            assert count_layer_outliers(metrics, alpha) == scan_outliers(
                flat, alpha, mean=float(np.mean(flat))
            )

    def test_missing_projection_rejected(self):
        metrics = {k: np.ones((2, 2)) for k in PROJECTION_KINDS[:-1]}
        with pytest.raises(InputError):
            count_layer_outliers(metrics, 5.0)


class TestNormalization:
    def test_two_entry_example(self):
        entries, degenerate = normalize_ranks(np.array([2.0, 6.0]))
        assert not degenerate
        np.testing.assert_allclose(entries, [0.5, 1.5])

    def test_all_zero_falls_back_to_ones(self):
        entries, degenerate = normalize_ranks(np.zeros(5))
        assert degenerate
        assert np.array_equal(entries, np.ones(5))


class TestGlobalRank:
    def test_constant_model_degenerates_to_uniform(self):
        model = random_model(tiny_config(), seed=0)
        for pid in model.projection_ids():
            w = model.projection(pid)
            model.set_projection(pid, np.full_like(w, 0.25))
        rank = build_global_rank(model, ones_norms(model), 5.0)
        assert rank.degenerate
        assert np.array_equal(rank.entries, np.ones_like(rank.entries))

    def test_matches_naive_end_to_end_oracle(self):
        model = random_model(tiny_config(), seed=11, scale=0.5)
        rng = np.random.default_rng(4)
        norms = ActivationNorms(
            norms={
                pid: np.abs(rng.standard_normal(model.projection(pid).shape[1]))
                .astype(np.float32)
                for pid in model.projection_ids()
            },
            token_count=3,
        )
        alpha = 5.0
        rank = build_global_rank(model, norms, alpha)

        raw = np.zeros((2, 7))
        for n in range(2):
            for m, kind in enumerate(PROJECTION_KINDS):
                w = model.projection(ProjectionId(n, kind))
                nv = norms.for_projection(ProjectionId(n, kind))
                metric = [
                    abs(float(w[i, j])) * float(nv[j])
                    for i in range(w.shape[0])
                    for j in range(w.shape[1])
                ]
                mean = sum(metric) / len(metric)
                outliers = sum(1 for v in metric if v > alpha * mean)
                raw[n, m] = 100.0 * outliers / len(metric)
        want = raw / raw.mean()
        np.testing.assert_allclose(rank.entries, want, atol=1e-6)
        assert abs(rank.entries.mean() - 1.0) < 1e-9

    def test_scale_invariance_of_counts(self):
        model = random_model(tiny_config(), seed=21, scale=0.3)
        norms = ones_norms(model)
        base = build_global_rank(model, norms, 5.0)
        for c in (0.01, 100.0):
            scaled = clone_model(model)
            pid = ProjectionId(1, "u")
            scaled.set_projection(pid, scaled.projection(pid) * np.float32(c))
            rank = build_global_rank(scaled, norms, 5.0)
            np.testing.assert_array_equal(rank.raw_ranks, base.raw_ranks)

    def test_permutation_equivariance(self):
        model = random_model(tiny_config(), seed=31, scale=0.4)
        rng = np.random.default_rng(5)
        norms = {}
        for pid in model.projection_ids():
            norms[pid] = np.abs(rng.standard_normal(model.projection(pid).shape[1])).astype(
                np.float32
            )
        swapped = clone_model(model)
        swapped.layers = [swapped.layers[1], swapped.layers[0]]
        swapped_norms = {
            ProjectionId(1 - pid.layer, pid.kind): vec for pid, vec in norms.items()
        }
        a = build_global_rank(model, ActivationNorms(norms, 2), 5.0)
        b = build_global_rank(swapped, ActivationNorms(swapped_norms, 2), 5.0)
        np.testing.assert_array_equal(a.entries, b.entries[::-1])

    def test_digest_is_deterministic(self):
        model = random_model(tiny_config(), seed=41)
        norms = ones_norms(model)
        cal = CalibrationInfo(4, 16, "toy")
        a = build_global_rank(model, norms, 5.0, cal)
        b = build_global_rank(model, norms, 5.0, cal)
        assert a.digest() == b.digest()


class TestLayerRank:
    def test_rows_are_constant_per_layer(self):
        model = random_model(tiny_config(), seed=51, scale=0.5)
        rng = np.random.default_rng(6)
        norms = ActivationNorms(
            norms={
                pid: np.abs(rng.standard_normal(model.projection(pid).shape[1]))
                .astype(np.float32)
                for pid in model.projection_ids()
            },
            token_count=2,
        )
        layer_rank = build_layer_rank(model, norms, 5.0)
        expanded = layer_rank.as_global_rank()
        assert np.all(expanded.entries == expanded.entries[:, :1])
        assert abs(expanded.entries.mean() - 1.0) < 1e-9

    def test_uniform_rank_is_degenerate(self):
        model = random_model(tiny_config(), seed=61)
        rank = uniform_rank(model)
        assert rank.degenerate
        assert np.array_equal(rank.entries, np.ones_like(rank.entries))
