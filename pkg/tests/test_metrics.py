"""Tests for invarlab.metrics — invariance, equivariance alignment and SimChange."""

import math

import numpy as np
import pytest

from invarlab.embedders import HistogramEmbedder, NoiseEmbedder, PixelEmbedder, SeededConvEmbedder
from invarlab.errors import DegenerateBaseline, DegenerateEmbedding, InsufficientSamples
from invarlab.metrics import (
    EmbeddingCache,
    MetricDistribution,
    PairSet,
    Sample,
    cosine_distance,
    cosine_similarity,
    equivariance_alignment,
    invariance,
    sample_pairs,
    simchange,
)
from invarlab.seeds import derive_rng
from invarlab.transforms import CyclicShift, SubPolicy, TransformSpec


def _samples(n: int, size: int = 8, classes: int = 2, seed: int = 0) -> list[Sample]:
    rng = np.random.default_rng(seed)
    return [Sample(f"s{i:02d}", f"c{i % classes}", rng.random((size, size, 3))) for i in range(n)]


def _structured(n: int = 5) -> list[Sample]:
    """x_i = 0.5 + a_i * p for a fixed +-0.4 pattern p, so 2x_i - 1 is parallel across samples."""
    pattern = np.where(np.arange(48).reshape(4, 4, 3) % 3 == 0, 0.4, -0.4)
    return [Sample(f"s{i}", "c", 0.5 + (0.2 * (i + 1)) * pattern) for i in range(n)]


class CountingPixel(PixelEmbedder):
    def __init__(self):
        super().__init__()
        self.calls = 0

    def _features(self, img):
        self.calls += 1
        return super()._features(img)


class TestCosine:
    def test_identical_vectors(self):
        v = np.array([0.1, 0.7, 0.3])
        assert cosine_similarity(v, v) == 1.0
        assert cosine_distance(v, v) == 0.0

    def test_orthogonal(self):
        assert cosine_distance(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == pytest.approx(1.0)


class TestInvariance:
    def test_identity_gives_one(self, samples16, rng):
        dist = invariance(SeededConvEmbedder(input_size=16), samples16, TransformSpec("rotate", 0), rng)
        assert np.all(dist.values == 1.0)
        assert dist.n == len(samples16)

    def test_gap_conv_invariant_to_cyclic_shift(self, rng):
        dist = invariance(SeededConvEmbedder(input_size=8, pooling="gap"), _samples(10), CyclicShift(3, 1), rng)
        assert np.allclose(dist.values, 1.0, atol=1e-5)

    def test_noise_provider_centered_at_zero(self):
        dist = invariance(NoiseEmbedder(dim=64), _samples(60), TransformSpec("rotate", 5), derive_rng(7))
        # the shared baseline carries as much noise as the distances
        assert abs(dist.mean) < 3 * math.sqrt(2) * dist.sem

    def test_never_above_one(self, samples16, rng):
        dist = invariance(SeededConvEmbedder(input_size=16), samples16, TransformSpec("shearX", 6, "-"), rng)
        assert dist.values.max() <= 1.0 + 1e-12
        assert dist.metadata["baseline"] > 0

    def test_reproducible(self, samples16):
        provider = SeededConvEmbedder(input_size=16)
        spec = TransformSpec("contrast", 4)
        a = invariance(provider, samples16, spec, derive_rng(3), budget=8)
        b = invariance(provider, samples16, spec, derive_rng(3), budget=8, jobs=4)
        assert np.array_equal(a.values, b.values)
        assert a.n == 8

    def test_per_pair_baseline(self, samples16, rng):
        dist = invariance(HistogramEmbedder(), samples16, TransformSpec("invert", 1), rng, per_pair_baseline=True)
        assert dist.excluded == 0
        assert dist.metadata["per_pair_baseline"]
        assert dist.values.max() <= 1.0

    def test_needs_two_samples(self, rng):
        with pytest.raises(InsufficientSamples):
            invariance(PixelEmbedder(), _samples(1), TransformSpec("invert", 1), rng)

    def test_zero_norm_embedding(self, rng):
        samples = _samples(3, size=4)
        samples[1] = Sample("black", "c0", np.zeros((4, 4, 3)))
        with pytest.raises(DegenerateEmbedding) as exc:
            invariance(PixelEmbedder(), samples, TransformSpec("contrast", 1), rng)
        assert exc.value.sample_id == "black"

    def test_degenerate_baseline(self, rng):
        img = np.full((4, 4, 3), 0.5)
        samples = [Sample(f"s{i}", "c", img.copy()) for i in range(4)]
        with pytest.raises(DegenerateBaseline):
            invariance(PixelEmbedder(), samples, TransformSpec("rotate", 0), rng)


class TestEquivariance:
    def test_structured_differences_align(self, rng):
        dist = equivariance_alignment(PixelEmbedder(), _structured(), TransformSpec("invert", 5), rng)
        assert dist.n == 10
        assert dist.metadata["mean_aligned"] == pytest.approx(1.0)
        assert dist.mean > 0.0
        assert np.all(dist.values >= -1e-12)

    def test_sign_flip(self):
        plus = equivariance_alignment(PixelEmbedder(), _structured(), TransformSpec("invert", 5), derive_rng(1))
        minus = equivariance_alignment(PixelEmbedder(), _structured(), TransformSpec("invert", 5), derive_rng(1), sign=-1)
        assert np.array_equal(plus.values, -minus.values)

    def test_identity_all_degenerate(self, rng):
        samples = _samples(6)
        dist = equivariance_alignment(PixelEmbedder(), samples, TransformSpec("rotate", 0), rng)
        assert dist.n == 0
        assert dist.excluded == 6
        assert dist.metadata["all_degenerate"]
        assert math.isnan(dist.metadata["p_value"])

    def test_gap_conv_differences_degenerate(self, rng):
        provider = SeededConvEmbedder(input_size=8, pooling="gap")
        dist = equivariance_alignment(provider, _samples(6), CyclicShift(2, 0), rng)
        assert dist.metadata["degenerate_differences"] == 6

    def test_budget(self, rng):
        dist = equivariance_alignment(PixelEmbedder(), _samples(10), TransformSpec("invert", 1), rng, budget=7)
        assert dist.n == 7

    def test_needs_three_samples(self, rng):
        with pytest.raises(InsufficientSamples):
            equivariance_alignment(PixelEmbedder(), _samples(2), TransformSpec("invert", 1), rng)

    def test_bad_sign(self, rng):
        with pytest.raises(ValueError):
            equivariance_alignment(PixelEmbedder(), _samples(4), TransformSpec("invert", 1), rng, sign=0)


class TestPairs:
    def test_same_class_pairs(self, samples16, rng):
        pairs = sample_pairs(samples16, None, rng)
        # three classes of four samples, 4 * 3 ordered pairs each
        assert len(pairs) == 36
        for i, j in pairs.pairs:
            assert i != j
            assert samples16[i].label == samples16[j].label

    def test_budget_per_class(self, samples16, rng):
        pairs = sample_pairs(samples16, 5, rng)
        assert len(pairs) == 15
        assert len({tuple(p) for p in pairs.pairs.tolist()}) == 15

    def test_all_pairs_ignore_rng(self, samples16):
        a = sample_pairs(samples16, None, derive_rng(1))
        b = sample_pairs(samples16, 100, derive_rng(2))
        assert np.array_equal(a.pairs, b.pairs)

    def test_cross_class(self, samples16, rng):
        pairs = sample_pairs(samples16, None, rng, same_class=False)
        assert len(pairs) == 12 * 11
        assert not pairs.same_class_only

    def test_singleton_class_skipped(self, rng):
        samples = _samples(3, classes=3)
        assert len(sample_pairs(samples, None, rng)) == 0


class TestSimChange:
    def test_identity_is_zero(self, samples16, rng):
        pairs = sample_pairs(samples16, None, rng)
        dist = simchange(SeededConvEmbedder(input_size=16), samples16, pairs, TransformSpec("rotate", 0))
        assert np.all(dist.values == 0.0)
        assert dist.metadata["n_pairs"] == 36

    def test_position_free_provider(self, samples16, rng):
        pairs = sample_pairs(samples16, None, rng)
        dist = simchange(HistogramEmbedder(), samples16, pairs, CyclicShift(5, 3))
        assert np.allclose(dist.values, 0.0, atol=1e-6)

    def test_matches_definition(self, samples16, rng):
        provider = SeededConvEmbedder(input_size=16, pooling="gap")
        spec = TransformSpec("solarize", 6)
        pairs = sample_pairs(samples16, 2, rng)
        dist = simchange(provider, samples16, pairs, spec)
        i, j = pairs.pairs[0]
        x1, x2 = samples16[i].image, samples16[j].image
        s0 = cosine_similarity(provider.embed(x1), provider.embed(x2))
        s1 = cosine_similarity(provider.embed(x1), provider.embed_sample("x", x2, spec))
        assert dist.values[0] == pytest.approx((s1 - s0) / s0, rel=1e-6, abs=1e-12)

    def test_not_symmetric_in_general(self, samples16):
        provider = SeededConvEmbedder(input_size=16)
        spec = TransformSpec("rotate", 7)
        forward = PairSet(np.array([[0, 3]]), ["c0"])
        backward = PairSet(np.array([[3, 0]]), ["c0"])
        a = simchange(provider, samples16, forward, spec).values[0]
        b = simchange(provider, samples16, backward, spec).values[0]
        assert a != pytest.approx(b)

    def test_subpolicy(self, samples16, rng):
        pairs = sample_pairs(samples16, 3, rng)
        sp = SubPolicy(TransformSpec("invert", 1), TransformSpec("invert", 1))
        dist = simchange(PixelEmbedder(), samples16, pairs, sp)
        assert np.allclose(dist.values, 0.0, atol=1e-12)
        assert dist.summary()["kind"] == "subpolicy"

    def test_zero_norm_pairs_excluded(self, rng):
        samples = _samples(4, size=4, classes=1)
        samples[2] = Sample("black", "c0", np.zeros((4, 4, 3)))
        pairs = sample_pairs(samples, None, rng)
        dist = simchange(PixelEmbedder(), samples, pairs, TransformSpec("contrast", 2))
        # every ordered pair touching the black sample
        assert dist.metadata["degenerate_embedding"] == 6
        assert dist.n == 6

    def test_embeds_each_image_once(self, samples16, rng):
        provider = CountingPixel()
        cache = EmbeddingCache(provider)
        pairs = sample_pairs(samples16, None, rng)
        simchange(provider, samples16, pairs, TransformSpec("invert", 1), cache=cache)
        simchange(provider, samples16, pairs, TransformSpec("invert", 1), cache=cache)
        assert provider.calls == 2 * len(samples16)


class TestDistribution:
    def test_statistics(self):
        dist = MetricDistribution("simchange", TransformSpec("rotate", 2, "-"), np.array([1.0, 2.0, 3.0, 4.0]),
                                  ["a", "a", "b", "b"])
        assert dist.mean == 2.5
        assert dist.sem == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
        assert dist.quantiles["q50"] == 2.5

    def test_rows(self):
        dist = MetricDistribution("invariance", TransformSpec("rotate", 2, "-"), np.array([1.0, 2.0, 3.0]),
                                  ["b", "a", "b"], excluded=1)
        rows = dist.rows()
        assert [r["class"] for r in rows] == ["all", "a", "b"]
        assert rows[0]["excluded"] == 1
        assert rows[0]["kind"] == "rotate" and rows[0]["sign"] == "-"
        assert rows[2]["mean"] == 2.0

    def test_empty(self):
        dist = MetricDistribution("simchange", None, np.zeros(0))
        assert math.isnan(dist.mean) and math.isnan(dist.sem)
        assert dist.quantiles == {}
