import math

import numpy as np
import pytest

from valid_decoding.core import normalize
from valid_decoding.errors import (
    DimensionMismatch,
    EmptySelection,
    MissingLayer,
    ValidError,
)
from valid_decoding.fusion import (
    BUCKET_PRESETS,
    CandidateBucket,
    fusion_weights,
    load_bucket_config,
    reference_distribution,
    select_top_k,
)

from oracles import naive_fusion_weights


def dist_for_entropy_order(rng, v=8):
    return normalize(rng.random(v) + 1e-12)


def make_per_layer(entropy_targets):
    """Distributions over 3 tokens whose entropy is controlled by a
    mixing parameter: closer to uniform = higher entropy."""
    out = {}
    for layer, t in entropy_targets.items():
        p = np.array([1.0 - t, t / 2, t / 2])
        out[layer] = p / p.sum()
    return out


class TestCandidateBucket:
    def test_rejects_standard_inside(self):
        with pytest.raises(ValidError):
            CandidateBucket(layers=(1, 2, 3), standard_layer=2)

    def test_rejects_unsorted(self):
        with pytest.raises(ValidError):
            CandidateBucket(layers=(3, 1), standard_layer=5)

    def test_rejects_empty(self):
        with pytest.raises(ValidError):
            CandidateBucket(layers=(), standard_layer=5)

    def test_presets(self):
        assert BUCKET_PRESETS["llava-v1.5"].layers == (13, 15, 17, 19, 21, 23, 25)
        assert BUCKET_PRESETS["llava-v1.5"].standard_layer == 24
        assert BUCKET_PRESETS["instructblip"].layers == (29, 31, 33, 35, 37, 39)
        for preset in BUCKET_PRESETS.values():
            assert preset.standard_layer not in preset.layers


class TestSelectTopK:
    def test_entropy_sorted(self):
        per_layer = {13: None, 15: None, 17: None}
        bucket = CandidateBucket(layers=(13, 15, 17), standard_layer=24)
        ents = {13: 0.2, 15: 1.1, 17: 0.7}
        got = select_top_k(per_layer, bucket, 2, entropies=ents)
        assert got == [(15, 1.1), (17, 0.7)]

    def test_k_equals_bucket(self):
        per_layer = {13: None, 15: None, 17: None}
        bucket = CandidateBucket(layers=(13, 15, 17), standard_layer=24)
        ents = {13: 0.2, 15: 1.1, 17: 0.7}
        got = select_top_k(per_layer, bucket, 3, entropies=ents)
        assert [l for l, _ in got] == [15, 17, 13]

    def test_tie_prefers_deeper_layer(self):
        per_layer = {13: None, 15: None}
        bucket = CandidateBucket(layers=(13, 15), standard_layer=24)
        got = select_top_k(per_layer, bucket, 1, entropies={13: 0.5, 15: 0.5})
        assert got == [(15, 0.5)]
        # exhaustive: every equal-entropy pair resolves to the larger index
        for a in range(1, 6):
            for b in range(a + 1, 7):
                bucket = CandidateBucket(layers=(a, b), standard_layer=20)
                got = select_top_k({a: None, b: None}, bucket, 1,
                                   entropies={a: 1.0, b: 1.0})
                assert got[0][0] == b

    def test_missing_layer(self):
        bucket = CandidateBucket(layers=(13, 15), standard_layer=24)
        with pytest.raises(MissingLayer):
            select_top_k({13: np.array([0.5, 0.5])}, bucket, 1)

    def test_stable_reruns(self):
        rng = np.random.default_rng(2)
        per_layer = {l: dist_for_entropy_order(rng) for l in (1, 3, 5, 7)}
        bucket = CandidateBucket(layers=(1, 3, 5, 7), standard_layer=9)
        first = select_top_k(per_layer, bucket, 3)
        for _ in range(5):
            assert select_top_k(per_layer, bucket, 3) == first


class TestFusionWeights:
    def test_equal_entropies_uniform(self):
        w = fusion_weights([(1, 0.5), (2, 0.5), (3, 0.5)])
        assert all(wi == pytest.approx(1 / 3, abs=1e-12) for wi in w.values())

    def test_hand_evaluated(self):
        w = fusion_weights([(1, 1.0), (2, 2.0)])
        assert w[1] == pytest.approx(0.26894, abs=1e-5)
        assert w[2] == pytest.approx(0.73106, abs=1e-5)

    def test_single_layer(self):
        assert fusion_weights([(7, 2.5)]) == {7: 1.0}

    def test_empty_selection(self):
        with pytest.raises(EmptySelection):
            fusion_weights([])

    def test_matches_oracle_and_sums_to_one(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            hs = list(rng.random(int(rng.integers(1, 10))) * 5)
            w = fusion_weights([(i, h) for i, h in enumerate(hs)])
            oracle = naive_fusion_weights(hs)
            assert sum(w.values()) == pytest.approx(1.0, abs=1e-12)
            for i, o in enumerate(oracle):
                assert w[i] == pytest.approx(o, abs=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            hs = rng.random(5) * 3
            c = rng.normal() * 10
            w1 = fusion_weights(list(enumerate(hs)))
            w2 = fusion_weights(list(enumerate(hs + c)))
            for i in range(5):
                assert w1[i] == pytest.approx(w2[i], abs=1e-12)

    def test_monotone_in_entropy(self):
        w = fusion_weights([(1, 0.2), (2, 0.9), (3, 1.7)])
        assert w[1] < w[2] < w[3]


class TestReferenceDistribution:
    def test_identity_weight(self):
        p = np.array([0.2, 0.3, 0.5])
        got = reference_distribution({5: p}, {5: 1.0})
        assert np.array_equal(got, p)

    def test_midpoint(self):
        got = reference_distribution(
            {1: np.array([1.0, 0.0]), 2: np.array([0.0, 1.0])}, {1: 0.5, 2: 0.5}
        )
        assert np.allclose(got, [0.5, 0.5], atol=1e-15)

    def test_hand_evaluated_weighted_sum(self):
        got = reference_distribution(
            {1: np.array([0.9, 0.1]), 2: np.array([0.1, 0.9])},
            {1: 0.26894, 2: 0.73106},
        )
        assert np.allclose(got, [0.31515, 0.68485], atol=1e-5)

    def test_convex_combination_is_valid(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            v = int(rng.integers(2, 30))
            n = int(rng.integers(1, 6))
            per_layer = {i: normalize(rng.random(v) + 1e-12) for i in range(n)}
            w = naive_fusion_weights(list(rng.random(n)))
            got = reference_distribution(per_layer, dict(enumerate(w)))
            assert (got >= 0).all()
            assert abs(got.sum() - 1.0) < 1e-9

    def test_uniform_weights_equal_mean(self):
        rng = np.random.default_rng(10)
        per_layer = {i: normalize(rng.random(12)) for i in range(4)}
        got = reference_distribution(per_layer, {i: 0.25 for i in range(4)})
        mean = np.mean([per_layer[i] for i in range(4)], axis=0)
        assert np.allclose(got, mean, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            reference_distribution(
                {1: np.array([0.5, 0.5]), 2: np.array([0.3, 0.3, 0.4])},
                {1: 0.5, 2: 0.5},
            )

    def test_missing_layer(self):
        with pytest.raises(MissingLayer):
            reference_distribution({1: np.array([1.0])}, {2: 1.0})


class TestBucketConfig:
    def test_roundtrip(self, tmp_path):
        cfg = tmp_path / "buckets.txt"
        cfg.write_text(
            "# comment\n"
            "my-model = 3,5,7 @ 9\n"
            "\n"
            "other = 10,11 @ 12  # trailing comment\n"
        )
        buckets = load_bucket_config(cfg)
        assert buckets["my-model"].layers == (3, 5, 7)
        assert buckets["my-model"].standard_layer == 9
        assert buckets["other"].layers == (10, 11)

    def test_malformed_line(self, tmp_path):
        cfg = tmp_path / "bad.txt"
        cfg.write_text("nope\n")
        with pytest.raises(ValidError):
            load_bucket_config(cfg)
