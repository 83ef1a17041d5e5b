import dataclasses
import json

import numpy as np
import pytest

from valid_decoding.contrast import ContrastConfig, contrast
from valid_decoding.decode import (
    K_ALL,
    MODE_VALID,
    MODE_VALID_THEN_VCD,
    MODE_VANILLA,
    MODE_VCD,
    MODE_VCD_THEN_VALID,
    SynthSpec,
    ValidConfig,
    decode_question,
    synth_corpus,
    synth_trace,
)
from valid_decoding.errors import InvalidSpec, MissingNoiseChannel, ValidError
from valid_decoding.fusion import CandidateBucket
from valid_decoding.traceio import (
    STORAGE_PROBS,
    StepRecord,
    TraceHeader,
    materialize_step,
)

from oracles import naive_valid_token


def spec_bucket(spec):
    return CandidateBucket(layers=spec.layers, standard_layer=spec.standard_layer)


def corpus(count=50, seed=7, **kw):
    return list(synth_corpus(count, seed, SynthSpec(**kw)))


def make_noise_trace(rng, v=8, steps_n=2):
    layer_ids = (1, 2, 3)
    header = TraceHeader(
        vocab_size=v,
        layer_ids=layer_ids,
        standard_layer=3,
        step_count=steps_n,
        has_noise_channel=True,
        storage=STORAGE_PROBS,
        question_id="noisy",
    )
    steps = []
    for _ in range(steps_n):
        rows = rng.random((3, v)).astype(np.float32) + np.float32(0.01)
        rows /= rows.sum(axis=1, keepdims=True)
        noise = rng.random(v).astype(np.float32) + np.float32(0.01)
        noise /= noise.sum()
        steps.append(StepRecord(rows, int(rng.integers(0, v)), noise_ref=noise))
    return header, steps


class TestVanilla:
    def test_emits_standard_argmax(self):
        for spec, header, steps, _ in corpus(20):
            out = decode_question(header, steps, ValidConfig(mode=MODE_VANILLA))
            p_ori = materialize_step(header, steps[0])[header.standard_layer]
            assert out.emitted_tokens == [int(np.argmax(p_ori))]

    def test_token_count_matches_steps_all_modes(self):
        rng = np.random.default_rng(0)
        header, steps = make_noise_trace(rng, steps_n=4)
        bucket = CandidateBucket(layers=(1, 2), standard_layer=3)
        for mode in (MODE_VANILLA, MODE_VALID, MODE_VCD,
                     MODE_VCD_THEN_VALID, MODE_VALID_THEN_VCD):
            cfg = ValidConfig(mode=mode, bucket=bucket)
            out = decode_question(header, steps, cfg)
            assert len(out.emitted_tokens) == header.step_count
            assert len(out.diagnostics) == header.step_count


class TestAlphaZero:
    def test_valid_equals_vanilla(self):
        for spec, header, steps, _ in corpus(50):
            cfg = ValidConfig(
                mode=MODE_VALID,
                bucket=spec_bucket(spec),
                contrast=ContrastConfig(alpha=0.0),
            )
            valid_out = decode_question(header, steps, cfg)
            vanilla_out = decode_question(header, steps, ValidConfig(mode=MODE_VANILLA))
            assert valid_out.emitted_tokens == vanilla_out.emitted_tokens


class TestSyntheticFlip:
    def test_engine_matches_brute_force_oracle(self):
        for spec, header, steps, _ in corpus(100, seed=42, distortion=0.6):
            cfg = ValidConfig(mode=MODE_VALID, bucket=spec_bucket(spec))
            out = decode_question(header, steps, cfg)
            per_layer = {
                l: list(d) for l, d in materialize_step(header, steps[0]).items()
            }
            oracle = naive_valid_token(
                per_layer, spec.standard_layer, list(spec.layers),
                cfg.contrast.alpha, cfg.contrast.beta,
            )
            assert out.emitted_tokens[0] == oracle

    def test_flip_band(self):
        # d=0: vanilla already correct; d=0.6: vanilla wrong, corrected right
        spec0 = SynthSpec(distortion=0.0, jitter=0.0)
        h0, s0 = synth_trace(spec0, 1)
        out = decode_question(h0, s0, ValidConfig(mode=MODE_VANILLA))
        assert out.emitted_tokens[0] == spec0.correct_token

        spec6 = SynthSpec(distortion=0.6, jitter=0.0)
        h6, s6 = synth_trace(spec6, 1)
        vanilla = decode_question(h6, s6, ValidConfig(mode=MODE_VANILLA))
        valid = decode_question(
            h6, s6, ValidConfig(mode=MODE_VALID, bucket=spec_bucket(spec6))
        )
        assert vanilla.emitted_tokens[0] == spec6.wrong_token
        assert valid.emitted_tokens[0] == spec6.correct_token

    def test_valid_beats_vanilla_on_corpus(self):
        n_vanilla = n_valid = 0
        for spec, header, steps, _ in corpus(100, seed=42, distortion=0.6):
            vanilla = decode_question(header, steps, ValidConfig(mode=MODE_VANILLA))
            valid = decode_question(
                header, steps, ValidConfig(mode=MODE_VALID, bucket=spec_bucket(spec))
            )
            n_vanilla += vanilla.emitted_tokens[0] == spec.correct_token
            n_valid += valid.emitted_tokens[0] == spec.correct_token
        assert n_valid > n_vanilla


class TestSynthDeterminism:
    def test_same_spec_same_seed_identical(self):
        spec = SynthSpec()
        h1, s1 = synth_trace(spec, 99)
        h2, s2 = synth_trace(spec, 99)
        assert h1 == h2
        assert s1[0] == s2[0]

    def test_spec_validation(self):
        with pytest.raises(InvalidSpec):
            SynthSpec(distortion=1.5)
        with pytest.raises(InvalidSpec):
            SynthSpec(correct_token=99)
        with pytest.raises(InvalidSpec):
            SynthSpec(correct_token=1, wrong_token=1)
        with pytest.raises(InvalidSpec):
            SynthSpec(standard_layer=13)

    def test_decode_determinism_byte_level(self):
        spec, header, steps, _ = corpus(1, seed=5)[0]
        cfg = ValidConfig(mode=MODE_VALID, bucket=spec_bucket(spec))
        a = decode_question(header, steps, cfg)
        b = decode_question(header, steps, cfg)
        assert json.dumps(a.to_json_obj(), sort_keys=True) == json.dumps(
            b.to_json_obj(), sort_keys=True
        )


class TestModeLattice:
    def test_k1_equals_single_layer_contrast(self):
        # k=1 must equal contrasting against the single highest-entropy layer,
        # cross-checked against a hand-rolled one-layer path
        for spec, header, steps, _ in corpus(20, seed=11):
            cfg = ValidConfig(mode=MODE_VALID, bucket=spec_bucket(spec), k=1)
            out = decode_question(header, steps, cfg)

            per_layer = materialize_step(header, steps[0])
            from valid_decoding.core import entropy

            best = max(
                spec.layers, key=lambda l: (entropy(per_layer[l]), l)
            )
            res = contrast(per_layer[spec.standard_layer], per_layer[best], cfg.contrast)
            assert out.emitted_tokens[0] == int(np.argmax(res.p_valid))


class TestComposedModes:
    def test_missing_noise_channel(self):
        spec, header, steps, _ = corpus(1)[0]
        cfg = ValidConfig(mode=MODE_VCD, bucket=spec_bucket(spec))
        with pytest.raises(MissingNoiseChannel):
            decode_question(header, steps, cfg)

    def test_composed_orders_disagree_by_claim_identity(self):
        from valid_decoding.contrast import (
            ORDER_VALID_THEN_VCD,
            ORDER_VCD_THEN_VALID,
            compose_decode,
        )
        from valid_decoding.traceio import materialize_noise

        rng = np.random.default_rng(17)
        header, steps = make_noise_trace(rng)
        bucket = CandidateBucket(layers=(1, 2), standard_layer=3)
        cfg = ValidConfig(
            mode=MODE_VCD_THEN_VALID,
            bucket=bucket,
            contrast=ContrastConfig(alpha=0.3, truncation=False),
            alpha_vcd=0.7,
        )
        # reconstruct p_ref exactly as the engine does, then check the raw gap
        from valid_decoding.decode import _fuse_reference

        for step in steps:
            per_layer = materialize_step(header, step)
            p_ori = per_layer[3]
            p_noi = materialize_noise(header, step)
            p_ref, _ = _fuse_reference(per_layer, step, header, cfg)
            a = compose_decode(p_ori, p_ref, p_noi, ORDER_VCD_THEN_VALID, 0.7, 0.3)
            b = compose_decode(p_ori, p_ref, p_noi, ORDER_VALID_THEN_VCD, 0.7, 0.3)
            assert np.allclose(np.abs(a - b), 0.7 * 0.3 * np.abs(p_ref - p_noi), atol=1e-9)

    def test_composed_modes_run_and_differ_from_vanilla_config(self):
        rng = np.random.default_rng(23)
        header, steps = make_noise_trace(rng, steps_n=3)
        bucket = CandidateBucket(layers=(1, 2), standard_layer=3)
        outs = {}
        for mode in (MODE_VCD_THEN_VALID, MODE_VALID_THEN_VCD):
            cfg = ValidConfig(mode=mode, bucket=bucket)
            outs[mode] = decode_question(header, steps, cfg).emitted_tokens
        assert len(outs[MODE_VCD_THEN_VALID]) == 3


class TestConfigValidation:
    def test_mode_enum(self):
        with pytest.raises(ValidError):
            ValidConfig(mode="psychic")

    def test_temperature_positive(self):
        with pytest.raises(ValidError):
            ValidConfig(sampler="temperature", temperature=0.0)

    def test_bucket_required_for_valid_mode(self):
        spec, header, steps, _ = corpus(1)[0]
        with pytest.raises(ValidError):
            decode_question(header, steps, ValidConfig(mode=MODE_VALID, bucket=None))

    def test_temperature_sampler_is_seed_deterministic(self):
        spec, header, steps, _ = corpus(1, seed=3)[0]
        cfg = ValidConfig(
            mode=MODE_VALID,
            bucket=spec_bucket(spec),
            sampler="temperature",
            temperature=1.5,
            seed=123,
        )
        a = decode_question(header, steps, cfg)
        b = decode_question(header, steps, cfg)
        assert a.emitted_tokens == b.emitted_tokens
