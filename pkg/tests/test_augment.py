"""Tests for core.augment."""

import hashlib

import numpy as np
import pytest

from core.augment import (
    CATEGORIES,
    MaskSpec,
    NoiseCorpus,
    apply_rir,
    augment_online,
    build_offline_manifest,
    draw_online_policy,
    mix_at_snr,
    render_record,
    segment_corpus,
    spec_mask,
)
from core.config import FeatureConfig
from core.dsp import FeatureMatrix, Waveform
from core.errors import DegenerateDataError, InputError
from core.storage import read_augment_manifest, write_augment_manifest


def _snr_db(clean, mixed):
    noise = mixed - clean
    return 10.0 * np.log10(np.mean(clean ** 2) / np.mean(noise ** 2))


@pytest.fixture
def corpus(rng):
    corpus = NoiseCorpus()
    for category in ("speech", "music", "noise"):
        corpus.add_recording(category, Waveform(rng.normal(size=16000 * 11)))
    return corpus


class TestSegmentCorpus:
    def test_thirteen_seconds(self):
        pieces = segment_corpus(Waveform(np.arange(13 * 16000, dtype=np.float64)))
        assert len(pieces) == 3
        assert [int(p.samples[0]) for p in pieces] == [0, 48000, 96000]
        assert all(len(p) == 80000 for p in pieces)

    def test_exactly_five_seconds(self):
        assert len(segment_corpus(Waveform(np.ones(80000)))) == 1

    def test_too_short(self):
        assert segment_corpus(Waveform(np.ones(78400))) == []

    @pytest.mark.parametrize("seconds", [5, 6, 8, 11, 20, 31])
    def test_count_formula(self, seconds):
        expected = (seconds - 5) // 3 + 1
        assert len(segment_corpus(Waveform(np.ones(seconds * 16000)))) == expected


class TestMixAtSnr:
    def test_high_snr_is_nearly_clean(self, rng):
        clean = Waveform(rng.normal(size=8000))
        mixed = mix_at_snr(clean, [Waveform(rng.normal(size=8000))], 100.0, rng)
        rel = np.sqrt(np.mean((mixed.samples - clean.samples) ** 2) / np.mean(clean.samples ** 2))
        assert rel < 1e-4

    def test_achieved_snr(self, rng):
        for _ in range(20):
            clean = Waveform(rng.normal(size=4000) * rng.uniform(0.1, 2.0))
            noise = Waveform(rng.normal(size=int(rng.integers(1000, 9000))))
            snr = float(rng.uniform(-5.0, 30.0))
            mixed = mix_at_snr(clean, [noise], snr, rng)
            assert _snr_db(clean.samples, mixed.samples) == pytest.approx(snr, abs=0.01)

    def test_aggregate_of_several_sources(self, rng):
        clean = Waveform(rng.normal(size=6000))
        noises = [Waveform(rng.normal(size=6000)) for _ in range(3)]
        mixed = mix_at_snr(clean, noises, 13.0, rng)
        assert _snr_db(clean.samples, mixed.samples) == pytest.approx(13.0, abs=0.01)

    def test_zero_energy_rejected(self, rng):
        with pytest.raises(DegenerateDataError):
            mix_at_snr(Waveform(np.zeros(100)), [Waveform(np.ones(100))], 10.0, rng)
        with pytest.raises(DegenerateDataError):
            mix_at_snr(Waveform(np.ones(100)), [Waveform(np.zeros(100))], 10.0, rng)


class TestApplyRir:
    def test_unit_impulse_is_identity(self, rng):
        x = rng.normal(size=2000)
        np.testing.assert_allclose(apply_rir(Waveform(x), Waveform(np.array([1.0]))).samples, x, atol=1e-12)

    def test_scaled_impulse_is_identity(self, rng):
        x = rng.normal(size=2000)
        rir = np.zeros(10)
        rir[0] = 0.1
        np.testing.assert_allclose(apply_rir(Waveform(x), Waveform(rir)).samples, x, atol=1e-12)

    def test_matches_direct_convolution(self, rng):
        x = rng.normal(size=1500)
        h = rng.normal(size=64)
        direct = np.zeros(x.size)
        for n in range(x.size):
            for k in range(min(h.size, n + 1)):
                direct[n] += h[k] * x[n - k]
        direct *= np.sqrt(np.mean(x ** 2) / np.mean(direct ** 2))
        got = apply_rir(Waveform(x), Waveform(h)).samples
        assert np.max(np.abs(got - direct)) <= 1e-9 * np.max(np.abs(direct))

    def test_power_preserved(self, rng):
        for _ in range(10):
            x = rng.normal(size=3000)
            out = apply_rir(Waveform(x), Waveform(rng.exponential(size=200) * rng.normal(size=200)))
            assert np.mean(out.samples ** 2) == pytest.approx(np.mean(x ** 2), rel=1e-6)

    def test_zero_rir_rejected(self):
        with pytest.raises(DegenerateDataError):
            apply_rir(Waveform(np.ones(10)), Waveform(np.zeros(4)))


class TestSpecMask:
    def test_zero_width_is_identity(self, rng):
        feat = FeatureMatrix(rng.normal(size=(50, 40)))
        out = spec_mask(feat, MaskSpec(0, 0), np.random.default_rng(0))
        np.testing.assert_array_equal(out.values, feat.values)

    def test_time_mask_changes_whole_frames(self, rng):
        feat = FeatureMatrix(rng.normal(size=(50, 40)))
        spec = MaskSpec(max_time_mask_frames=10, max_freq_mask_bins=0, n_time_masks=1, n_freq_masks=0)
        mask_rng = np.random.default_rng(3)
        width = int(np.random.default_rng(3).integers(0, 11))
        out = spec_mask(feat, spec, mask_rng)
        changed = out.values != feat.values
        assert changed.sum() == width * 40
        assert changed.any(axis=1).sum() == width

    def test_reproducible(self, rng):
        feat = FeatureMatrix(rng.normal(size=(60, 40)))
        a = spec_mask(feat, MaskSpec(), np.random.default_rng(11))
        b = spec_mask(feat, MaskSpec(), np.random.default_rng(11))
        np.testing.assert_array_equal(a.values, b.values)

    def test_mask_wider_than_matrix(self, rng):
        with pytest.raises(InputError):
            spec_mask(FeatureMatrix(rng.normal(size=(5, 40))), MaskSpec(max_time_mask_frames=6), rng)


class TestOnlineAugmentation:
    def test_seeded_draw_is_deterministic(self):
        assert draw_online_policy(np.random.default_rng(5)) == draw_online_policy(np.random.default_rng(5))

    def test_categories_are_uniform(self):
        rng = np.random.default_rng(2024)
        counts = {c: 0 for c in CATEGORIES}
        for _ in range(10000):
            counts[draw_online_policy(rng).category] += 1
        for count in counts.values():
            assert 0.23 <= count / 10000 <= 0.27

    def test_policy_ranges(self):
        rng = np.random.default_rng(9)
        for _ in range(2000):
            draw = draw_online_policy(rng)
            if draw.category == "speech":
                assert 3 <= draw.n_sources <= 7
                assert 13.0 <= draw.snr_db <= 20.0
            elif draw.category == "music":
                assert draw.n_sources == 1 and 5.0 <= draw.snr_db <= 15.0
            elif draw.category == "noise":
                assert draw.n_sources == 1 and 0.0 <= draw.snr_db <= 15.0

    def test_augment_online_deterministic(self, rng, corpus):
        wave = Waveform(rng.normal(size=16000))
        rirs = [Waveform(rng.normal(size=300))]
        a = augment_online(wave, corpus, rirs, np.random.default_rng(42))
        b = augment_online(wave, corpus, rirs, np.random.default_rng(42))
        np.testing.assert_array_equal(a.samples, b.samples)
        assert len(a) == len(wave)

    def test_missing_category(self, rng):
        corpus = NoiseCorpus()
        corpus.add_recording("music", Waveform(rng.normal(size=80000)))
        with pytest.raises(InputError):
            corpus.get("noise")


class TestOfflineManifest:
    def _clean(self, n):
        return [(f"utt{i:03d}", f"/data/utt{i:03d}.wav") for i in range(n)]

    def test_five_records_per_utterance(self):
        records = build_offline_manifest(self._clean(100), master_seed=1)
        assert len(records) == 500
        ids = {utt for utt, _ in self._clean(100)}
        assert all(r.utterance_id in ids for r in records)

    def test_record_transforms(self):
        records = build_offline_manifest(self._clean(3), master_seed=1)
        for i in range(3):
            transforms = [r.transform for r in records[5 * i:5 * i + 5]]
            assert transforms[:3] == ["none", "music", "noise"]
            assert transforms[3] in ("rir_small", "rir_medium", "rir_large")
            assert transforms[4] == "specmask"

    def test_same_seed_same_bytes(self, tmp_path):
        first, second = tmp_path / "a.tsv", tmp_path / "b.tsv"
        write_augment_manifest(build_offline_manifest(self._clean(20), 7), first)
        write_augment_manifest(build_offline_manifest(self._clean(20), 7), second)
        digest = lambda p: hashlib.sha256(p.read_bytes()).hexdigest()
        assert digest(first) == digest(second)
        assert read_augment_manifest(first) == build_offline_manifest(self._clean(20), 7)

    def test_empty_manifest(self):
        with pytest.raises(InputError):
            build_offline_manifest([], 0)

    def test_render_records(self, rng, corpus):
        wave = Waveform(rng.normal(size=16000))
        rirs = {room: [Waveform(rng.normal(size=100))] for room in ("small", "medium", "large")}
        for record in build_offline_manifest([("u", "/x.wav")], 3):
            feat = render_record(record, wave, corpus, rirs, FeatureConfig.fb40())
            assert feat.values.shape == (98, 40)
        clean = [r for r in build_offline_manifest([("u", "/x.wav")], 3) if r.transform == "music"][0]
        a = render_record(clean, wave, corpus, rirs, FeatureConfig.fb40())
        b = render_record(clean, wave, corpus, rirs, FeatureConfig.fb40())
        np.testing.assert_array_equal(a.values, b.values)
