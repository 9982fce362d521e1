"""Tests for core.storage and utils.export."""

import csv
import json

import numpy as np
import pytest

from core.dsp import FeatureMatrix, Waveform
from core.errors import InputError
from core.fusion import search_weights
from core.metrics import evaluate, roc_sweep
from core.scoring import GridRow, ScoreSet, Trial
from core.storage import (
    EmbeddingStore,
    atomic_write,
    read_feature_matrix,
    read_id_list,
    read_manifest,
    read_scores,
    read_trials,
    write_feature_matrix,
    write_id_list,
    write_manifest,
    write_scores,
    write_trials,
)
from utils import audio_io
from utils.audio_io import read_wav, write_wav
from utils.export import ReportExporter


class TestEmbeddingStore:
    def test_round_trip_is_bitwise(self, tmp_path, rng):
        store = EmbeddingStore(8)
        for i in range(5):
            store.add(f"utt{i}", rng.normal(size=8))
        path = tmp_path / "emb.store"
        store.save(path)
        loaded = EmbeddingStore.load(path)
        assert loaded.ids() == store.ids()
        for key in store.ids():
            assert loaded[key].tobytes() == store[key].tobytes()
        second = tmp_path / "again.store"
        loaded.save(second)
        assert second.read_bytes() == path.read_bytes()

    def test_add_utterance(self, rng):
        store = EmbeddingStore(4)
        segments = rng.normal(size=(10, 4))
        store.add_utterance("u", segments)
        assert len(store) == 11
        assert store.segments("u").shape == (10, 4)
        assert np.linalg.norm(store["u"]) == pytest.approx(1.0, abs=1e-6)
        assert list(store.utterance_vectors()) == ["u"]

    def test_segments_fall_back_to_single_vector(self, rng):
        store = EmbeddingStore(3)
        store.add("solo", rng.normal(size=3))
        assert store.segments("solo").shape == (1, 3)

    def test_duplicate_id(self, rng):
        store = EmbeddingStore(3)
        store.add("a", rng.normal(size=3))
        with pytest.raises(InputError):
            store.add("a", rng.normal(size=3))

    def test_wrong_dimension(self):
        with pytest.raises(InputError):
            EmbeddingStore(3).add("a", np.ones(4))

    def test_missing_record(self):
        with pytest.raises(InputError):
            EmbeddingStore(3)["nope"]

    def test_truncated_file(self, tmp_path, rng):
        store = EmbeddingStore(8)
        store.add("a", rng.normal(size=8))
        path = tmp_path / "emb.store"
        store.save(path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(InputError):
            EmbeddingStore.load(path)

    def test_not_a_store(self, tmp_path):
        path = tmp_path / "junk"
        path.write_bytes(b"hello world")
        with pytest.raises(InputError):
            EmbeddingStore.load(path)


class TestFeatureMatrixFile:
    def test_round_trip(self, tmp_path, rng):
        feat = FeatureMatrix(rng.normal(size=(20, 40)).astype(np.float32), hop_samples=160, window="hamming")
        path = tmp_path / "a.fbank"
        write_feature_matrix(feat, path)
        loaded = read_feature_matrix(path)
        np.testing.assert_array_equal(loaded.values, feat.values)
        assert (loaded.hop_samples, loaded.window) == (160, "hamming")

    def test_truncated(self, tmp_path, rng):
        path = tmp_path / "a.fbank"
        write_feature_matrix(FeatureMatrix(rng.normal(size=(4, 8))), path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(InputError):
            read_feature_matrix(path)
        path.write_bytes(path.read_bytes()[:12])
        with pytest.raises(InputError):
            read_feature_matrix(path)


class TestTextFormats:
    def test_manifest_resolves_relative_paths(self, tmp_path):
        path = tmp_path / "list.txt"
        write_manifest([("a", "a.wav"), ("b", "/abs/b.wav")], path)
        entries = read_manifest(path)
        assert entries == [("a", str(tmp_path / "a.wav")), ("b", "/abs/b.wav")]

    def test_manifest_errors(self, tmp_path):
        path = tmp_path / "list.txt"
        path.write_text("a a.wav\na b.wav\n", encoding="utf-8")
        with pytest.raises(InputError):
            read_manifest(path)
        path.write_text("a\n", encoding="utf-8")
        with pytest.raises(InputError):
            read_manifest(path)

    def test_trials_with_and_without_labels(self, tmp_path):
        path = tmp_path / "trials.txt"
        path.write_text("1 a b\n0 a c\n# comment\n\nd e\n", encoding="utf-8")
        trials = read_trials(path)
        assert trials == [Trial("a", "b", True), Trial("a", "c", False), Trial("d", "e")]

    def test_trials_round_trip(self, tmp_path):
        trials = [Trial("a", "b", True), Trial("c", "d", False)]
        write_trials(trials, tmp_path / "t.txt")
        assert read_trials(tmp_path / "t.txt") == trials

    @pytest.mark.parametrize("text", ["2 a b\n", "a\n", "1 a b c\n", ""])
    def test_trial_errors(self, tmp_path, text):
        path = tmp_path / "trials.txt"
        path.write_text(text, encoding="utf-8")
        with pytest.raises(InputError):
            read_trials(path)

    def test_scores_round_trip(self, tmp_path):
        scores = ScoreSet("sys", [("a", "b"), ("c", "d")], np.array([0.125, -0.5]))
        path = tmp_path / "sys1.scores"
        write_scores(scores, path)
        loaded = read_scores(path)
        assert loaded.system_id == "sys1"
        assert loaded.keys == scores.keys
        np.testing.assert_array_equal(loaded.scores, scores.scores)

    @pytest.mark.parametrize("text", ["a b\n", "a b nan-ish\n", "a b nan\n", ""])
    def test_score_errors(self, tmp_path, text):
        path = tmp_path / "bad.scores"
        path.write_text(text, encoding="utf-8")
        with pytest.raises(InputError):
            read_scores(path)

    def test_id_list(self, tmp_path):
        write_id_list(["x", "y"], tmp_path / "ids.lst")
        assert read_id_list(tmp_path / "ids.lst") == ["x", "y"]

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            read_trials(tmp_path / "absent.txt")


class TestAtomicWrite:
    def test_failure_leaves_target_untouched(self, tmp_path):
        path = tmp_path / "out.txt"
        path.write_text("old", encoding="utf-8")
        with pytest.raises(RuntimeError):
            with atomic_write(path, "w") as handle:
                handle.write("new")
                raise RuntimeError("boom")
        assert path.read_text(encoding="utf-8") == "old"
        assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]

    def test_wav_writer_is_atomic(self, tmp_path, rng, monkeypatch):
        path = tmp_path / "a.wav"
        wave = Waveform(rng.uniform(-0.5, 0.5, 1600))
        write_wav(wave, path)
        assert [p.name for p in tmp_path.iterdir()] == ["a.wav"]
        np.testing.assert_allclose(read_wav(path).samples, wave.samples, atol=1.0 / 32768)

        def broken(*args, **kwargs):
            raise RuntimeError("disk full")

        before = path.read_bytes()
        monkeypatch.setattr(audio_io.sf, "write", broken)
        with pytest.raises(RuntimeError):
            write_wav(Waveform(np.zeros(160)), path)
        assert path.read_bytes() == before
        assert [p.name for p in tmp_path.iterdir()] == ["a.wav"]


class TestReportExporter:
    def test_grid_csv(self, tmp_path):
        rows = [GridRow(200, 20, 2.5, 0.1, 0.2, 0.01), GridRow(200, 40, 2.0, 0.2, 0.15, 0.02)]
        path = ReportExporter(str(tmp_path)).export_grid_to_csv(rows, "grid.csv")
        with open(path, newline="") as handle:
            table = list(csv.DictReader(handle))
        assert [(r["N"], r["X"]) for r in table] == [("200", "20"), ("200", "40")]
        assert float(table[1]["dcf_mean"]) == 0.15

    def test_trace_csv(self, tmp_path, separable_scores, rng, make_score_set):
        strong, trials = separable_scores
        noise = make_score_set("noise", rng.uniform(size=1000), 200)[0]
        result = search_weights([strong, noise], np.array([t.label for t in trials]), granularity=0.05)
        path = ReportExporter(str(tmp_path)).export_trace_to_csv(result, "trace.csv")
        with open(path, newline="") as handle:
            table = list(csv.DictReader(handle))
        assert list(table[0]) == ["w_strong", "w_noise", "eer", "dcf"]
        assert len(table) == len(result.trace)

    def test_det_and_json(self, tmp_path, separable_scores):
        strong, trials = separable_scores
        labels = np.array([t.label for t in trials])
        exporter = ReportExporter(str(tmp_path))
        det = exporter.export_det_to_csv(roc_sweep(strong.scores, labels), "det.csv")
        lines = det.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "threshold,e_miss,e_fa"
        assert lines[-1].startswith("inf,1.0,0.0")
        report = evaluate(strong.scores, labels)
        record = json.loads(exporter.export_metrics_to_json(report, "m.json", {"system": "strong"}).read_text())
        assert record["system"] == "strong"
        assert record["eer"] == pytest.approx(report.eer)
        assert record["n_target"] == 200
