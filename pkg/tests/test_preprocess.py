import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import signal as sps

from hwmamba.errors import DataError
from hwmamba.labels import CLASSES, decode, encode
from hwmamba.preprocess import (EcgRecord, condition, fix_length, load_dataset, load_record, record_rng, resample,
                                save_dataset, save_record, zscore)


def rec(x, fs=500.0, rid="r"):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return EcgRecord(rid, fs, x, np.zeros(26, dtype=np.int8))


class TestResample:
    def test_identity(self, rng):
        x = rng.normal(size=(12, 300))
        out = resample(rec(x))
        assert out.fs == 500 and out.signal.tobytes() == x.tobytes()

    def test_decimation_of_sine(self):
        t = np.arange(2000) / 1000
        out = resample(rec(np.sin(2 * np.pi * 10 * t)[None], fs=1000))
        assert out.num_samples == 1000 and out.fs == 500
        ideal = np.sin(2 * np.pi * 10 * np.arange(1000) / 500)
        assert np.abs(out.signal[0] - ideal)[100:-100].max() < 1e-3

    @pytest.mark.parametrize("fs", [257.0, 1000.0, 360.0])
    def test_constant_preserved(self, fs):
        out = resample(rec(np.full((12, 777), -2.5), fs=fs))
        assert np.abs(out.signal + 2.5).max() < 1e-9

    @pytest.mark.parametrize("n", [257, 514, 1000, 1001])
    def test_fourier_length(self, n):
        assert resample(rec(np.zeros((1, n)), fs=257)).num_samples == int(np.floor(n * 500 / 257 + 0.5))

    def test_band_limited_energy(self, rng):
        b, a = sps.butter(8, 100, fs=1000)
        x = sps.filtfilt(b, a, rng.normal(size=(12, 5000)))
        out = resample(rec(x, fs=1000))
        assert abs(2 * np.sum(out.signal ** 2) / np.sum(x ** 2) - 1) < 0.01

    @pytest.mark.parametrize("fs", [0.0, -1.0])
    def test_bad_rate(self, fs):
        with pytest.raises(DataError):
            resample(rec(np.zeros((1, 4)), fs=fs))


class TestFixLength:
    def test_pad(self, rng):
        x = rng.normal(size=(12, 5000))
        out = fix_length(rec(x), 8192).signal
        np.testing.assert_array_equal(out[:, :5000], x)
        assert not out[:, 5000:].any() and out.shape == (12, 8192)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_crop_is_seeded_window(self, seed):
        x = np.tile(np.arange(10000.0), (2, 1))
        a = fix_length(rec(x), 8192, np.random.default_rng(seed)).signal
        b = fix_length(rec(x), 8192, np.random.default_rng(seed)).signal
        assert a.tobytes() == b.tobytes()
        start = int(a[0, 0])
        assert 0 <= start <= 1808
        np.testing.assert_array_equal(a[0], np.arange(start, start + 8192))

    def test_centered_without_rng(self):
        x = np.arange(10000.0)[None]
        assert fix_length(rec(x), 8192).signal[0, 0] == 904

    def test_identity_and_idempotence(self, rng):
        r = rec(rng.normal(size=(12, 8192)))
        assert fix_length(r, 8192) is r
        once = fix_length(rec(rng.normal(size=(12, 9000))), 8192, rng)
        assert fix_length(once, 8192, rng).signal.tobytes() == once.signal.tobytes()


class TestZscore:
    def test_two_samples(self):
        np.testing.assert_allclose(zscore(rec([[1.0, 3.0]])).signal, [[-1.0, 1.0]])

    def test_flat_lead_untouched(self, rng):
        x = np.vstack([np.zeros(50), np.full(50, 4.0), rng.normal(size=50)])
        out = zscore(rec(x)).signal
        np.testing.assert_array_equal(out[:2], x[:2])

    @given(st.integers(0, 1000))
    def test_standardized(self, seed):
        x = np.random.default_rng(seed).normal(3, 5, size=(12, 200))
        out = zscore(rec(x)).signal
        assert np.abs(out.mean(axis=1)).max() < 1e-9
        assert np.abs(out.std(axis=1) - 1).max() < 1e-6


def test_pipeline_shape(rng):
    for fs, n in ((257.0, 3000), (1000.0, 20000), (500.0, 8192), (500.0, 100)):
        out = condition(rec(rng.normal(size=(12, n)), fs=fs), rng=record_rng(0, "a"))
        assert out.signal.shape == (12, 8192) and out.fs == 500


def test_pipeline_requires_twelve_leads(rng):
    with pytest.raises(DataError):
        condition(rec(rng.normal(size=(3, 100))))


def test_record_rng_independent_of_order():
    a = record_rng(5, "x", 2).integers(0, 10 ** 9)
    record_rng(5, "y", 2).integers(0, 10 ** 9)
    assert a == record_rng(5, "x", 2).integers(0, 10 ** 9)
    assert a != record_rng(5, "x", 3).integers(0, 10 ** 9)


class TestLabels:
    def test_table(self):
        assert len(CLASSES) == 26 and CLASSES[0] == "AF" and CLASSES[-1] == "TInv" and "NSR" in CLASSES

    def test_round_trip(self):
        assert decode(encode(["NSR", "AF"])) == ["AF", "NSR"]

    def test_unknown(self):
        with pytest.raises(DataError):
            encode(["XYZ"])


class TestBundles:
    def test_round_trip(self, tmp_path, rng):
        labels = encode(["AF", "TInv"])
        r = EcgRecord("rec1", 257.0, rng.normal(size=(12, 40)).astype(np.float32), labels)
        save_record(r, tmp_path)
        header = json.loads((tmp_path / "rec1.json").read_text())
        assert header == {"id": "rec1", "fs": 257.0, "num_samples": 40, "labels": ["AF", "TInv"]}
        raw = np.fromfile(tmp_path / "rec1.f32", dtype="<f4")
        np.testing.assert_array_equal(raw[:40], r.signal[0])
        back = load_record(tmp_path / "rec1.json")
        assert back.signal.tobytes() == r.signal.tobytes() and back.labels.tolist() == labels.tolist()

    def test_unknown_label_rejected(self, tmp_path):
        (tmp_path / "a.json").write_text(json.dumps({"id": "a", "fs": 500, "num_samples": 1, "labels": ["Nope"]}))
        np.zeros(12, dtype="<f4").tofile(tmp_path / "a.f32")
        with pytest.raises(DataError):
            load_record(tmp_path / "a.json")

    def test_missing_samples(self, tmp_path):
        (tmp_path / "a.json").write_text(json.dumps({"id": "a", "fs": 500, "num_samples": 5, "labels": []}))
        with pytest.raises(DataError):
            load_record(tmp_path / "a.json")

    def test_dataset_with_custom_classes(self, tmp_path, rng):
        classes = ["NSR", "AF"]
        recs = [EcgRecord(f"r{i}", 500.0, rng.normal(size=(12, 8)).astype(np.float32),
                          np.array([i % 2, 1 - i % 2])) for i in range(3)]
        save_dataset(recs, tmp_path, classes)
        loaded, got_classes = load_dataset(tmp_path)
        assert got_classes == classes and [r.id for r in loaded] == ["r0", "r1", "r2"]
        assert loaded[1].labels.tolist() == [1, 0]

    def test_empty_directory(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path)
