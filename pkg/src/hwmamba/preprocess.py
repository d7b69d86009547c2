"""Signal conditioning: resampling to 500 Hz, fixed-length cropping, z-scoring, record I/O."""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal

from .errors import DataError
from .labels import CLASSES, decode, encode

TARGET_FS = 500
TARGET_LENGTH = 8192
NUM_LEADS = 12
# anti-aliasing filter for the 2:1 path: 64 taps per polyphase branch
_DECIMATION_TAPS = 129


@dataclass
class EcgRecord:
    id: str
    fs: float
    signal: np.ndarray  # (leads, T)
    labels: np.ndarray  # binary, one entry per class

    def __post_init__(self):
        self.signal = np.asarray(self.signal)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.signal.ndim != 2 or self.signal.shape[1] < 1:
            raise DataError(f"record {self.id}: signal must be (leads, T) with T >= 1, got {self.signal.shape}")
        if not np.isin(self.labels, (0, 1)).all() or self.labels.ndim != 1:
            raise DataError(f"record {self.id}: labels must be a binary vector")

    @property
    def num_samples(self) -> int:
        return self.signal.shape[1]


def _lowpass(num_taps: int = _DECIMATION_TAPS) -> np.ndarray:
    # cutoff at half the output Nyquist rate (relative to input Nyquist: 0.5 / 2)
    h = signal.firwin(num_taps, 0.5, window="hamming")
    return h / h.sum()


def resampled_length(n: int, fs: float, target_fs: float = TARGET_FS) -> int:
    return int(np.floor(n * target_fs / fs + 0.5))


def resample(rec: EcgRecord, target_fs: float = TARGET_FS) -> EcgRecord:
    """Identity at the target rate, 2:1 polyphase decimation from twice the target, FFT otherwise."""
    if not rec.fs > 0:
        raise DataError(f"record {rec.id}: sampling rate must be positive, got {rec.fs}")
    if rec.fs == target_fs:
        return dataclasses.replace(rec, signal=rec.signal.copy())
    x = rec.signal.astype(np.float64)
    if rec.fs == 2 * target_fs:
        y = signal.resample_poly(x, 1, 2, axis=1, window=_lowpass(), padtype="line")
    else:
        y = signal.resample(x, resampled_length(x.shape[1], rec.fs, target_fs), axis=1)
    return dataclasses.replace(rec, fs=float(target_fs), signal=y)


def fix_length(rec: EcgRecord, length: int = TARGET_LENGTH, rng: np.random.Generator | None = None) -> EcgRecord:
    """Right-pad with zeros, or crop a window (random with ``rng``, centered without)."""
    t = rec.num_samples
    if t == length:
        return rec
    if t < length:
        pad = np.zeros((rec.signal.shape[0], length - t), dtype=rec.signal.dtype)
        return dataclasses.replace(rec, signal=np.concatenate([rec.signal, pad], axis=1))
    start = int(rng.integers(0, t - length + 1)) if rng is not None else (t - length) // 2
    return dataclasses.replace(rec, signal=rec.signal[:, start:start + length].copy())


def zscore(rec: EcgRecord, floor: float = 1e-8) -> EcgRecord:
    """Per-lead (x - mean) / std with population std; near-flat leads are left alone."""
    x = rec.signal.astype(np.float64)
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    flat = sd < floor
    out = np.where(flat, x, (x - mu) / np.where(flat, 1.0, sd))
    return dataclasses.replace(rec, signal=out)


def record_rng(seed: int, record_id: str, epoch: int = 0) -> np.random.Generator:
    """Per-record stream, independent of processing order."""
    return np.random.default_rng([seed, epoch, zlib.crc32(record_id.encode())])


def condition(rec: EcgRecord, normalize: bool = False, rng: np.random.Generator | None = None,
              length: int = TARGET_LENGTH) -> EcgRecord:
    if rec.signal.shape[0] != NUM_LEADS:
        raise DataError(f"record {rec.id}: expected {NUM_LEADS} leads, got {rec.signal.shape[0]}")
    out = fix_length(resample(rec), length, rng)
    return zscore(out) if normalize else out


def save_record(rec: EcgRecord, directory: str | Path, classes: Sequence[str] = CLASSES) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {"id": rec.id, "fs": rec.fs, "num_samples": rec.num_samples,
              "labels": decode(rec.labels, classes)}
    (directory / f"{rec.id}.json").write_text(json.dumps(header))
    rec.signal.astype("<f4").tofile(directory / f"{rec.id}.f32")


def load_record(header_path: str | Path, classes: Sequence[str] = CLASSES) -> EcgRecord:
    header_path = Path(header_path)
    try:
        header = json.loads(header_path.read_text())
        rid, fs, n = str(header["id"]), float(header["fs"]), int(header["num_samples"])
        names = list(header["labels"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{header_path}: unreadable record header ({exc})") from exc
    blob = header_path.with_suffix(".f32")
    if not blob.exists():
        raise DataError(f"{header_path}: missing sample file {blob.name}")
    raw = np.fromfile(blob, dtype="<f4")
    if n < 1 or raw.size % n:
        raise DataError(f"{blob}: {raw.size} values do not divide into {n} samples per lead")
    return EcgRecord(rid, fs, raw.reshape(raw.size // n, n).astype(np.float32), encode(names, classes))


def load_dataset(directory: str | Path) -> tuple[list[EcgRecord], list[str]]:
    """All bundles in ``directory`` sorted by id; class list from dataset.json if present."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"data directory {directory} does not exist")
    meta = directory / "dataset.json"
    classes = list(CLASSES)
    if meta.exists():
        try:
            classes = list(json.loads(meta.read_text())["classes"])
        except (ValueError, KeyError) as exc:
            raise DataError(f"{meta}: malformed dataset description") from exc
    records = [load_record(p, classes) for p in sorted(directory.glob("*.json")) if p.name != "dataset.json"]
    if not records:
        raise DataError(f"no records found in {directory}")
    return sorted(records, key=lambda r: r.id), classes


def save_dataset(records: Sequence[EcgRecord], directory: str | Path, classes: Sequence[str] = CLASSES) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "dataset.json").write_text(json.dumps({"classes": list(classes), "count": len(records)}))
    for rec in records:
        save_record(rec, directory, classes)
