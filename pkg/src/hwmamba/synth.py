"""Synthetic separable 12-lead dataset: one sinusoid-and-lead-pattern signature per class."""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .labels import CLASSES, NORMAL_CLASS
from .preprocess import NUM_LEADS, TARGET_FS, EcgRecord

# signatures depend only on the class index, so every seed poses the same task
_SIGNATURE_SEED = 20211
MAX_ACTIVE = 3


def synth_classes(num_classes: int) -> list[str]:
    """Normal class first, then the remaining canonical classes in order."""
    if not 1 <= num_classes <= len(CLASSES):
        raise ParameterError(f"class count must lie in [1, {len(CLASSES)}], got {num_classes}")
    rest = [c for c in CLASSES if c != NORMAL_CLASS]
    return [NORMAL_CLASS] + rest[:num_classes - 1]


def class_frequencies(num_classes: int) -> np.ndarray:
    return 2.0 + 3.0 * np.arange(num_classes)


def lead_patterns(num_classes: int) -> np.ndarray:
    """(K, 12) lead gains: a bright contiguous block per class over a weak random background."""
    rng = np.random.default_rng(_SIGNATURE_SEED)
    gains = rng.uniform(-0.3, 0.3, size=(num_classes, NUM_LEADS))
    block = max(1, NUM_LEADS // max(num_classes, 1))
    for c in range(num_classes):
        start = (c * block) % NUM_LEADS
        gains[c, start:start + block] = 1.0
    return gains


def signature(c: int, num_classes: int, seq_len: int, phase: float = 0.0, fs: float = TARGET_FS) -> np.ndarray:
    t = np.arange(seq_len) / fs
    wave = np.sin(2 * np.pi * class_frequencies(num_classes)[c] * t + phase)
    return lead_patterns(num_classes)[c][:, None] * wave[None, :]


def target_marginals(num_classes: int) -> np.ndarray:
    """Expected positive rate per class under the generator."""
    k = min(MAX_ACTIVE, num_classes)
    return np.full(num_classes, np.mean(np.arange(1, k + 1)) / num_classes)


def synth_dataset(n: int, num_classes: int = 4, seq_len: int = 256, seed: int = 0, noise: float = 0.1,
                  max_active: int = MAX_ACTIVE, random_phase: bool = True) -> tuple[list[EcgRecord], list[str]]:
    if n < num_classes:
        raise ParameterError(f"need at least one record per class ({num_classes}), got n={n}")
    if seq_len < 1 or noise < 0:
        raise ParameterError("sequence length must be positive and noise non-negative")
    classes = synth_classes(num_classes)
    rng = np.random.default_rng(seed)
    width = len(str(n - 1))
    records = []
    for i in range(n):
        k = int(rng.integers(1, min(max_active, num_classes) + 1))
        active = rng.choice(num_classes, size=k, replace=False)
        x = np.zeros((NUM_LEADS, seq_len))
        for c in active:
            phase = rng.uniform(0, 2 * np.pi) if random_phase else 0.0
            x += signature(int(c), num_classes, seq_len, phase)
        x += noise * rng.normal(size=x.shape)
        labels = np.zeros(num_classes, dtype=np.int8)
        labels[active] = 1
        records.append(EcgRecord(f"s{i:0{width}d}", float(TARGET_FS), x.astype(np.float32), labels))
    return records, classes
