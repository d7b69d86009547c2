"""The 26 scored diagnosis classes, in canonical order."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

CLASSES: tuple[str, ...] = (
    "AF", "AFL", "BBB", "Brady", "CLBBB", "CRBBB", "1AVB", "IRBBB", "LAD", "LAnFB",
    "LPR", "LQRSV", "LQT", "NSIVCD", "NSR", "PAC", "PR", "PRWP", "PVC", "QAb",
    "RAD", "SA", "SB", "STach", "TAb", "TInv",
)
NORMAL_CLASS = "NSR"


def encode(abbrevs: Iterable[str], classes: Sequence[str] = CLASSES) -> np.ndarray:
    """Binary indicator vector over ``classes``; unknown names are rejected."""
    index = {c: i for i, c in enumerate(classes)}
    out = np.zeros(len(classes), dtype=np.int8)
    for a in abbrevs:
        if a not in index:
            raise DataError(f"unknown diagnosis abbreviation {a!r}")
        out[index[a]] = 1
    return out


def decode(vector, classes: Sequence[str] = CLASSES) -> list[str]:
    v = np.asarray(vector)
    if v.shape != (len(classes),):
        raise DataError(f"label vector has shape {v.shape}, expected ({len(classes)},)")
    return [c for c, bit in zip(classes, v) if bit]
