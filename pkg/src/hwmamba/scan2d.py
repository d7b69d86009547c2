"""Serialization of 2-D feature maps into scan sequences, and SS2D.

Feature maps are channels-last ``(..., H, W, C)``: H is the lead axis
(rows), W the time axis (columns).
"""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np

from .errors import DimensionError
from .ssm import SsmParams, s6_scan
from .tensor import Tensor, add, flip, record


class ScanDirection(enum.IntEnum):
    LEFT_RIGHT = 0
    TOP_BOTTOM = 1
    RIGHT_LEFT = 2
    BOTTOM_TOP = 3


CROSS_DIRECTIONS = tuple(ScanDirection)


def scan_order(h: int, w: int, direction: ScanDirection) -> np.ndarray:
    """Row-major grid indices in the order ``direction`` visits them."""
    if h < 1 or w < 1:
        raise DimensionError(f"empty grid {h}x{w}")
    grid = np.arange(h * w)
    if direction in (ScanDirection.TOP_BOTTOM, ScanDirection.BOTTOM_TOP):
        grid = grid.reshape(h, w).T.reshape(-1)
    if direction in (ScanDirection.RIGHT_LEFT, ScanDirection.BOTTOM_TOP):
        grid = grid[::-1]
    return np.ascontiguousarray(grid)


def _orders(h: int, w: int, directions: Sequence[ScanDirection]) -> tuple[np.ndarray, np.ndarray]:
    perms = np.stack([scan_order(h, w, d) for d in directions])
    inverse = np.argsort(perms, axis=1)
    return perms, inverse


def cross_scan(x: Tensor, directions: Sequence[ScanDirection] = CROSS_DIRECTIONS) -> Tensor:
    """(..., H, W, C) -> (..., K, H*W, C), one sequence per direction."""
    if x.ndim < 3:
        raise DimensionError(f"cross_scan expects (..., H, W, C), got {x.shape}")
    *lead, h, w, c = x.shape
    perms, inverse = _orders(h, w, directions)
    flat = x.data.reshape(*lead, h * w, c)
    out = flat[..., perms, :]

    def backward(g):
        gflat = sum(g[..., k, inverse[k], :] for k in range(len(perms)))
        return (gflat.reshape(x.shape),)

    return record(out, (x,), backward, "cross_scan")


def cross_merge(ys: Tensor, h: int, w: int,
                directions: Sequence[ScanDirection] = CROSS_DIRECTIONS) -> Tensor:
    """Return each direction's sequence to grid order and sum: (..., K, L, C) -> (..., H, W, C)."""
    *lead, k, length, c = ys.shape
    if k != len(directions) or length != h * w:
        raise DimensionError(f"cross_merge: got {ys.shape} for a {h}x{w} grid and {len(directions)} directions")
    perms, inverse = _orders(h, w, directions)
    flat = sum(ys.data[..., i, inverse[i], :] for i in range(k))

    def backward(g):
        gflat = g.reshape(*lead, h * w, c)
        return (gflat[..., perms, :],)

    return record(flat.reshape(*lead, h, w, c), (ys,), backward, "cross_merge")


def serialize(x: Tensor, direction: ScanDirection) -> Tensor:
    """(..., H, W, C) -> (..., H*W, C) in ``direction`` order."""
    out = cross_scan(x, (direction,))
    return out.reshape(out.shape[:-3] + out.shape[-2:])


def deserialize(seq: Tensor, direction: ScanDirection, h: int, w: int) -> Tensor:
    """Inverse of :func:`serialize`."""
    return cross_merge(seq.reshape(seq.shape[:-2] + (1,) + seq.shape[-2:]), h, w, (direction,))


def bidirectional_scan(x: Tensor, params_fwd: SsmParams, params_bwd: SsmParams) -> Tensor:
    """S6 forward plus S6 over the reversed sequence (re-reversed), summed."""
    axis = x.ndim - 2
    return add(s6_scan(x, params_fwd), flip(s6_scan(flip(x, axis), params_bwd), axis))


def ss2d(x: Tensor, params: SsmParams, chunk_size: int | None = None) -> Tensor:
    """Four-direction cross-scan of a (..., H, W, D) map, merged by summation.

    ``params`` carries a leading axis of 4 (one set per direction, in
    :class:`ScanDirection` order) or 1 (shared weights).
    """
    if params.w_b.ndim != 3 or params.w_b.shape[0] not in (1, 4):
        raise DimensionError("ss2d params need a leading direction axis of 1 or 4")
    h, w = x.shape[-3], x.shape[-2]
    ys = s6_scan(cross_scan(x), params, chunk_size=chunk_size)
    return cross_merge(ys, h, w)
