"""Central finite-difference oracle for reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ParameterError
from .tensor import Tensor, no_grad


def _as_list(x) -> list[Tensor]:
    return [x] if isinstance(x, Tensor) else list(x)


def finite_diff_check(f: Callable, x: Tensor | Sequence[Tensor], step: float = 1e-5,
                      max_coords: int | None = None, seed: int = 0) -> float:
    """Return max |analytic - numeric| / max(1, |analytic|) over coordinates.

    ``f(x)`` must return a scalar Tensor.  ``x`` is a tensor or a list of
    tensors, all with ``requires_grad`` set; they are perturbed in place and
    restored.  ``max_coords`` samples that many coordinates per tensor
    instead of sweeping every one.
    """
    if step <= 0:
        raise ParameterError(f"step must be positive, got {step}")
    tensors = _as_list(x)
    for t in tensors:
        t.requires_grad = True
        t.zero_grad()
    root = f(x)
    if root.size != 1:
        raise ParameterError("finite_diff_check needs a scalar-valued function")
    root.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for t, ga in zip(tensors, analytic):
            if not t.data.flags.c_contiguous:
                t.data = np.ascontiguousarray(t.data)
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            for c in coords:
                orig = flat[c]
                flat[c] = orig + step
                fp = f(x).item()
                flat[c] = orig - step
                fm = f(x).item()
                flat[c] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise NumericError("non-finite evaluation in finite_diff_check")
                numeric = (fp - fm) / (2.0 * step)
                a = float(ga.reshape(-1)[c])
                worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
