"""Small layer containers on top of :mod:`hwmamba.tensor`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .ssm import SsmParams, truncated_normal
from .tensor import Tensor, conv2d, layer_norm


class Module:
    """Parameter bookkeeping by attribute traversal, in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, SsmParams):
                for sub, t in value.named_tensors().items():
                    yield f"{full}.{sub}", t
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, child in enumerate(value):
                    yield from child.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.named_parameters()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(arrays)
        unexpected = set(arrays) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, t in params.items():
            arr = np.asarray(arrays[name])
            if arr.shape != t.shape:
                raise ValueError(f"{name}: stored shape {arr.shape} != {t.shape}")
            t.data = np.array(arr, dtype=t.dtype, order="C")

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(arr, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


class Linear(Module):
    """``y = x @ weight + bias`` with weight stored as (in, out)."""

    def __init__(self, d_in: int, d_out: int, bias: bool = True, rng=None, dtype=np.float64, std: float = 0.02):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = _param(truncated_normal(rng, (d_in, d_out), std), dtype)
        self.bias = _param(np.zeros(d_out), dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float64):
        self.dim = dim
        self.eps = eps
        self.weight = _param(np.ones(dim), dtype)
        self.bias = _param(np.zeros(dim), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.dim, self.weight, self.bias, self.eps)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel, stride=(1, 1), padding=(0, 0), groups: int = 1,
                 bias: bool = True, rng=None, dtype=np.float64, std: float = 0.02):
        rng = rng if rng is not None else np.random.default_rng(0)
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        self.stride = stride
        self.padding = padding
        self.groups = groups
        self.weight = _param(truncated_normal(rng, (c_out, c_in // groups, kh, kw), std), dtype)
        self.bias = _param(np.zeros(c_out), dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)
