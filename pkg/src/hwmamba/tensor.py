"""Dense tensors with tape-based reverse-mode differentiation.

Operations are coarse grained (a whole convolution or layer norm is one
tape node) so Python overhead stays proportional to the number of layers,
not the number of elements.  Elementwise binary ops accept equal shapes,
a size-1 operand, or a 1-D operand matching the last axis (per-channel
affine); anything else raises :class:`DimensionError`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError, ParameterError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.isfinite(data).all():
        raise NumericError(f"non-finite value produced by {op}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype, copy=True, order="C")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # ------------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on a tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every requires_grad leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ContractError(f"backward() needs a scalar root, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.shape:
            raise DimensionError(f"seed gradient shape {grad.shape} != {self.shape}")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # ------------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def record(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Wrap a forward result; attach ``backward`` if any parent needs grads.

    ``backward(g)`` must return one gradient (or None) per parent.
    """
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out._parents = tuple(parents) if needs else ()
    out._backward = backward if needs else None
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    for x, y in ((a, b), (b, a)):
        if y.size == 1 and y.ndim <= x.ndim:
            return
        if y.ndim == 1 and x.ndim >= 1 and y.shape[0] == x.shape[-1]:
            return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _binary_operands(a, b, op: str) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = as_tensor(a, b.dtype)
    if not isinstance(b, Tensor):
        b = as_tensor(b, a.dtype)
    _check_binary(a, b, op)
    return a, b


# ----------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "div")
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return record(out, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return record(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if (a.data <= 0).any():
        raise NumericError("log of a non-positive value")
    return record(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x: np.ndarray) -> np.ndarray:
    # x + log1p(exp(-x)) above 20 avoids overflow of exp(x)
    big = x > 20.0
    safe = np.where(big, 0.0, x)
    return np.where(big, x + np.log1p(np.exp(-np.where(big, x, 0.0))), np.log1p(np.exp(safe)))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return record(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)

    def backward(g):
        return (g * (s + a.data * s * (1.0 - s)),)

    return record(a.data * s, (a,), backward, "silu")


def softplus(a: Tensor) -> Tensor:
    return record(_softplus(a.data), (a,), lambda g: (g * _sigmoid(a.data),), "softplus")


# ----------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out = a.data.reshape(shape)
    return record(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "permute")


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return record(np.array(out, copy=True), (a,), backward, "getitem")


def flip(a: Tensor, axis: int) -> Tensor:
    return record(np.flip(a.data, axis).copy(), (a,), lambda g: (np.flip(g, axis).copy(),), "flip")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return record(out, tensors, backward, "stack")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record(out, tensors, backward, "concat")


# ----------------------------------------------------------------------
# reductions and products


def _axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ParameterError(f"axis {ax} out of range for ndim {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axes(axis, a.ndim)
    if any(a.shape[ax] == 0 for ax in axes):
        raise ParameterError("sum over an empty axis")
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record(np.asarray(out), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    if count == 0:
        raise ParameterError("mean over an empty axis")
    return tsum(a, axes, keepdims) * (1.0 / count)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the two trailing spatial axes of a ``(..., C, H, W)`` map."""
    if x.ndim < 3:
        raise DimensionError(f"global_avg_pool expects (..., C, H, W), got {x.shape}")
    return mean(x, axis=(-2, -1))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record(out, (a, b), backward, "matmul")


# ----------------------------------------------------------------------
# normalization and convolution


def layer_norm(x: Tensor, normalized_extent: int, gamma: Tensor | None = None,
               beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be positive, got {eps}")
    if x.shape[-1] != normalized_extent:
        raise DimensionError(f"layer_norm over {normalized_extent} channels, got {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    out = xhat
    parents = [x]
    if gamma is not None:
        out = out * gamma.data
        parents.append(gamma)
    if beta is not None:
        out = out + beta.data
        parents.append(beta)
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        gx_hat = g * gamma.data if gamma is not None else g
        gx = rstd * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                     - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=lead))
        if beta is not None:
            grads.append(g.sum(axis=lead))
        return tuple(grads)

    return record(out, parents, backward, "layer_norm")


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return v, v
    a, b = v
    return int(a), int(b)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride=(1, 1), padding=(0, 0),
           groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation with zero padding.

    ``x`` is ``(C_in, H, W)`` or ``(B, C_in, H, W)``; ``w`` is
    ``(C_out, C_in // groups, kH, kW)``.
    """
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1 or ph < 0 or pw < 0 or groups < 1:
        raise ParameterError(f"bad conv2d stride={stride} padding={padding} groups={groups}")
    single = x.ndim == 3
    if x.ndim not in (3, 4) or w.ndim != 4:
        raise DimensionError(f"conv2d shapes x={x.shape} w={w.shape}")
    xd = x.data[None] if single else x.data
    n, cin, h, wd = xd.shape
    cout, cg, kh, kw = w.shape
    if cin % groups or cout % groups or cg != cin // groups:
        raise DimensionError(f"conv2d: {cin} input / {cout} output channels, weight {w.shape}, groups={groups}")
    hp, wp = h + 2 * ph, wd + 2 * pw
    if hp < kh or wp < kw:
        raise DimensionError(f"conv2d kernel {(kh, kw)} larger than padded input {(hp, wp)}")
    ho, wo = (hp - kh) // sh + 1, (wp - kw) // sw + 1
    og = cout // groups

    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else xd
    xg = xp.reshape(n, groups, cg, hp, wp)
    wgt = w.data.reshape(groups, og, cg, kh, kw)

    def window(i, j):
        return (slice(None),) * 3 + (slice(i, i + sh * (ho - 1) + 1, sh), slice(j, j + sw * (wo - 1) + 1, sw))

    out = np.zeros((n, groups, og, ho, wo), dtype=np.result_type(xd, w.data))
    for i in range(kh):
        for j in range(kw):
            out += np.einsum("ngchw,goc->ngohw", xg[window(i, j)], wgt[..., i, j], optimize=True)
    out = out.reshape(n, cout, ho, wo)
    parents = [x, w]
    if bias is not None:
        if bias.shape != (cout,):
            raise DimensionError(f"conv2d bias shape {bias.shape} != ({cout},)")
        out = out + bias.data[:, None, None]
        parents.append(bias)
    if single:
        out = out[0]

    def backward(g):
        g4 = (g[None] if single else g).reshape(n, groups, og, ho, wo)
        gxp = np.zeros_like(xg)
        gw = np.zeros_like(wgt)
        for i in range(kh):
            for j in range(kw):
                sl = window(i, j)
                gxp[sl] += np.einsum("ngohw,goc->ngchw", g4, wgt[..., i, j], optimize=True)
                gw[..., i, j] = np.einsum("ngohw,ngchw->goc", g4, xg[sl], optimize=True)
        gx = gxp.reshape(n, cin, hp, wp)[:, :, ph:ph + h, pw:pw + wd]
        if single:
            gx = gx[0]
        grads = [np.ascontiguousarray(gx), gw.reshape(w.shape)]
        if bias is not None:
            grads.append(g4.sum(axis=(0, 3, 4)).reshape(cout))
        return tuple(grads)

    return record(out, parents, backward, "conv2d")
