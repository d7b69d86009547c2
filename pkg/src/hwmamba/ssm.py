"""Selective state-space machinery: ZOH discretization and the S6 scan.

Weights use the row-vector convention ``x @ W``, so the input projection
that produces ``B_k`` is stored as a ``(D, N)`` matrix.  Every parameter may
carry extra leading axes (one slice per scan direction); those broadcast
against the leading axes of the input sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import DimensionError, NumericError, ParameterError
from .tensor import Tensor, _sigmoid, _softplus, _unbroadcast, exp, is_grad_enabled, neg, record, softplus

_SERIES_CUTOFF = 1e-4


def _series_ratio(x):
    return 1.0 + x * (0.5 + x * (1.0 / 6.0 + x / 24.0))


def expm1_ratio(x: np.ndarray) -> np.ndarray:
    """(e^x - 1) / x, switching to a Taylor series for |x| < 1e-4."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SERIES_CUTOFF
    if not small.any():
        return np.expm1(x) / x
    safe = np.where(small, 1.0, x)
    return np.where(small, _series_ratio(x), np.expm1(safe) / safe)


@dataclass
class DiscreteStep:
    A_bar: np.ndarray
    B_bar: np.ndarray


def discretize(A, B, delta) -> DiscreteStep:
    """Zero-order-hold discretization of a diagonal system.

    ``A_bar = exp(delta*A)`` and ``B_bar = f(delta*A) * delta * B`` with
    ``f(x) = (e^x - 1)/x``; the division never happens for tiny ``delta*A``.
    """
    A = np.asarray(A, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if (delta <= 0).any():
        raise ParameterError("discretize: step size delta must be positive")
    if (A >= 0).any():
        raise ParameterError("discretize: diagonal A must be strictly negative")
    dA = delta * A
    out = DiscreteStep(np.exp(dA), expm1_ratio(dA) * delta * np.asarray(B, dtype=float))
    if not (np.isfinite(out.A_bar).all() and np.isfinite(out.B_bar).all()):
        raise NumericError("discretize produced a non-finite value")
    return out


def inverse_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


@dataclass
class SsmParams:
    """Learnable selective-SSM parameters for one layer (or a stack of them)."""

    a_log: Tensor        # (..., D, N); A = -exp(a_log)
    w_b: Tensor          # (..., D, N)
    w_c: Tensor          # (..., D, N)
    w_dt_down: Tensor    # (..., D, R)
    w_dt_up: Tensor      # (..., R, D)
    dt_bias: Tensor      # (..., D)
    d_skip: Tensor | None = None  # (..., D)

    @classmethod
    def init(cls, d_model: int, d_state: int, rank: int | None = None, directions: int | None = None,
             use_d_skip: bool = False, rng: np.random.Generator | None = None, dtype=np.float64,
             dt_min: float = 1e-3, dt_max: float = 1e-1, std: float = 0.02) -> "SsmParams":
        rng = rng if rng is not None else np.random.default_rng(0)
        rank = default_rank(d_model) if rank is None else rank
        if not 1 <= rank <= d_model:
            raise ParameterError(f"rank must lie in [1, {d_model}], got {rank}")
        if d_state < 1:
            raise ParameterError(f"state dimension must be positive, got {d_state}")
        lead = () if directions is None else (directions,)

        def param(arr):
            return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)

        def normal(*shape):
            return param(truncated_normal(rng, lead + shape, std))

        a_log = np.broadcast_to(np.log(np.arange(1, d_state + 1, dtype=float)), lead + (d_model, d_state))
        dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=lead + (d_model,)))
        return cls(
            a_log=param(a_log),
            w_b=normal(d_model, d_state),
            w_c=normal(d_model, d_state),
            w_dt_down=normal(d_model, rank),
            w_dt_up=normal(rank, d_model),
            dt_bias=param(inverse_softplus(dt)),
            d_skip=param(np.ones(lead + (d_model,))) if use_d_skip else None,
        )

    @property
    def d_model(self) -> int:
        return self.w_b.shape[-2]

    @property
    def d_state(self) -> int:
        return self.w_b.shape[-1]

    @property
    def rank(self) -> int:
        return self.w_dt_down.shape[-1]

    def A(self) -> Tensor:
        return neg(exp(self.a_log))

    def named_tensors(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}


def default_rank(d_model: int) -> int:
    return max(1, d_model // 16)


def truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) resampled outside two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def selective_params(x: Tensor, params: SsmParams) -> tuple[Tensor, Tensor, Tensor]:
    """Input-dependent (B_k, C_k, delta_k) for every position of ``x``."""
    if x.shape[-1] != params.d_model:
        raise DimensionError(f"input has {x.shape[-1]} channels, params expect {params.d_model}")
    squeeze = x.ndim == 1
    xm = x.reshape(1, x.shape[0]) if squeeze else x
    b = xm @ params.w_b
    c = xm @ params.w_c
    delta = softplus((xm @ params.w_dt_down) @ params.w_dt_up + params.dt_bias)
    if squeeze:
        b, c, delta = b.reshape(-1), c.reshape(-1), delta.reshape(-1)
    return b, c, delta


def _chunk_forward(ut, delta, Ad, inv_a, Bt, Ct, h):
    """Vectorized precompute over a block of steps, then the bare recurrence."""
    dA = delta[..., None] * Ad
    a_bar = np.exp(dA)
    bx = np.expm1(dA) * inv_a * ut[..., None] * Bt[..., None, :]
    hs = np.empty_like(bx)
    for k in range(hs.shape[0]):
        np.multiply(a_bar[k], h, out=hs[k])
        hs[k] += bx[k]
        h = hs[k]
    return np.matmul(hs, Ct[..., None])[..., 0], h


def _step_forward(ut, delta, Ad, inv_a, Bt, Ct, h, store: bool):
    """One fused pass per step; keeps every state in ``hs`` when ``store``."""
    L = ut.shape[0]
    state = h.shape
    y = np.empty((L,) + state[:-1], dtype=ut.dtype)
    hs = np.empty((L,) + state, dtype=ut.dtype) if store else None
    a_bar = np.empty(state, dtype=ut.dtype)
    bx = np.empty_like(a_bar)
    ping = [np.empty_like(a_bar), np.empty_like(a_bar)]
    for k in range(L):
        np.multiply(delta[k][..., None], Ad, out=a_bar)
        np.expm1(a_bar, out=bx)
        np.exp(a_bar, out=a_bar)
        bx *= inv_a
        bx *= ut[k][..., None]
        bx *= Bt[k][..., None, :]
        hk = hs[k] if store else ping[k % 2]
        np.multiply(a_bar, h, out=hk)
        hk += bx
        np.matmul(hk, Ct[k][..., None], out=y[k][..., None])
        h = hk
    return y, hs


def selective_scan(u: Tensor, delta_raw: Tensor, A: Tensor, B: Tensor, C: Tensor,
                   delta_bias: Tensor | None = None, d_skip: Tensor | None = None,
                   h0: np.ndarray | None = None, chunk_size: int | None = None) -> Tensor:
    """Fused discretize-and-scan over the second-to-last axis.

    u, delta_raw: (..., L, D); B, C: (..., L, N); A: (..., D, N) negative,
    its leading axes broadcasting against those of u.
    ``delta = softplus(delta_raw + delta_bias)``; per step
    ``h = exp(delta*A) h + f(delta*A) delta B u`` and ``y = C . h``.  The
    input term is evaluated as ``expm1(delta*A) / A``, the same quantity
    with no division by the (possibly tiny) product ``delta*A``.

    ``chunk_size`` switches the no-grad path to block-vectorized evaluation.
    """
    if u.ndim < 2 or u.shape != delta_raw.shape:
        raise DimensionError(f"u {u.shape} and delta {delta_raw.shape} must share shape (..., L, D)")
    if u.shape[-2] < 1:
        raise DimensionError("scan needs at least one step")
    if B.shape != C.shape or B.shape[:-1] != u.shape[:-1]:
        raise DimensionError(f"B {B.shape} / C {C.shape} incompatible with u {u.shape}")
    n_state = B.shape[-1]
    if A.shape[-2:] != (u.shape[-1], n_state):
        raise DimensionError(f"A {A.shape} must end in (D, N) = {(u.shape[-1], n_state)}")
    state_shape = u.shape[:-2] + (u.shape[-1], n_state)
    if np.broadcast_shapes(state_shape, A.shape) != state_shape:
        raise DimensionError(f"A {A.shape} does not broadcast into state {state_shape}")
    if chunk_size is not None and chunk_size < 1:
        raise ParameterError("chunk_size must be positive")
    Ad = A.data
    if (Ad >= 0).any():
        raise NumericError("state matrix A must be strictly negative")
    inv_a = 1.0 / Ad

    ut = np.moveaxis(u.data, -2, 0)
    z = np.moveaxis(delta_raw.data, -2, 0)
    if delta_bias is not None:
        z = z + delta_bias.data
    delta = _softplus(z)
    Bt = np.moveaxis(B.data, -2, 0)
    Ct = np.moveaxis(C.data, -2, 0)
    L = ut.shape[0]
    h_init = np.zeros(state_shape, dtype=ut.dtype) if h0 is None else \
        np.broadcast_to(np.asarray(h0, dtype=ut.dtype), state_shape)

    parents = [u, delta_raw, A, B, C]
    if delta_bias is not None:
        parents.append(delta_bias)
    if d_skip is not None:
        parents.append(d_skip)
    track = is_grad_enabled() and any(p.requires_grad for p in parents)

    hs = None
    if track or chunk_size is None:
        y, hs = _step_forward(ut, delta, Ad, inv_a, Bt, Ct, h_init, store=track)
    else:
        ys, h = [], h_init
        for s in range(0, L, chunk_size):
            sl = slice(s, s + chunk_size)
            yc, h = _chunk_forward(ut[sl], delta[sl], Ad, inv_a, Bt[sl], Ct[sl], h)
            ys.append(yc)
        y = np.concatenate(ys, axis=0)
    if d_skip is not None:
        y = y + ut * d_skip.data
    out = np.ascontiguousarray(np.moveaxis(y, 0, -2))
    if not np.isfinite(out).all():
        raise NumericError("selective scan produced a non-finite state")
    if not track:
        return record(out, parents, None, "selective_scan")

    def backward(g):
        gy = np.moveaxis(g, -2, 0)
        gu = np.empty_like(ut)
        gdelta = np.empty_like(ut)
        gB = np.empty_like(Bt)
        gC = np.empty_like(Ct)
        gA = np.zeros(state_shape, dtype=ut.dtype)
        gh, a_bar, q, tmp, gdA = (np.empty(state_shape, dtype=ut.dtype) for _ in range(5))
        carry = np.zeros(state_shape, dtype=ut.dtype)
        for k in range(L - 1, -1, -1):
            np.multiply(gy[k][..., None], Ct[k][..., None, :], out=gh)
            gh += carry
            gC[k] = np.matmul(gy[k][..., None, :], hs[k])[..., 0, :]
            np.multiply(delta[k][..., None], Ad, out=a_bar)
            np.expm1(a_bar, out=q)
            np.exp(a_bar, out=a_bar)
            q *= inv_a
            # d/d(dA) of [A_bar h_prev + expm1(dA)/A * u B] = A_bar h_prev + A_bar/A * u B
            np.multiply(a_bar, inv_a, out=tmp)
            tmp *= ut[k][..., None]
            tmp *= Bt[k][..., None, :]
            np.multiply(hs[k - 1] if k else h_init, a_bar, out=gdA)
            tmp += gdA
            np.multiply(gh, tmp, out=gdA)
            np.multiply(gh, q, out=tmp)
            gu[k] = np.matmul(tmp, Bt[k][..., None])[..., 0]
            gB[k] = np.matmul(ut[k][..., None, :], tmp)[..., 0, :]
            # explicit 1/A in the input term
            tmp *= inv_a
            tmp *= ut[k][..., None]
            tmp *= Bt[k][..., None, :]
            gA -= tmp
            np.multiply(gdA, delta[k][..., None], out=tmp)
            gA += tmp
            np.multiply(gdA, Ad, out=tmp)
            gdelta[k] = tmp.sum(-1)
            np.multiply(gh, a_bar, out=carry)
        gz = gdelta * _sigmoid(z)
        if d_skip is not None:
            gu = gu + gy * d_skip.data
        grads = [
            np.moveaxis(gu, 0, -2).reshape(u.shape),
            np.moveaxis(gz, 0, -2).reshape(delta_raw.shape),
            _unbroadcast(gA, Ad.shape),
            np.moveaxis(gB, 0, -2).reshape(B.shape),
            np.moveaxis(gC, 0, -2).reshape(C.shape),
        ]
        if delta_bias is not None:
            grads.append(_unbroadcast(gz.sum(0), delta_bias.shape))
        if d_skip is not None:
            grads.append(_unbroadcast((gy * ut).sum(0), d_skip.shape))
        return tuple(grads)

    return record(out, parents, backward, "selective_scan")


def s6_scan(x: Tensor, params: SsmParams, h0: np.ndarray | None = None,
            use_d_skip: bool | None = None, chunk_size: int | None = None) -> Tensor:
    """S6 over ``x`` of shape (..., L, D); returns the same shape.

    The ``D * x`` skip term is applied only when ``params.d_skip`` exists
    (or ``use_d_skip`` forces it off).
    """
    if x.shape[-1] != params.d_model:
        raise DimensionError(f"input has {x.shape[-1]} channels, params expect {params.d_model}")
    b = x @ params.w_b
    c = x @ params.w_c
    delta_raw = (x @ params.w_dt_down) @ params.w_dt_up
    skip = params.d_skip if use_d_skip is not False else None
    return selective_scan(x, delta_raw, params.A(), b, c, delta_bias=params.dt_bias, d_skip=skip,
                          h0=h0, chunk_size=chunk_size)
