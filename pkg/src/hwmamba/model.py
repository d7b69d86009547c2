"""The hierarchical HWMamba classifier for 12-lead ECG pseudo-images."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DimensionError
from .nn import Conv2d, LayerNorm, Linear, Module
from .scan2d import ss2d
from .ssm import SsmParams
from .tensor import Tensor, _sigmoid, _softplus, concat, no_grad, record, sigmoid, silu


@dataclass
class NetConfig:
    depths: list[int] = field(default_factory=lambda: [2, 2, 2, 8])
    dims: list[int] = field(default_factory=lambda: [48, 96, 192, 384])
    patch_kernel: tuple[int, int] = (3, 16)
    patch_stride: tuple[int, int] = (1, 16)
    patch_padding: tuple[int, int] = (1, 0)
    down_stride: tuple[int, int] = (1, 2)
    # zero-pad W up to a multiple of the downsampling stride (the (1, 3) ablation)
    pad_to_stride: bool = False
    d_state: int = 16
    ssm_expand: int = 2
    mlp_expand: int = 4
    mlp_kind: str = "gated"
    num_classes: int = 26
    in_leads: int = 12
    input_length: int = 8192
    normalize_input: bool = False
    d_skip: bool = False
    share_scan_weights: bool = False
    dt_rank: int | None = None
    ln_eps: float = 1e-5

    def __post_init__(self):
        self.depths = [int(d) for d in self.depths]
        self.dims = [int(d) for d in self.dims]
        for name in ("patch_kernel", "patch_stride", "patch_padding", "down_stride"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if len(self.depths) != 4 or len(self.dims) != 4:
            raise ConfigError("depths and dims must each list four stages")
        if min(self.depths) < 1 or min(self.dims) < 1:
            raise ConfigError("depths and dims must be positive")
        if self.mlp_kind not in ("gated", "plain"):
            raise ConfigError(f"mlp_kind must be 'gated' or 'plain', got {self.mlp_kind!r}")
        if self.d_state < 1 or self.ssm_expand < 1 or self.mlp_expand < 1 or self.num_classes < 1:
            raise ConfigError("state dimension, expansions and class count must be positive")
        if min(self.patch_stride + self.down_stride) < 1:
            raise ConfigError("strides must be positive")
        if self.input_length % self.patch_stride[1]:
            raise ConfigError(f"input_length {self.input_length} not divisible by patch stride {self.patch_stride[1]}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown network config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def paper(cls, **overrides) -> "NetConfig":
        return cls(**overrides)

    @classmethod
    def micro(cls, **overrides) -> "NetConfig":
        base = dict(depths=[1, 1, 1, 2], dims=[4, 8, 16, 32], input_length=256, num_classes=4)
        base.update(overrides)
        return cls(**base)


def ablation_configs(base: NetConfig | None = None) -> dict[str, NetConfig]:
    """The configuration axes compared in the ablation table."""
    base = base or NetConfig.paper()
    return {
        "mlp": dataclasses.replace(base, mlp_kind="plain"),
        "stride_2_2": dataclasses.replace(base, down_stride=(2, 2)),
        "stride_1_3": dataclasses.replace(base, down_stride=(1, 3), pad_to_stride=True),
        "norm": dataclasses.replace(base, normalize_input=True),
        "state_dim_1": dataclasses.replace(base, d_state=1),
        "proposed": dataclasses.replace(base),
    }


class GatedMLP(Module):
    """silu(x W_v) * sigmoid(x W_g), projected back to C."""

    def __init__(self, dim: int, expand: int = 4, rng=None, dtype=np.float64):
        hidden = dim * expand
        self.fc_value = Linear(dim, hidden, rng=rng, dtype=dtype)
        self.fc_gate = Linear(dim, hidden, rng=rng, dtype=dtype)
        self.fc_out = Linear(hidden, dim, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc_out(silu(self.fc_value(x)) * sigmoid(self.fc_gate(x)))


class PlainMLP(Module):
    def __init__(self, dim: int, expand: int = 4, rng=None, dtype=np.float64):
        hidden = dim * expand
        self.fc_value = Linear(dim, hidden, rng=rng, dtype=dtype)
        self.fc_out = Linear(hidden, dim, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc_out(silu(self.fc_value(x)))


class SS2DMixer(Module):
    """LN -> linear C->eC -> depthwise 3x3 -> SiLU -> SS2D -> linear eC->C."""

    def __init__(self, dim: int, cfg: NetConfig, rng=None, dtype=np.float64):
        inner = dim * cfg.ssm_expand
        self.norm = LayerNorm(dim, cfg.ln_eps, dtype=dtype)
        self.in_proj = Linear(dim, inner, rng=rng, dtype=dtype)
        self.dwconv = Conv2d(inner, inner, 3, padding=(1, 1), groups=inner, rng=rng, dtype=dtype)
        self.ssm = SsmParams.init(inner, cfg.d_state, rank=cfg.dt_rank,
                                  directions=1 if cfg.share_scan_weights else 4,
                                  use_d_skip=cfg.d_skip, rng=rng, dtype=dtype)
        self.out_proj = Linear(inner, dim, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        y = self.in_proj(self.norm(x))
        y = self.dwconv(y.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
        y = ss2d(silu(y), self.ssm, chunk_size=512)
        return self.out_proj(y)


class HWMambaBlock(Module):
    """Two residual branches: the SS2D mixer, then the (gated) MLP."""

    def __init__(self, dim: int, cfg: NetConfig, rng=None, dtype=np.float64):
        self.mixer = SS2DMixer(dim, cfg, rng=rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, cfg.ln_eps, dtype=dtype)
        mlp_cls = GatedMLP if cfg.mlp_kind == "gated" else PlainMLP
        self.mlp = mlp_cls(dim, cfg.mlp_expand, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.mixer(x)
        return x + self.mlp(self.norm2(x))


class PatchEmbed(Module):
    def __init__(self, cfg: NetConfig, rng=None, dtype=np.float64):
        self.stride = cfg.patch_stride
        self.proj = Conv2d(1, cfg.dims[0], cfg.patch_kernel, stride=cfg.patch_stride,
                           padding=cfg.patch_padding, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        """(B, 1, leads, T) -> channels-last (B, H, W, C)."""
        if x.shape[-1] % self.stride[1]:
            raise DimensionError(f"signal length {x.shape[-1]} not divisible by patch stride {self.stride[1]}")
        return self.proj(x).permute(0, 2, 3, 1)


def pad_width(x: Tensor, multiple: int) -> Tensor:
    """Zero-pad the W axis of (B, H, W, C) up to a multiple of ``multiple``."""
    extra = -x.shape[2] % multiple
    if not extra:
        return x
    zeros = Tensor(np.zeros(x.shape[:2] + (extra,) + x.shape[3:], dtype=x.dtype))
    return concat([x, zeros], axis=2)


class Downsample(Module):
    """3x3 conv (padding 1, configurable stride) doubling channels, then LN."""

    def __init__(self, c_in: int, c_out: int, cfg: NetConfig, rng=None, dtype=np.float64):
        self.stride = cfg.down_stride
        self.conv = Conv2d(c_in, c_out, 3, stride=cfg.down_stride, padding=(1, 1), rng=rng, dtype=dtype)
        self.norm = LayerNorm(c_out, cfg.ln_eps, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[2] % self.stride[1]:
            raise DimensionError(f"width {x.shape[2]} not divisible by downsampling stride {self.stride[1]}")
        y = self.conv(x.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
        return self.norm(y)


class Classifier(Module):
    def __init__(self, dim: int, num_classes: int, cfg: NetConfig, rng=None, dtype=np.float64):
        self.norm = LayerNorm(dim, cfg.ln_eps, dtype=dtype)
        self.fc = Linear(dim, num_classes, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        pooled = self.norm(x).mean(axis=(1, 2))
        return self.fc(pooled)


def zscore_leads(x: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Per-lead standardization along the last axis; flat leads pass through."""
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    flat = sd < floor
    return np.where(flat, x, (x - mu) / np.where(flat, 1.0, sd))


class HWMamba(Module):
    def __init__(self, cfg: NetConfig, seed: int = 0, dtype=np.float64):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.patch_embed = PatchEmbed(cfg, rng=rng, dtype=dtype)
        self.stages = []
        self.downsamples = []
        for i, (depth, dim) in enumerate(zip(cfg.depths, cfg.dims)):
            self.stages.append([HWMambaBlock(dim, cfg, rng=rng, dtype=dtype) for _ in range(depth)])
            if i < 3:
                self.downsamples.append(Downsample(dim, cfg.dims[i + 1], cfg, rng=rng, dtype=dtype))
        self.head = Classifier(cfg.dims[-1], cfg.num_classes, cfg, rng=rng, dtype=dtype)

    def named_parameters(self, prefix: str = ""):
        yield from self.patch_embed.named_parameters(prefix + "patch_embed.")
        for i, blocks in enumerate(self.stages):
            for j, block in enumerate(blocks):
                yield from block.named_parameters(f"{prefix}stages.{i}.{j}.")
            if i < 3:
                yield from self.downsamples[i].named_parameters(f"{prefix}downsamples.{i}.")
        yield from self.head.named_parameters(prefix + "head.")

    def _prepare(self, x) -> Tensor:
        arr = x.data if isinstance(x, Tensor) else np.asarray(x)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[1] != self.cfg.in_leads:
            raise DimensionError(f"expected (B, {self.cfg.in_leads}, T) input, got {np.shape(x)}")
        if self.cfg.normalize_input:
            arr = zscore_leads(arr)
        if isinstance(x, Tensor) and x.requires_grad and not self.cfg.normalize_input:
            return x.reshape(arr.shape[0], 1, arr.shape[1], arr.shape[2])
        return Tensor(arr[:, None].astype(self.dtype, copy=False))

    def forward_logits(self, x, trace: list | None = None) -> Tensor:
        """Logits of shape (B, num_classes); ``trace`` collects (C, H, W) per stage."""
        h = self.patch_embed(self._prepare(x))
        for i, blocks in enumerate(self.stages):
            for block in blocks:
                h = block(h)
            if trace is not None:
                trace.append((h.shape[3], h.shape[1], h.shape[2]))
            if i < 3:
                if self.cfg.pad_to_stride:
                    h = pad_width(h, self.cfg.down_stride[1])
                h = self.downsamples[i](h)
        return self.head(h)

    def forward(self, x, trace: list | None = None) -> Tensor:
        return sigmoid(self.forward_logits(x, trace))

    def predict(self, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 2:
            x = x[None]
        out = []
        with no_grad():
            for s in range(0, len(x), batch_size):
                out.append(self.forward(x[s:s + batch_size]).data)
        return np.concatenate(out, axis=0)


def count_parameters(model: Module) -> int:
    return int(sum(t.size for t in model.parameters()))


LOGIT_CLAMP = 30.0


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy over every entry, from clamped logits.

    The clamp keeps the loss finite under saturation; the gradient is
    passed straight through it as ``(sigmoid(z) - t) / count``.
    """
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise DimensionError(f"targets {t.shape} do not match logits {logits.shape}")
    if not np.isin(t, (0.0, 1.0)).all():
        raise DataError("targets must be binary")
    z = np.clip(logits.data, -LOGIT_CLAMP, LOGIT_CLAMP)
    loss = np.maximum(z, 0.0) - z * t + _softplus(-np.abs(z))
    n = loss.size

    def backward(g):
        return (g * (_sigmoid(z) - t) / n,)

    return record(np.asarray(loss.mean()), (logits,), backward, "bce_with_logits")
