"""Optimizer, schedule, splits, the training loop and evaluation."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, ParameterError, TrainingError
from .metrics import MetricsReport, auroc_per_class, compute_report, search_thresholds, subset_accuracy, \
    WeightMatrix
from .model import HWMamba, NetConfig, bce_with_logits
from .preprocess import EcgRecord, fix_length, record_rng, resample, zscore
from .state import ModelState, read_tensors, write_tensors
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    base_lr: float = 1e-3
    warmup_start_lr: float = 1e-5
    min_lr: float = 1e-6
    warmup_epochs: float = 5
    decay_epochs: float = 13
    batch_size: int = 20
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    seed: int = 0
    folds: int = 5
    train_fraction: float = 0.8
    dtype: str = "float32"
    normalize: bool = False
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if isinstance(self.net, dict):
            self.net = NetConfig.from_dict(self.net)
        self.validate()

    def validate(self) -> None:
        if min(self.base_lr, self.warmup_start_lr, self.min_lr) <= 0:
            raise ConfigError("learning rates must be positive")
        if self.min_lr >= self.base_lr:
            raise ConfigError("min_lr must be below base_lr")
        if self.warmup_epochs < 0 or self.decay_epochs <= 0:
            raise ConfigError("warmup must be non-negative and decay positive")
        if self.batch_size < 1 or self.folds < 2:
            raise ConfigError("batch_size must be positive and folds at least 2")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie strictly between 0 and 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("Adam betas must lie in [0, 1) and eps must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def epochs(self) -> float:
        return self.warmup_epochs + self.decay_epochs

    def with_epochs(self, total: int) -> "TrainConfig":
        """Same schedule shape stretched or squeezed to ``total`` epochs."""
        if total < 1:
            raise ConfigError("epoch count must be positive")
        frac = self.warmup_epochs / self.epochs
        return dataclasses.replace(self, warmup_epochs=total * frac, decay_epochs=total * (1 - frac))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["net"] = self.net.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known - {"epochs"}
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        d = dict(d)
        epochs = d.pop("epochs", None)
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.with_epochs(int(epochs)) if epochs is not None else cfg


def lr_at(epoch: float, cfg: TrainConfig) -> float:
    """Linear warmup from warmup_start_lr to base_lr, then cosine decay to min_lr."""
    if not 0 <= epoch <= cfg.epochs + 1e-9:
        raise ParameterError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    w = cfg.warmup_epochs
    if epoch <= w:
        frac = epoch / w if w > 0 else 1.0
        return (1.0 - frac) * cfg.warmup_start_lr + frac * cfg.base_lr
    progress = min((epoch - w) / cfg.decay_epochs, 1.0)
    return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * progress))


class Adam:
    """Bias-corrected Adam over a fixed, named parameter list."""

    def __init__(self, named_params: Sequence[tuple[str, Tensor]], beta1: float = 0.9, beta2: float = 0.98,
                 eps: float = 1e-9):
        self.params = list(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}
        self.step_count = 0

    def step(self, lr: float) -> None:
        if not lr > 0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        for name, p in self.params:
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise TrainingError(f"non-finite gradient for parameter {name}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)
            p.data = p.data - update

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m.{n}": a for n, a in self.m.items()}
        out.update({f"v.{n}": a for n, a in self.v.items()})
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], step: int) -> None:
        for n, p in self.params:
            for key, store in (("m", self.m), ("v", self.v)):
                arr = arrays.get(f"{key}.{n}")
                if arr is None or arr.shape != p.shape:
                    raise DataError(f"optimizer state for {n} is missing or mis-shaped")
                store[n] = arr.astype(p.dtype).copy()
        self.step_count = int(step)


def _iterative_stratification(labels: np.ndarray, ratios: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    """Greedy multi-label stratification: rarest remaining label first.

    Returns the fold index of every row.
    """
    n = labels.shape[0]
    ratios = np.asarray(ratios, dtype=float)
    order = rng.permutation(n)
    y = labels[order].astype(bool)
    desired_total = n * ratios
    desired = np.outer(ratios, y.sum(axis=0))
    fold = np.full(n, -1)
    remaining = np.ones(n, dtype=bool)
    while remaining.any():
        counts = y[remaining].sum(axis=0)
        if counts.any():
            label = int(np.argmin(np.where(counts > 0, counts, np.iinfo(np.int64).max)))
            rows = np.flatnonzero(remaining & y[:, label])
        else:
            label, rows = None, np.flatnonzero(remaining)
        for r in rows:
            if label is not None:
                cand = np.flatnonzero(desired[:, label] == desired[:, label].max())
            else:
                cand = np.arange(len(ratios))
            if len(cand) > 1:
                best = desired_total[cand].max()
                cand = cand[desired_total[cand] == best]
            f = int(cand[0]) if len(cand) == 1 else int(rng.choice(cand))
            fold[r] = f
            desired[f] -= y[r]
            desired_total[f] -= 1
            remaining[r] = False
    out = np.empty(n, dtype=int)
    out[order] = fold
    return out


def stratified_split(ids: Sequence[str], labels: np.ndarray, train_fraction: float = 0.8,
                     seed: int = 0) -> tuple[list[str], list[str]]:
    ids = list(ids)
    if len(ids) < 2:
        raise DataError("a split needs at least two records")
    labels = np.asarray(labels)
    if labels.shape[0] != len(ids):
        raise DataError("one label row is required per id")
    fold = _iterative_stratification(labels, [train_fraction, 1 - train_fraction], np.random.default_rng(seed))
    return [i for i, f in zip(ids, fold) if f == 0], [i for i, f in zip(ids, fold) if f == 1]


def kfold(ids: Sequence[str], labels: np.ndarray, k: int = 5, seed: int = 0) -> list[tuple[list[str], list[str]]]:
    """``k`` (fit, validation) pairs; validation sets partition ``ids``."""
    ids = list(ids)
    if k < 2 or k > len(ids):
        raise ParameterError(f"k must lie in [2, {len(ids)}], got {k}")
    fold = _iterative_stratification(np.asarray(labels), [1.0 / k] * k, np.random.default_rng(seed))
    return [([i for i, f in zip(ids, fold) if f != j], [i for i, f in zip(ids, fold) if f == j]) for j in range(k)]


def prepare_inputs(records: Sequence[EcgRecord], length: int, normalize: bool = False, seed: int | None = None,
                   epoch: int = 0) -> np.ndarray:
    """Stack conditioned signals; windows are random per (seed, epoch, id) when ``seed`` is given, centered otherwise."""
    out = []
    for rec in records:
        rng = record_rng(seed, rec.id, epoch) if seed is not None else None
        r = fix_length(resample(rec), length, rng)
        out.append((zscore(r) if normalize else r).signal)
    return np.stack(out)


@dataclass
class TrainResult:
    model: HWMamba
    optimizer: Adam
    log: list[dict]


def _checkpoint_dir(out_dir: Path, epoch: int) -> Path:
    return out_dir / "checkpoints" / f"epoch_{epoch:03d}"


def save_checkpoint(directory: str | Path, model: HWMamba, opt: Adam, cfg: TrainConfig, epoch: int,
                    history: list[dict]) -> None:
    directory = Path(directory)
    ModelState.from_model(model, opt.step_count, {"epoch": epoch, "train_config": cfg.to_dict()}).save(directory)
    write_tensors(directory, "optimizer", opt.state_arrays(), {"step": opt.step_count})
    (directory / "log.json").write_text(json.dumps(history, indent=1))


def load_checkpoint(directory: str | Path) -> tuple[HWMamba, Adam, TrainConfig, int, list[dict]]:
    directory = Path(directory)
    state = ModelState.load(directory)
    cfg = TrainConfig.from_dict(state.extra["train_config"])
    model = state.build()
    opt = Adam(model.named_parameters(), cfg.beta1, cfg.beta2, cfg.eps)
    arrays, manifest = read_tensors(directory, "optimizer")
    opt.load_arrays(arrays, manifest["step"])
    history = json.loads((directory / "log.json").read_text())
    return model, opt, cfg, int(state.extra["epoch"]), history


def train(cfg: TrainConfig, records: Sequence[EcgRecord], out_dir: str | Path | None = None,
          resume_from: str | Path | None = None, max_epochs: int | None = None) -> TrainResult:
    """Mini-batch Adam on mean BCE under the warmup-cosine schedule.

    Checkpoints land in ``out_dir/checkpoints/epoch_NNN`` after every epoch.
    ``resume_from`` continues from such a checkpoint; ``max_epochs`` stops early.
    """
    if not records:
        raise DataError("cannot train on an empty dataset")
    num_classes = len(records[0].labels)
    if num_classes != cfg.net.num_classes:
        raise ConfigError(f"dataset has {num_classes} classes, network expects {cfg.net.num_classes}")
    total = int(math.ceil(cfg.epochs - 1e-9))
    dtype = np.dtype(cfg.dtype)
    if resume_from is not None:
        model, opt, saved_cfg, last, history = load_checkpoint(resume_from)
        if saved_cfg.to_dict() != cfg.to_dict():
            raise ConfigError("checkpoint was written under a different training config")
        start = last + 1
    else:
        model = HWMamba(cfg.net, seed=cfg.seed, dtype=dtype)
        opt = Adam(model.named_parameters(), cfg.beta1, cfg.beta2, cfg.eps)
        start, history = 0, []
    stop = total if max_epochs is None else min(total, max_epochs)
    targets_all = np.stack([r.labels for r in records]).astype(dtype)
    n = len(records)
    batches = int(math.ceil(n / cfg.batch_size))
    out_dir = Path(out_dir) if out_dir is not None else None

    for epoch in range(start, stop):
        rng = np.random.default_rng([cfg.seed, epoch, 7])
        perm = rng.permutation(n)
        x_all = prepare_inputs(records, cfg.net.input_length, cfg.normalize, seed=cfg.seed, epoch=epoch).astype(dtype)
        losses, probs = [], np.empty_like(targets_all)
        for b in range(batches):
            idx = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            lr = lr_at(min(epoch + b / batches, cfg.epochs), cfg)
            model.zero_grad()
            logits = model.forward_logits(x_all[idx])
            loss = bce_with_logits(logits, targets_all[idx])
            value = float(loss.item())
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            loss.backward()
            opt.step(lr)
            losses.append(value * len(idx))
            probs[idx] = 1.0 / (1.0 + np.exp(-logits.data))
        per_auc = auroc_per_class(probs, targets_all)
        entry = {
            "epoch": epoch,
            "lr": lr_at(epoch, cfg),
            "loss": float(np.sum(losses) / n),
            "train_subset_accuracy": subset_accuracy(probs > 0.5, targets_all),
            "train_auroc_macro": float(np.nanmean(per_auc)) if not np.isnan(per_auc).all() else None,
            "step": opt.step_count,
        }
        history.append(entry)
        log.info("epoch %d lr %.3g loss %.5f acc %.3f", epoch, entry["lr"], entry["loss"],
                 entry["train_subset_accuracy"])
        if out_dir is not None:
            save_checkpoint(_checkpoint_dir(out_dir, epoch), model, opt, cfg, epoch, history)
    return TrainResult(model, opt, history)


def predict_records(model: HWMamba, records: Sequence[EcgRecord], normalize: bool = False,
                    batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    x = prepare_inputs(records, model.cfg.input_length, normalize).astype(model.dtype)
    return model.predict(x, batch_size), np.stack([r.labels for r in records])


def evaluate(model: HWMamba, records: Sequence[EcgRecord], classes: Sequence[str],
             thresholds: dict[str, float] | None = None, calibration: Sequence[EcgRecord] | None = None,
             weights: WeightMatrix | None = None, normalize: bool = False) -> MetricsReport:
    """All six metrics on ``records``.

    Thresholds are taken from ``thresholds`` when given, else searched on
    ``calibration`` (the training split), else on ``records`` themselves.
    """
    if len(classes) != model.cfg.num_classes:
        raise ConfigError(f"{len(classes)} classes but the model predicts {model.cfg.num_classes}")
    probs, targets = predict_records(model, records, normalize)
    if thresholds is not None:
        source = "given"
    elif calibration is not None:
        cp, ct = predict_records(model, calibration, normalize)
        thresholds, source = search_thresholds(cp, ct, weights, classes), "train"
    else:
        thresholds, source = search_thresholds(probs, targets, weights, classes), "test"
    return compute_report(probs, targets, thresholds, source, weights, classes)
