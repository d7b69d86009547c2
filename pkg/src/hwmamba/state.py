"""Bit-exact persistence: a JSON manifest plus one little-endian tensor blob."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import HWMamba, NetConfig

FORMAT_VERSION = 1


def write_tensors(directory: str | Path, stem: str, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """``<stem>.json`` describes every tensor's slice of ``<stem>.bin``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(directory / f"{stem}.bin", "wb") as fh:
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr)
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            raw = le.tobytes()
            fh.write(raw)
            entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.newbyteorder("<").str,
                            "offset": offset, "nbytes": len(raw)})
            offset += len(raw)
    manifest = {"format_version": FORMAT_VERSION, **meta, "tensors": entries}
    (directory / f"{stem}.json").write_text(json.dumps(manifest, indent=1))


def read_tensors(directory: str | Path, stem: str) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / f"{stem}.json").read_text())
        blob = (directory / f"{stem}.bin").read_bytes()
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {stem} from {directory}: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{directory}: unsupported format version {manifest.get('format_version')}")
    tensors = {}
    for e in manifest["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(blob):
            raise DataError(f"{directory}: tensor {e['name']} extends past the end of the blob")
        arr = np.frombuffer(blob[e["offset"]:end], dtype=np.dtype(e["dtype"]))
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(arr.dtype.newbyteorder("="))
    return tensors, manifest


@dataclass
class ModelState:
    config: NetConfig
    tensors: dict[str, np.ndarray]
    step: int = 0
    dtype: str = "float64"
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: HWMamba, step: int = 0, extra: dict | None = None) -> "ModelState":
        return cls(model.cfg, {k: v.copy() for k, v in model.state_dict().items()}, step,
                   model.dtype.name, dict(extra or {}))

    def build(self) -> HWMamba:
        model = HWMamba(self.config, dtype=np.dtype(self.dtype))
        model.load_state_dict(self.tensors)
        return model

    def save(self, directory: str | Path) -> None:
        meta = {"config": self.config.to_dict(), "step": self.step, "dtype": self.dtype, "extra": self.extra}
        write_tensors(directory, "model", self.tensors, meta)

    @classmethod
    def load(cls, directory: str | Path) -> "ModelState":
        tensors, manifest = read_tensors(directory, "model")
        return cls(NetConfig.from_dict(manifest["config"]), tensors, int(manifest["step"]),
                   manifest["dtype"], manifest.get("extra", {}))
