"""Declarative run configuration (JSON mirroring the field names below)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .context import Variant
from .domain import SpatioTemporalDomain
from .errors import ConfigurationError
from .kernels import KernelFamily
from .network import NetworkConfig
from .training import TrainConfig

PATH_KEYS = ("events", "raster", "descriptions")


@dataclass
class RunConfig:
    domain: SpatioTemporalDomain
    variant: Variant = Variant.NAIVE
    M: int = 6
    L_per_axis: int = 4
    kernel_family: KernelFamily = KernelFamily.COMPACT_GAUSSIAN
    support_w: float = 3.0
    log_sigma: list | None = None
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: dict = field(default_factory=dict)
    seed: int = 0
    description_radius: float = 0.62
    val_start: float | None = None
    max_words: int = 200
    patch_px: int = 20
    # synthetic generator: target expected count over the whole domain
    synth_expected_events: float = 2000.0
    # bandwidths of the generating kernels (None: same as the model's initial ones)
    synth_log_sigma: list | None = None

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.kernel_family = KernelFamily(self.kernel_family)
        self.network.variant = self.variant
        if self.M < 2 or self.L_per_axis < 1:
            raise ConfigurationError("M must be >= 2 and L_per_axis >= 1")
        if not self.support_w > 0:
            raise ConfigurationError(f"support_w must be positive, got {self.support_w}")
        if self.log_sigma is not None and np.shape(self.log_sigma) != (3,):
            raise ConfigurationError("log_sigma must have three entries")
        if self.val_start is not None and not (
                self.domain.t_min <= self.val_start < self.domain.train_end):
            raise ConfigurationError("val_start must lie inside the training period")
        unknown = set(self.paths) - set(PATH_KEYS)
        if unknown:
            raise ConfigurationError(f"unknown path keys {sorted(unknown)}")
        if self.variant.uses_image and "raster" not in self.paths:
            raise ConfigurationError(f"variant {self.variant.value!r} needs paths.raster")
        if self.variant.uses_text and "descriptions" not in self.paths:
            raise ConfigurationError(f"variant {self.variant.value!r} needs paths.descriptions")

    @property
    def J(self) -> int:
        return self.M * self.L_per_axis ** 2

    def path(self, key: str) -> Path | None:
        p = self.paths.get(key)
        return None if p is None else Path(p)

    def to_dict(self) -> dict:
        d = self.domain
        return {
            "domain": {"t_min": d.t_min, "t_max": d.t_max, "s_min": list(d.s_min),
                       "s_max": list(d.s_max), "train_end": d.train_end},
            "variant": self.variant.value,
            "M": self.M,
            "L_per_axis": self.L_per_axis,
            "kernel_family": self.kernel_family.value,
            "support_w": self.support_w,
            "log_sigma": None if self.log_sigma is None else [float(v) for v in self.log_sigma],
            "network": self.network.to_dict(),
            "train": asdict(self.train),
            "paths": {k: str(v) for k, v in self.paths.items()},
            "seed": self.seed,
            "description_radius": self.description_radius,
            "val_start": self.val_start,
            "max_words": self.max_words,
            "patch_px": self.patch_px,
            "synth_expected_events": self.synth_expected_events,
            "synth_log_sigma": None if self.synth_log_sigma is None else [
                float(v) for v in self.synth_log_sigma],
        }

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None,
                  check_paths: bool = True) -> "RunConfig":
        raw = dict(raw)
        try:
            dom = raw.pop("domain")
            domain = SpatioTemporalDomain(float(dom["t_min"]), float(dom["t_max"]),
                                          tuple(dom["s_min"]), tuple(dom["s_max"]),
                                          float(dom["train_end"]))
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"config needs a complete 'domain' block: {exc}") from None
        variant = Variant(raw.get("variant", "naive"))
        net = dict(raw.pop("network", {}))
        net["variant"] = variant
        paths = {}
        for key, p in dict(raw.pop("paths", {})).items():
            p = Path(p)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            paths[key] = p
        if check_paths:
            missing = [str(p) for k, p in paths.items() if k != "events" and not p.exists()]
            if missing:
                raise ConfigurationError(f"config references missing files: {missing}")
        try:
            return cls(domain=domain, network=NetworkConfig(**net),
                       train=TrainConfig(**raw.pop("train", {})), paths=paths, **raw)
        except TypeError as exc:
            raise ConfigurationError(f"bad config field: {exc}") from None


def load_config(path, check_paths: bool = True) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from None
    return RunConfig.from_dict(raw, base_dir=path.parent, check_paths=check_paths)
