"""Experiment configuration: TOML documents plus CLI-flag overrides.

One document captures everything a run needs (spec, sampling ranges,
corpus sizes, training schedules, metric grids, output directory, master
seed), so an experiment is reproducible from the file alone. Flags
override file values; the fully resolved config is hashed into the run
manifest.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .datasets import SamplingRanges
from .heatmaps import DEFAULT_SIGMA
from .interpreter import DEFAULT_HIDDEN_WIDTHS, DEFAULT_NOISE_LEVELS
from .metrics import DEFAULT_AZIMUTH_DELTAS, DEFAULT_RMSE_THRESHOLDS
from .refiner import DEFAULT_BOTTLENECK_WIDTHS
from .skeleton import BUNDLED_SPECS, SkeletonSpec, bundled_spec, load_spec

DEFAULT_SWEEP_LEVELS = (0.0, 0.02, 0.05, 0.10, 0.20)


class ConfigError(ValueError):
    """Raised when an experiment configuration is malformed."""


@dataclass
class DatasetSection:
    train_count: int = 30000
    test_count: int = 1000
    sigma: float = DEFAULT_SIGMA
    store_heatmaps: bool = False
    # sampling-range overrides; unset entries fall back to the spec defaults
    ranges: dict = field(default_factory=dict)


@dataclass
class TrainSection:
    hidden_widths: tuple = DEFAULT_HIDDEN_WIDTHS
    epochs: int = 30
    batch_size: int = 128
    lr: float = 1e-3
    noise_levels: tuple = DEFAULT_NOISE_LEVELS
    val_fraction: float = 0.1


@dataclass
class FinetuneSection:
    epochs: int = 10
    lr: float = 1e-4
    count: int = 1000
    # fine-tuning corpus perturbation std, as a fraction of the bbox
    # diagonal; 0.03 is a deliberate shift from the synthetic default 0.01
    perturbation: float = 0.03


@dataclass
class RefinerSection:
    hidden_widths: tuple = DEFAULT_BOTTLENECK_WIDTHS
    epochs: int = 20
    batch_size: int = 128
    lr: float = 1e-3
    noise_levels: tuple = (0.05, 0.1, 0.2)


@dataclass
class SweepSection:
    noise_levels: tuple = DEFAULT_SWEEP_LEVELS


@dataclass
class MetricsSection:
    rmse_thresholds: tuple = DEFAULT_RMSE_THRESHOLDS
    azimuth_deltas: tuple = DEFAULT_AZIMUTH_DELTAS
    pck_radius: float = 0.2
    ae_bound: float = 5.0


@dataclass
class ExperimentConfig:
    """Fully resolved settings for one experiment run."""

    spec: str = "chair"  # bundled spec name or path to a skeleton JSON
    seed: int = 0
    out: str = "runs/exp"
    dataset: DatasetSection = field(default_factory=DatasetSection)
    train: TrainSection = field(default_factory=TrainSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    refiner: RefinerSection = field(default_factory=RefinerSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Stable hash of the resolved settings, quoted in manifests."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


_SECTIONS = {
    "dataset": DatasetSection,
    "train": TrainSection,
    "finetune": FinetuneSection,
    "refiner": RefinerSection,
    "sweep": SweepSection,
    "metrics": MetricsSection,
}
_TUPLE_FIELDS = {"hidden_widths", "noise_levels", "rmse_thresholds", "azimuth_deltas"}


def _fill_section(cls, data: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"[{where}] {key} must be an array")
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad [{where}] section: {exc}") from None


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a config from a parsed TOML document, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table")
    top = {"spec", "seed", "out"}
    unknown = set(data) - top - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    cfg = ExperimentConfig(
        spec=str(data.get("spec", "chair")),
        seed=int(data.get("seed", 0)),
        out=str(data.get("out", "runs/exp")),
    )
    for name, cls in _SECTIONS.items():
        if name in data:
            section = data[name]
            if not isinstance(section, dict):
                raise ConfigError(f"[{name}] must be a table")
            setattr(cfg, name, _fill_section(cls, section, name))
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.dataset.train_count < 1 or cfg.dataset.test_count < 1:
        raise ConfigError("dataset counts must be >= 1")
    if cfg.dataset.sigma <= 0:
        raise ConfigError("dataset sigma must be positive")
    for name, levels in (
        ("train", cfg.train.noise_levels),
        ("refiner", cfg.refiner.noise_levels),
        ("sweep", cfg.sweep.noise_levels),
    ):
        for lv in levels:
            if not 0.0 <= float(lv) <= 1.0:
                raise ConfigError(f"[{name}] noise level {lv} outside [0, 1]")
    if cfg.train.epochs < 0 or cfg.finetune.epochs < 0 or cfg.refiner.epochs < 0:
        raise ConfigError("epoch counts must be >= 0")
    if cfg.train.lr <= 0 or cfg.finetune.lr <= 0 or cfg.refiner.lr <= 0:
        raise ConfigError("learning rates must be positive")
    if cfg.metrics.pck_radius <= 0 or cfg.metrics.ae_bound <= 0:
        raise ConfigError("metric radii/bounds must be positive")
    extra = set(cfg.dataset.ranges) - {"alpha_ranges", "omega_range", "t_range", "f_range"}
    if extra:
        raise ConfigError(f"unknown key(s) in [dataset.ranges]: {', '.join(sorted(extra))}")


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Load a config file (or defaults) and apply flag overrides.

    Overrides use top-level keys (seed, out) plus "count" (scales the
    dataset counts for smoke runs) and "noise_levels" (replaces the sweep
    grid).
    """
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            data = tomli.loads(p.read_text(encoding="utf-8"))
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from None
    cfg = config_from_dict(data)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "seed":
            cfg.seed = int(value)
        elif key == "out":
            cfg.out = str(value)
        elif key == "count":
            count = int(value)
            if count < 1:
                raise ConfigError("--count must be >= 1")
            cfg.dataset.train_count = count
            cfg.dataset.test_count = max(1, count // 10)
        elif key == "noise_levels":
            cfg.sweep = SweepSection(noise_levels=tuple(value))
        else:
            raise ConfigError(f"unknown override {key!r}")
    _validate(cfg)
    return cfg


def resolve_spec(cfg: ExperimentConfig) -> SkeletonSpec:
    """Materialize the spec named by the config (bundled name or path)."""
    if cfg.spec in BUNDLED_SPECS:
        return bundled_spec(cfg.spec)
    path = Path(cfg.spec)
    if not path.exists():
        raise FileNotFoundError(
            f"spec {cfg.spec!r} is neither a bundled name "
            f"({', '.join(BUNDLED_SPECS)}) nor an existing file"
        )
    return load_spec(path)


def resolve_ranges(cfg: ExperimentConfig, spec: SkeletonSpec) -> SamplingRanges:
    """Sampling ranges for the spec with any [dataset.ranges] overrides."""
    merged = SamplingRanges.for_spec(spec).to_dict()
    merged.update(cfg.dataset.ranges)
    return SamplingRanges.from_dict(merged)
