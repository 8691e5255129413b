"""Experiment configuration: one JSON document, sections mirror the module defaults."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from pcdiff.data import DataConfig
from pcdiff.denoiser import PointVoxelConfig
from pcdiff.filtering import STRATEGIES
from pcdiff.projection import DEFAULT_RADIUS
from pcdiff.schedule import build_schedule
from pcdiff.training import MODES, Conditioner, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 1e-5
    beta_end: float = 8e-3
    warmup_fraction: float = 0.1
    posterior_variance: bool = False

    def build(self):
        return build_schedule(self.T, self.beta_start, self.beta_end,
                              self.warmup_fraction, self.posterior_variance)


@dataclass
class ModelSection:
    voxel_resolution: int = 16
    unet_depth: int = 4
    stage_channels: tuple = (16, 32, 64, 128)
    point_mlp_widths: tuple = (64, 128)
    time_dim: int = 64
    head_width: int = 64
    groups: int = 8
    pooled_dim: int = 64


@dataclass
class ConditioningConfig:
    mode: str = "projection"
    radius_ndc: float = DEFAULT_RADIUS


@dataclass
class FilterConfig:
    strategy: str = "fm"
    k: int = 5
    radius_ndc: float = DEFAULT_RADIUS
    tau: float = 0.01


@dataclass
class PathsConfig:
    manifest: str | None = None
    checkpoint: str | None = None
    out_dir: str | None = None


@dataclass
class ExperimentConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    conditioning: ConditioningConfig = field(default_factory=ConditioningConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    data: DataConfig = field(default_factory=DataConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0

    def validate(self) -> ExperimentConfig:
        if self.conditioning.mode not in MODES:
            raise ConfigError(f"conditioning.mode must be one of {MODES}")
        if self.filter.strategy not in STRATEGIES + ("none",):
            raise ConfigError(f"filter.strategy must be one of {STRATEGIES + ('none',)}")
        if self.filter.k < 1:
            raise ConfigError("filter.k must be >= 1")
        try:
            self.model_config()
            self.schedule.build()
            dataclasses.replace(self.train)
            dataclasses.replace(self.data)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def model_config(self, colors: bool = False) -> PointVoxelConfig:
        d = dataclasses.asdict(self.model)
        return PointVoxelConfig(**d, global_cond=self.conditioning.mode == "global" and not colors)

    def conditioner(self) -> Conditioner:
        return Conditioner(self.conditioning.mode, self.conditioning.radius_ndc)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        kwargs = {}
        types = {f.name: f for f in dataclasses.fields(cls)}
        for key, value in doc.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            if key == "seed":
                kwargs[key] = int(value)
                continue
            section = types[key].default_factory
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            names = {f.name for f in dataclasses.fields(section)}
            bad = set(value) - names
            if bad:
                raise ConfigError(f"unknown key(s) in {key!r}: {sorted(bad)}")
            conv = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
            try:
                kwargs[key] = section(**conv)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad {key!r} section: {exc}") from exc
        return cls(**kwargs).validate()

    @classmethod
    def from_json(cls, text: str) -> ExperimentConfig:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        with open(path) as fh:
            return cls.from_json(fh.read())
