"""Run configuration: one JSON file with a section per component."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .evaluate import GroundTruthRule
from .exceptions import ConfigError
from .network import TrainConfig
from .posegraph import NoiseSpec
from .supervision import KernelParams, LabelThresholds
from .synthworld import WorldConfig


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=lambda: [96, 64])
    embedding_dim: int = 32
    margin: float = 1.0
    activation: str = "relu"

    def __post_init__(self):
        self.hidden = [int(h) for h in self.hidden]
        if any(h < 1 for h in self.hidden) or self.embedding_dim < 1:
            raise ConfigError("layer widths must be >= 1")
        if not self.margin > 0:
            raise ConfigError("margin must be > 0")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass
class ExperimentConfig:
    # synthetic session indices generated for training and for the held-out test
    train_sessions: list = field(default_factory=lambda: list(range(12)))
    test_session: int = 12
    temporal_guard: int = 10
    sync_tolerance: float = 0.1
    keyframe_trans: float = 5.0
    keyframe_rot: float = 0.5235987755982988
    bins: int = 50
    sweep_size: int = 256
    knn_max_k: int = 0
    # 0 means the model margin
    accept_radius: float = 0.0
    reoptimize_every: int = 10

    def __post_init__(self):
        self.train_sessions = [int(s) for s in self.train_sessions]
        if not self.train_sessions:
            raise ConfigError("train_sessions must list at least one session")
        if self.test_session in self.train_sessions:
            raise ConfigError("test_session must not be a training session")
        for name in ("temporal_guard", "knn_max_k", "accept_radius"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("bins", "sweep_size", "reoptimize_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass
class PathsConfig:
    out_dir: str = "run"
    # explicit session directories override the generated ones when non-empty
    train_sessions: list = field(default_factory=list)
    test_session: str = ""
    checkpoint: str = ""


_SECTIONS = {
    "world": WorldConfig,
    "kernel": KernelParams,
    "labels": LabelThresholds,
    "model": ModelConfig,
    "train": TrainConfig,
    "rule": GroundTruthRule,
    "noise": NoiseSpec,
    "experiment": ExperimentConfig,
    "paths": PathsConfig,
}


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    kernel: KernelParams = field(default_factory=KernelParams)
    labels: LabelThresholds = field(default_factory=LabelThresholds)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    rule: GroundTruthRule = field(default_factory=GroundTruthRule)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - set(_SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for name, klass in _SECTIONS.items():
            section = d.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be an object")
            allowed = {f.name for f in dataclasses.fields(klass)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            try:
                kwargs[name] = klass(**section)
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"section {name!r}: {exc}") from None
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
        return cls(seed=seed, **kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}
        out["world"]["grid"] = list(out["world"]["grid"])
        out["seed"] = self.seed
        return out

    def with_overrides(self, seed=None, out_dir=None) -> "RunConfig":
        d = self.to_dict()
        if seed is not None:
            d["seed"] = int(seed)
        if out_dir is not None:
            d["paths"]["out_dir"] = str(out_dir)
        return RunConfig.from_dict(d)

    @property
    def accept_radius(self) -> float:
        return self.experiment.accept_radius or self.model.margin

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)
