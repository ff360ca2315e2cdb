"""Run configuration: one JSON document with model, train, losses, latent,
diversity and data sections."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .models import AttributeSpec, ModelConfig, default_attributes


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    resolution: int = 32
    base_channels: int = 16
    channel_cap: int = 128
    mode: str = "image"
    hidden: int = 64
    attr_width: float = 0.25
    dropout: float = 0.3
    attributes: list | None = None


@dataclass
class LatentSection:
    kind: str = "unit-complex"
    d: int = 16


@dataclass
class TrainSection:
    batch_size: int = 32
    steps: int = 2000
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_rate: float = 0.96
    decay_steps: int = 1000
    checkpoint_every: int = 500
    seed: int = 0
    attr_steps: int = 2000
    attr_lr: float = 1e-3
    contractive_weight: float = 0.01
    contractive_sigma: float = 0.01
    aug_shift: int = 2
    aug_noise: float = 0.02


@dataclass
class LossSection:
    hist_bins: int = 32
    keep_ratio: float = 0.3
    mixer_rho: float = 0.99
    began_lambda: float = 0.001
    began_gamma: float = 0.7
    w_entropy: float = 1.0
    w_eq3: float = 1.0
    w_eq8a: float = 1.0
    w_eq8b: float = 1.0
    w_attr: float = 1.0
    focal_gamma: float = 2.0
    locality_beta: float = 1.0
    use_mixer: bool = False


@dataclass
class DiversitySection:
    embedding: str = "raw-pixel"
    threshold: float | None = None
    n0: int = 16
    trials: int = 20
    p_star: float = 0.5
    top_k: int = 10
    n_cap: int = 4096
    calib_samples: int = 1000
    calib_percentile: float = 1.0


@dataclass
class DataSection:
    kind: str = "sprites"
    n: int = 2000
    n_sizes: int = 10
    jitter: int = 0
    n_backgrounds: int = 1
    n_modes: int = 8
    radius: float = 2.0
    sigma: float = 0.2


SECTIONS = {
    "model": ModelSection,
    "latent": LatentSection,
    "train": TrainSection,
    "losses": LossSection,
    "diversity": DiversitySection,
    "data": DataSection,
}


@dataclass
class Config:
    model: ModelSection = field(default_factory=ModelSection)
    latent: LatentSection = field(default_factory=LatentSection)
    train: TrainSection = field(default_factory=TrainSection)
    losses: LossSection = field(default_factory=LossSection)
    diversity: DiversitySection = field(default_factory=DiversitySection)
    data: DataSection = field(default_factory=DataSection)

    def __post_init__(self):
        t = self.train
        if t.batch_size < 2:
            raise ConfigError("batch size must be >= 2")
        weights = [getattr(self.losses, f.name) for f in dataclasses.fields(LossSection) if f.name.startswith("w_")]
        if any(w < 0 for w in weights):
            raise ConfigError("loss weights must be >= 0")
        if not 0 < self.losses.keep_ratio <= 1:
            raise ConfigError("keep_ratio must lie in (0, 1]")
        if self.latent.d < 1:
            raise ConfigError("latent dimension must be >= 1")

    @classmethod
    def from_dict(cls, doc):
        doc = doc or {}
        unknown = set(doc) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        parts = {}
        for name, section in SECTIONS.items():
            values = doc.get(name, {}) or {}
            allowed = {f.name for f in dataclasses.fields(section)}
            bad = set(values) - allowed
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            parts[name] = section(**values)
        return cls(**parts)

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self):
        return dataclasses.asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def override(self, section, **values):
        """Return a copy with some fields of one section replaced; None values are skipped."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        doc = self.to_dict()
        doc[section].update(values)
        return Config.from_dict(doc)

    def attribute_spec(self):
        if self.model.mode == "vector":
            return []
        if self.model.attributes is None:
            return default_attributes(self.data.n_sizes)
        return [a if isinstance(a, AttributeSpec) else AttributeSpec(**a) for a in self.model.attributes]

    def model_config(self) -> ModelConfig:
        m = self.model
        return ModelConfig(
            resolution=m.resolution,
            d=self.latent.d,
            base_channels=m.base_channels,
            channel_cap=m.channel_cap,
            attributes=self.attribute_spec(),
            latent_kind=self.latent.kind,
            mode=m.mode,
            hidden=m.hidden,
            attr_width=m.attr_width,
            dropout=m.dropout,
        )


def toy_config(**train):
    """Vector-mode preset for the ring-of-Gaussians experiments."""
    doc = {
        "model": {"mode": "vector", "hidden": 64},
        "latent": {"kind": "unit-complex", "d": 1},
        "train": {"batch_size": 128, "steps": 2000, "lr": 1e-3, "checkpoint_every": 500},
        "data": {"kind": "ring", "n": 10000, "n_modes": 8, "radius": 2.0, "sigma": 0.2},
        "losses": {"keep_ratio": 1.0, "w_entropy": 5.0},
    }
    doc["train"].update(train)
    return Config.from_dict(doc)


def ablation_config(cfg: Config) -> Config:
    """Plain uniform-box latent with the latent-identity and entropy terms disabled."""
    return cfg.override("latent", kind="uniform-box").override("losses", w_entropy=0.0, w_eq8a=0.0, w_eq8b=0.0)
