import logging
from dataclasses import dataclass, fields, replace
from typing import Dict, Optional, Tuple

import numpy as np
from dotenv import dotenv_values

from poseflux.src.config.settings import (
    DEFAULT_BATCH,
    DEFAULT_BETA1,
    DEFAULT_BETAT,
    DEFAULT_CHANNELS,
    DEFAULT_FRAMES,
    DEFAULT_LATENT_SIZE,
    DEFAULT_LEARNING_RATE,
    DEFAULT_LORA_RANK,
    DEFAULT_SEED,
    DEFAULT_STEPS_T,
    DEFAULT_TAU,
    DEFAULT_TRAIN_STEPS,
)
from poseflux.src.models.errors import ConfigError
from poseflux.src.models.pose import PoseSequence, RgbImage

logger = logging.getLogger("poseflux.training")

# config file key -> (field, type)
CONFIG_KEYS: Dict[str, Tuple[str, type]] = {
    "stage": ("stage", int),
    "seed": ("seed", int),
    "lr": ("learning_rate", float),
    "steps": ("steps", int),
    "batch": ("batch", int),
    "c": ("channels", int),
    "f": ("frames", int),
    "h": ("height", int),
    "w": ("width", int),
    "rank": ("rank", int),
    "T": ("steps_t", int),
    "beta1": ("beta1", float),
    "betaT": ("beta_t", float),
    "tau": ("tau", float),
}


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    seed: int = DEFAULT_SEED
    learning_rate: float = DEFAULT_LEARNING_RATE
    steps: int = DEFAULT_TRAIN_STEPS
    batch: int = DEFAULT_BATCH
    channels: int = DEFAULT_CHANNELS
    frames: int = 1
    height: int = DEFAULT_LATENT_SIZE
    width: int = DEFAULT_LATENT_SIZE
    rank: int = DEFAULT_LORA_RANK
    steps_t: int = DEFAULT_STEPS_T
    beta1: float = DEFAULT_BETA1
    beta_t: float = DEFAULT_BETAT
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        for name in ("batch", "channels", "frames", "height", "width", "rank", "steps_t"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.steps < 0:
            raise ConfigError(f"steps must be non-negative, got {self.steps}")
        if not self.learning_rate > 0:
            raise ConfigError(f"lr must be positive, got {self.learning_rate}")
        if self.tau < 0:
            raise ConfigError(f"tau must be non-negative, got {self.tau}")
        if self.stage == 1 and self.frames != 1:
            logger.warning(f"Stage 1 trains on single frames; forcing f=1 (config asked for f={self.frames})")
            object.__setattr__(self, "frames", 1)

    @classmethod
    def from_mapping(cls, values: Dict[str, Optional[str]], source: str = "config") -> "TrainConfig":
        kwargs = {}
        for key, raw in values.items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{source}: unknown key {key!r}")
            name, kind = CONFIG_KEYS[key]
            if raw is None or not str(raw).strip():
                raise ConfigError(f"{source}: key {key!r} has no value")
            try:
                kwargs[name] = kind(str(raw).strip())
            except ValueError:
                raise ConfigError(f"{source}: key {key!r} expects a {kind.__name__}, got {raw!r}")
        if kwargs.get("stage") == 2 and "frames" not in kwargs:
            kwargs["frames"] = DEFAULT_FRAMES
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str) -> "TrainConfig":
        """Read a `key = value` file; omitted keys keep their defaults."""
        try:
            with open(path, encoding="utf-8") as handle:
                values = dotenv_values(stream=handle, interpolate=False)
        except OSError as e:
            raise ConfigError(f"{path}: cannot read config: {e.strerror}")
        logger.info(f"Loaded config {path} with keys {', '.join(values) or '(none)'}")
        return cls.from_mapping(dict(values), source=path)

    def with_overrides(self, **changes) -> "TrainConfig":
        known = {f.name for f in fields(self)}
        unknown = set(changes) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(sorted(unknown))}")
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def steps(self) -> int:
        return int(self.betas.shape[0])

    def alpha_bar(self, t: int) -> float:
        """Cumulative product at timestep t in 1..T."""
        return float(self.alpha_bars[t - 1])


@dataclass(frozen=True, eq=False)
class SyntheticSample:
    """One blob video: source render, its driving poses, RGB frames and the (c, f, h, w) latent."""

    source: RgbImage
    poses: PoseSequence
    frames: Tuple[RgbImage, ...]
    target: np.ndarray

    def __post_init__(self):
        if self.target.ndim != 4:
            raise ValueError(f"target latent must be (c, f, h, w), got {self.target.shape}")
        if not self.target.shape[1] == len(self.poses) == len(self.frames):
            raise ValueError(
                f"target has {self.target.shape[1]} frames, poses {len(self.poses)}, renders {len(self.frames)}"
            )
