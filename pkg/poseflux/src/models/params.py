import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterator, Tuple

import numpy as np

from poseflux.src.config.settings import (
    APPEARANCE_BIAS_STD,
    DEFAULT_HEAD_COUNT,
    DEFAULT_LORA_RANK,
    FF_OUT_SCALE,
    NUM_BLOCKS,
    OUTPUT_BIAS_STD,
    OUTPUT_NOISE_STD,
    POSE_BIAS_STD,
    TIME_PROJ_SCALE,
)
from poseflux.src.models.attention import AttentionWeights, LoraDelta

logger = logging.getLogger("poseflux.params")

GROUP_NAMES: Tuple[str, ...] = (
    "pose_branch",
    "pose_temporal",
    "appearance_encoder",
    "lora",
    "denoiser_base",
    "denoiser_temporal",
)

TRAINABLE_BY_STAGE: Dict[int, FrozenSet[str]] = {
    1: frozenset({"appearance_encoder", "lora"}),
    2: frozenset({"pose_temporal", "denoiser_temporal"}),
}

# Pose images and the source image carry RGB.
IMAGE_CHANNELS = 3

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes, seed: int = _FNV_OFFSET) -> int:
    h = seed
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def trainable_groups(stage: int) -> FrozenSet[str]:
    if stage not in TRAINABLE_BY_STAGE:
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    return TRAINABLE_BY_STAGE[stage]


@dataclass
class ParamGroup:
    name: str
    tensors: Dict[str, np.ndarray]
    frozen: bool = True

    def __getitem__(self, key: str) -> np.ndarray:
        return self.tensors[key]

    def digest(self) -> int:
        """FNV-1a over tensor names, shapes and little-endian float64 payloads."""
        h = _FNV_OFFSET
        for key in sorted(self.tensors):
            value = np.ascontiguousarray(self.tensors[key], dtype="<f8")
            h = fnv1a64(key.encode("utf-8"), h)
            h = fnv1a64(np.asarray(value.shape, dtype="<u4").tobytes(), h)
            h = fnv1a64(value.tobytes(), h)
        return h

    def copy(self) -> "ParamGroup":
        return ParamGroup(self.name, {k: v.copy() for k, v in self.tensors.items()}, self.frozen)


@dataclass
class DenoiserParams:
    """Every weight of the toy denoiser, split into the groups the training stages freeze.

    stage is the last completed training stage (0 for fresh parameters); temporal
    layers take part in sampling only once stage 2 has run.
    """

    groups: Dict[str, ParamGroup]
    head_count: int = DEFAULT_HEAD_COUNT
    stage: int = 0

    def __post_init__(self):
        missing = [name for name in GROUP_NAMES if name not in self.groups]
        if missing:
            raise ValueError(f"missing parameter groups: {', '.join(missing)}")
        if self.channels % self.head_count:
            raise ValueError(f"{self.channels} channels cannot be split into {self.head_count} heads")

    def __getitem__(self, name: str) -> ParamGroup:
        return self.groups[name]

    @property
    def channels(self) -> int:
        return int(self.groups["denoiser_base"]["w_time"].shape[0])

    @property
    def blocks(self) -> int:
        return sum(1 for key in self.groups["denoiser_base"].tensors if key.startswith("wq."))

    @property
    def rank(self) -> int:
        return int(self.groups["lora"]["b_q.0"].shape[1])

    def attention(self, group: str, block: int) -> AttentionWeights:
        g = self.groups[group]
        return AttentionWeights(g[f"wq.{block}"], g[f"wk.{block}"], g[f"wv.{block}"], self.head_count)

    def lora(self, block: int) -> LoraDelta:
        g = self.groups["lora"]
        return LoraDelta(*(g[f"{name}.{block}"] for name in ("b_q", "b_k", "b_v", "a_q", "a_k", "a_v")))

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        """("group/tensor", array) pairs in a fixed order."""
        for name in GROUP_NAMES:
            for key, value in self.groups[name].tensors.items():
                yield f"{name}/{key}", value

    def flat(self) -> Dict[str, np.ndarray]:
        return dict(self.items())

    @classmethod
    def from_flat(cls, arrays: Dict[str, np.ndarray], head_count: int = DEFAULT_HEAD_COUNT, stage: int = 0):
        groups = {name: ParamGroup(name, {}) for name in GROUP_NAMES}
        for full, value in arrays.items():
            group, _, key = full.partition("/")
            if group not in groups or not key:
                raise ValueError(f"unknown parameter {full!r}")
            groups[group].tensors[key] = value
        return cls(groups, head_count, stage)

    def digests(self) -> Dict[str, int]:
        return {name: self.groups[name].digest() for name in GROUP_NAMES}

    def for_stage(self, stage: int) -> "DenoiserParams":
        """Set the freeze flags for a training stage."""
        trainable = trainable_groups(stage)
        for name, group in self.groups.items():
            group.frozen = name not in trainable
        return self

    def copy(self) -> "DenoiserParams":
        return DenoiserParams({k: g.copy() for k, g in self.groups.items()}, self.head_count, self.stage)

    @classmethod
    def initial(
        cls,
        rng: np.random.Generator,
        channels: int,
        rank: int = DEFAULT_LORA_RANK,
        head_count: int = DEFAULT_HEAD_COUNT,
        blocks: int = NUM_BLOCKS,
    ) -> "DenoiserParams":
        if channels % 2:
            raise ValueError(f"channel count must be even for the timestep embedding, got {channels}")
        c = channels
        unit = 1.0 / np.sqrt(c)

        def mat(rows, cols, std):
            return rng.normal(0.0, std, (rows, cols))

        pose_branch = {
            "w_in": mat(IMAGE_CHANNELS, c, 1.0 / np.sqrt(IMAGE_CHANNELS)),
            "b_in": rng.normal(0.0, POSE_BIAS_STD, c),
        }
        appearance = {
            "w_in": mat(IMAGE_CHANNELS, c, 1.0 / np.sqrt(IMAGE_CHANNELS)),
            "b_in": rng.normal(0.0, APPEARANCE_BIAS_STD, c),
        }
        pose_temporal, lora, denoiser_temporal = {}, {}, {}
        base = {"w_time": mat(c, c, TIME_PROJ_SCALE * unit)}
        for k in range(blocks):
            pose_branch[f"w_out.{k}"] = mat(c, c, 0.5 * unit)
            pose_branch[f"b_out.{k}"] = rng.normal(0.0, POSE_BIAS_STD, c)

            weights = AttentionWeights.random(rng, c, head_count)
            pose_temporal.update({f"wq.{k}": weights.wq, f"wk.{k}": weights.wk, f"wv.{k}": weights.wv})
            pose_temporal[f"wo.{k}"] = np.zeros((c, c))

            appearance[f"w_out.{k}"] = mat(c, c, unit)
            appearance[f"b_out.{k}"] = rng.normal(0.0, APPEARANCE_BIAS_STD, c)
            appearance[f"scale.{k}"] = np.zeros(c)

            delta = LoraDelta.initial(rng, c, rank)
            for name in ("b_q", "b_k", "b_v", "a_q", "a_k", "a_v"):
                lora[f"{name}.{k}"] = getattr(delta, name)

            weights = AttentionWeights.random(rng, c, head_count)
            base.update({f"wq.{k}": weights.wq, f"wk.{k}": weights.wk, f"wv.{k}": weights.wv})
            base[f"wo.{k}"] = mat(c, c, unit)
            base[f"ff_w1.{k}"] = mat(c, 2 * c, unit)
            base[f"ff_b1.{k}"] = np.zeros(2 * c)
            base[f"ff_w2.{k}"] = mat(2 * c, c, FF_OUT_SCALE / np.sqrt(2 * c))
            base[f"ff_b2.{k}"] = np.zeros(c)

            # Temporal layers enter at stage 2 with a live output projection.
            weights = AttentionWeights.random(rng, c, head_count)
            denoiser_temporal.update({f"wq.{k}": weights.wq, f"wk.{k}": weights.wk, f"wv.{k}": weights.wv})
            denoiser_temporal[f"wo.{k}"] = mat(c, c, unit)

        base["w_out"] = np.eye(c) + mat(c, c, OUTPUT_NOISE_STD * unit)
        base["b_out"] = rng.normal(0.0, OUTPUT_BIAS_STD, c)

        groups = {
            "pose_branch": pose_branch,
            "pose_temporal": pose_temporal,
            "appearance_encoder": appearance,
            "lora": lora,
            "denoiser_base": base,
            "denoiser_temporal": denoiser_temporal,
        }
        logger.debug(f"Initialised denoiser with c={c}, rank={rank}, heads={head_count}, blocks={blocks}")
        return cls({name: ParamGroup(name, groups[name]) for name in GROUP_NAMES}, head_count, stage=0)
