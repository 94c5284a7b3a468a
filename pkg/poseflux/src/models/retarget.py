from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional

from poseflux.src.config.settings import DEFAULT_EPSILON_LEN
from poseflux.src.models.pose import Bone


class MissingPolicy(str, Enum):
    SKIP_SUBTREE = "skip_subtree"


@dataclass(frozen=True)
class RetargetConfig:
    epsilon_len: float = DEFAULT_EPSILON_LEN
    missing_policy: MissingPolicy = MissingPolicy.SKIP_SUBTREE

    def __post_init__(self):
        if not self.epsilon_len > 0:
            raise ValueError(f"epsilon_len must be positive, got {self.epsilon_len}")


@dataclass(frozen=True)
class BoneRatios:
    """Current-frame over initial-frame bone length; None marks an undefined ratio."""

    ratios: Dict[Bone, Optional[float]] = field(default_factory=dict)

    def defined(self, bone: Bone) -> bool:
        return self.ratios.get(bone) is not None

    def __getitem__(self, bone: Bone) -> Optional[float]:
        return self.ratios.get(bone)
