from collections import deque
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Sequence, Tuple

import numpy as np

from poseflux.src.config.settings import NECK, NUM_KEYPOINTS

KEYPOINT_NAMES = (
    "nose",
    "neck",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_eye",
    "l_eye",
    "r_ear",
    "l_ear",
)

Bone = Tuple[int, int]
Color = Tuple[int, int, int]

# (parent, child) in the conventional OpenPose limb order; colours follow the
# same order.
BODY18_BONES: Tuple[Bone, ...] = (
    (1, 2),
    (1, 5),
    (2, 3),
    (3, 4),
    (5, 6),
    (6, 7),
    (1, 8),
    (8, 9),
    (9, 10),
    (1, 11),
    (11, 12),
    (12, 13),
    (1, 0),
    (0, 14),
    (14, 16),
    (0, 15),
    (15, 17),
)

BODY18_PALETTE: Tuple[Color, ...] = (
    (255, 0, 0),
    (255, 85, 0),
    (255, 170, 0),
    (255, 255, 0),
    (170, 255, 0),
    (85, 255, 0),
    (0, 255, 0),
    (0, 255, 85),
    (0, 255, 170),
    (0, 255, 255),
    (0, 170, 255),
    (0, 85, 255),
    (0, 0, 255),
    (85, 0, 255),
    (170, 0, 255),
    (255, 0, 255),
    (255, 0, 170),
)


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    confidence: float

    @property
    def present(self) -> bool:
        return self.confidence > 0.0

    def to_list(self) -> List[float]:
        return [self.x, self.y, self.confidence]


MISSING = Keypoint(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class PoseFrame:
    keypoints: Tuple[Keypoint, ...]

    def __post_init__(self):
        if len(self.keypoints) != NUM_KEYPOINTS:
            raise ValueError(
                f"a pose frame needs {NUM_KEYPOINTS} keypoints, got {len(self.keypoints)}"
            )

    @classmethod
    def from_array(cls, values: np.ndarray) -> "PoseFrame":
        """Build a frame from an (18, 3) array of x, y, confidence rows."""
        return cls(tuple(Keypoint(float(x), float(y), float(c)) for x, y, c in values))

    @classmethod
    def missing(cls) -> "PoseFrame":
        return cls((MISSING,) * NUM_KEYPOINTS)

    def positions(self) -> np.ndarray:
        return np.array([[kp.x, kp.y] for kp in self.keypoints], dtype=np.float64)

    def presence(self) -> np.ndarray:
        return np.array([kp.present for kp in self.keypoints], dtype=bool)

    def to_dict(self) -> Dict:
        return {"keypoints": [kp.to_list() for kp in self.keypoints]}


@dataclass(frozen=True)
class PoseSequence:
    width: int
    height: int
    frames: Tuple[PoseFrame, ...]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"canvas must be at least 1x1, got {self.width}x{self.height}")
        if not self.frames:
            raise ValueError("a pose sequence needs at least one frame")

    def __len__(self) -> int:
        return len(self.frames)

    def window(self, start: int, length: int) -> "PoseSequence":
        return PoseSequence(self.width, self.height, self.frames[start : start + length])

    def to_dict(self) -> Dict:
        return {
            "width": self.width,
            "height": self.height,
            "frames": [frame.to_dict() for frame in self.frames],
        }


@dataclass(frozen=True)
class SkeletonTopology:
    parent: Dict[int, int]
    bones: Tuple[Bone, ...]
    bone_color: Dict[Bone, Color]
    subtree: Dict[int, FrozenSet[int]] = field(default_factory=dict)
    root: int = NECK

    @classmethod
    def from_bones(
        cls, bones: Sequence[Bone], colors: Sequence[Color], root: int = NECK
    ) -> "SkeletonTopology":
        parent = {child: par for par, child in bones}
        children: Dict[int, List[int]] = {}
        for par, child in bones:
            children.setdefault(par, []).append(child)

        subtree: Dict[int, FrozenSet[int]] = {}

        def collect(node: int) -> FrozenSet[int]:
            below = set()
            for child in children.get(node, []):
                below.add(child)
                below |= collect(child)
            subtree[node] = frozenset(below)
            return subtree[node]

        collect(root)
        if len(subtree) != NUM_KEYPOINTS:
            raise ValueError("bones must form a tree covering every keypoint")
        for color in colors:
            if tuple(color) == (0, 0, 0):
                raise ValueError("bone colours must be non-black")
        return cls(
            parent=parent,
            bones=tuple(bones),
            bone_color={bone: tuple(color) for bone, color in zip(bones, colors)},
            subtree=subtree,
            root=root,
        )

    def children(self, node: int) -> List[int]:
        return [child for par, child in self.bones if par == node]

    def bfs_bones(self) -> List[Bone]:
        """Bones in breadth-first order from the root."""
        order: List[Bone] = []
        queue = deque([self.root])
        while queue:
            node = queue.popleft()
            for child in self.children(node):
                order.append((node, child))
                queue.append(child)
        return order

    def keypoint_color(self, index: int) -> Color:
        if index in self.parent:
            return self.bone_color[(self.parent[index], index)]
        return self.bone_color[next(b for b in self.bones if b[0] == index)]


BODY18 = SkeletonTopology.from_bones(BODY18_BONES, BODY18_PALETTE)


@dataclass(frozen=True, eq=False)
class RgbImage:
    """Row-major H x W x 3 image with 8-bit channels."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected an (H, W, 3) array, got {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            object.__setattr__(self, "pixels", self.pixels.astype(np.uint8))

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @classmethod
    def black(cls, width: int, height: int) -> "RgbImage":
        return cls(np.zeros((height, width, 3), dtype=np.uint8))

    def __eq__(self, other) -> bool:
        return isinstance(other, RgbImage) and np.array_equal(self.pixels, other.pixels)
