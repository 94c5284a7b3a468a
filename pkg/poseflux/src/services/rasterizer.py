import logging
from typing import List, Optional

import numpy as np

from poseflux.src.models.pose import BODY18, PoseFrame, PoseSequence, RgbImage, SkeletonTopology

logger = logging.getLogger("poseflux.rasterizer")


def default_stroke(width: int, height: int) -> int:
    return max(1, int(round(min(height, width) / 64)))


def segment_distance(xs: np.ndarray, ys: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from every pixel centre (xs, ys) to the segment a-b."""
    d = b - a
    length_sq = float(d @ d)
    if length_sq == 0.0:
        return np.hypot(xs - a[0], ys - a[1])
    t = ((xs - a[0]) * d[0] + (ys - a[1]) * d[1]) / length_sq
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(xs - (a[0] + t * d[0]), ys - (a[1] + t * d[1]))


def rasterize_pose(
    frame: PoseFrame,
    width: int,
    height: int,
    topology: SkeletonTopology = BODY18,
    stroke: Optional[int] = None,
) -> RgbImage:
    """Paint bones as constant-width segments, then keypoints as discs, on black."""
    if width < 1 or height < 1:
        raise ValueError(f"canvas must be at least 1x1, got {width}x{height}")
    stroke = default_stroke(width, height) if stroke is None else stroke
    if stroke < 1:
        raise ValueError(f"stroke must be >= 1, got {stroke}")

    pixels = np.zeros((height, width, 3), dtype=np.uint8)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    positions = frame.positions()
    present = frame.presence()

    for bone in topology.bones:
        parent, child = bone
        if not (present[parent] and present[child]):
            continue
        covered = segment_distance(xs, ys, positions[parent], positions[child]) <= stroke / 2.0
        pixels[covered] = topology.bone_color[bone]

    for index in np.flatnonzero(present):
        x, y = positions[index]
        covered = np.hypot(xs - x, ys - y) <= stroke
        pixels[covered] = topology.keypoint_color(int(index))

    return RgbImage(pixels)


def rasterize_sequence(
    seq: PoseSequence,
    topology: SkeletonTopology = BODY18,
    stroke: Optional[int] = None,
) -> List[RgbImage]:
    logger.debug(f"Rasterizing {len(seq)} frames at {seq.width}x{seq.height}")
    return [rasterize_pose(frame, seq.width, seq.height, topology, stroke) for frame in seq.frames]
