import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Optional

import numpy as np

from poseflux.src.config.settings import WORKERS
from poseflux.src.models.errors import RetargetError
from poseflux.src.models.pose import BODY18, Bone, PoseFrame, PoseSequence, SkeletonTopology
from poseflux.src.models.retarget import BoneRatios, RetargetConfig

logger = logging.getLogger("poseflux.retargeter")


def bone_lengths(frame: PoseFrame, topology: SkeletonTopology = BODY18) -> Dict[Bone, float]:
    """Euclidean length of every bone whose endpoints are both present."""
    positions = frame.positions()
    present = frame.presence()
    return {
        (p, c): float(np.hypot(*(positions[c] - positions[p])))
        for p, c in topology.bones
        if present[p] and present[c]
    }


def bone_ratios(
    cur: PoseFrame,
    init: PoseFrame,
    topology: SkeletonTopology = BODY18,
    cfg: Optional[RetargetConfig] = None,
) -> BoneRatios:
    cfg = cfg or RetargetConfig()
    cur_len = bone_lengths(cur, topology)
    init_len = bone_lengths(init, topology)
    ratios = {}
    for bone in topology.bones:
        a, b = cur_len.get(bone), init_len.get(bone)
        if a is None or b is None or a < cfg.epsilon_len or b < cfg.epsilon_len:
            ratios[bone] = None
        else:
            ratios[bone] = a / b
    return BoneRatios(ratios)


def retarget_frame(
    cur: PoseFrame,
    init: PoseFrame,
    src: PoseFrame,
    topology: SkeletonTopology = BODY18,
    cfg: Optional[RetargetConfig] = None,
) -> PoseFrame:
    """Give cur the source bone proportions, scaled by cur's own foreshortening.

    Bones are visited breadth-first from the neck, which stays fixed. Each
    measurable bone gets length srcLen * curLen / initLen along cur's direction,
    and the child's present descendants move with it.
    """
    cfg = cfg or RetargetConfig()
    if not cur.keypoints[topology.root].present:
        raise RetargetError("unretargetable frame: neck keypoint is missing")

    cur_pos = cur.positions()
    present = cur.presence()
    out = cur_pos.copy()
    ratios = bone_ratios(cur, init, topology, cfg)
    src_len = bone_lengths(src, topology)

    skipped = 0
    for bone in topology.bfs_bones():
        parent, child = bone
        length = src_len.get(bone)
        if not ratios.defined(bone) or length is None or length < cfg.epsilon_len:
            skipped += 1
            continue
        delta = cur_pos[child] - cur_pos[parent]
        cur_length = float(np.hypot(*delta))
        target = length * ratios[bone]
        shift = delta * (target / cur_length - 1.0)
        moved = [child] + [k for k in topology.subtree[child] if present[k]]
        out[moved] += shift

    if skipped:
        logger.debug(f"Left {skipped} unmeasurable bones at their driving positions")

    return PoseFrame.from_array(
        np.column_stack([out, [kp.confidence for kp in cur.keypoints]])
    )


def retarget_sequence(
    driving: PoseSequence,
    src: PoseFrame,
    topology: SkeletonTopology = BODY18,
    cfg: Optional[RetargetConfig] = None,
    max_workers: int = WORKERS,
) -> PoseSequence:
    """Re-target every driving frame against frame 0 and the source pose."""
    cfg = cfg or RetargetConfig()
    init = driving.frames[0]

    def work(item):
        index, frame = item
        try:
            return retarget_frame(frame, init, src, topology, cfg)
        except RetargetError as e:
            raise RetargetError(str(e), frame=index) from e

    logger.info(f"Re-targeting {len(driving)} frames with {max_workers} workers")
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as executor:
        frames = list(executor.map(work, enumerate(driving.frames)))

    return PoseSequence(driving.width, driving.height, tuple(frames))
