import json

import numpy as np
import pytest

from poseflux.src.models.params import DenoiserParams
from poseflux.src.models.pose import PoseFrame, PoseSequence
from poseflux.src.services.dataset import TEMPLATE_POSE


def frame_from_points(points, confidence=1.0) -> PoseFrame:
    points = np.asarray(points, dtype=np.float64)
    conf = np.full((len(points), 1), confidence)
    return PoseFrame.from_array(np.concatenate([points, conf], axis=1))


@pytest.fixture
def standing_frame() -> PoseFrame:
    return frame_from_points(TEMPLATE_POSE)


@pytest.fixture
def walking_sequence() -> PoseSequence:
    """Four frames of the standing figure sliding right with a swinging wrist."""
    frames = []
    for j in range(4):
        points = TEMPLATE_POSE + np.array([2.0 * j, 0.0])
        points[4, 1] += 3.0 * np.sin(j)
        frames.append(frame_from_points(points))
    return PoseSequence(64, 64, tuple(frames))


@pytest.fixture
def pose_file(tmp_path, walking_sequence):
    path = tmp_path / "walk.json"
    path.write_text(json.dumps(walking_sequence.to_dict()))
    return path


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_params(rng) -> DenoiserParams:
    """c=4, two heads, rank 2."""
    return DenoiserParams.initial(rng, channels=4, rank=2, head_count=2)


def randomize(params: DenoiserParams, rng: np.random.Generator, scale: float = 0.3) -> DenoiserParams:
    """Fill the zero-initialised tensors so every gradient path is live."""
    params = params.copy()
    for _, value in params.items():
        if not value.any():
            value[...] = rng.normal(0.0, scale, value.shape)
    return params
