import json

import pytest

from poseflux.src.models.errors import PoseFormatError
from poseflux.src.models.pose import PoseFrame
from poseflux.src.services.pose_io import (
    load_pose_sequence,
    parse_pose_sequence,
    save_pose_sequence,
    serialize_pose_sequence,
)


def _doc(frames, width=16, height=16):
    return json.dumps({"width": width, "height": height, "frames": frames})


def _frame(rows=None):
    return {"keypoints": rows if rows is not None else [[0.0, 0.0, 0.0]] * 18}


def test_all_missing_frame():
    seq = parse_pose_sequence(_doc([_frame()]))
    assert len(seq) == 1
    assert seq.frames[0] == PoseFrame.missing()
    assert not seq.frames[0].presence().any()


def test_round_trip_is_identity(walking_sequence):
    text = serialize_pose_sequence(walking_sequence)
    parsed = parse_pose_sequence(text)
    assert parsed == walking_sequence
    assert serialize_pose_sequence(parsed) == text


def test_short_frame_names_frame_index():
    doc = _doc([_frame(), _frame([[1.0, 1.0, 1.0]] * 17)])
    with pytest.raises(PoseFormatError, match="frame 1") as info:
        parse_pose_sequence(doc)
    assert info.value.frame == 1


def test_confidence_out_of_range_names_keypoint():
    rows = [[1.0, 1.0, 1.0]] * 18
    rows[5] = [1.0, 1.0, 1.5]
    with pytest.raises(PoseFormatError, match="frame 0, keypoint 5"):
        parse_pose_sequence(_doc([_frame(rows)]))


@pytest.mark.parametrize("width,height", [(0, 16), (16, -3)])
def test_non_positive_dimensions(width, height):
    with pytest.raises(PoseFormatError):
        parse_pose_sequence(_doc([_frame()], width, height))


@pytest.mark.parametrize("text", ["{not json", "[]", json.dumps({"width": 4, "height": 4, "frames": []})])
def test_malformed_documents(text):
    with pytest.raises(PoseFormatError):
        parse_pose_sequence(text)


def test_save_and_load(tmp_path, walking_sequence):
    path = tmp_path / "out" / "poses.json"
    save_pose_sequence(str(path), walking_sequence)
    assert load_pose_sequence(str(path)) == walking_sequence
    assert not [p for p in path.parent.iterdir() if p.name.startswith(".tmp-")]
