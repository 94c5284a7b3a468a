import json
import logging
import math

from poseflux.src.config.settings import NUM_KEYPOINTS
from poseflux.src.models.errors import PoseFormatError
from poseflux.src.models.pose import Keypoint, PoseFrame, PoseSequence
from poseflux.src.services.artifacts import atomic_write_text

logger = logging.getLogger("poseflux.pose_io")


def _number(value, frame: int, keypoint: int, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise PoseFormatError(f"{what} must be a number, got {value!r}", frame, keypoint)
    value = float(value)
    if not math.isfinite(value):
        raise PoseFormatError(f"{what} must be finite", frame, keypoint)
    return value


def _parse_frame(raw, index: int) -> PoseFrame:
    if not isinstance(raw, dict) or "keypoints" not in raw:
        raise PoseFormatError("frame must be an object with a 'keypoints' array", index)
    rows = raw["keypoints"]
    if not isinstance(rows, list):
        raise PoseFormatError("'keypoints' must be an array", index)
    if len(rows) != NUM_KEYPOINTS:
        raise PoseFormatError(f"expected {NUM_KEYPOINTS} keypoints, found {len(rows)}", index)

    keypoints = []
    for k, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != 3:
            raise PoseFormatError("keypoint must be an [x, y, confidence] triple", index, k)
        x = _number(row[0], index, k, "x")
        y = _number(row[1], index, k, "y")
        confidence = _number(row[2], index, k, "confidence")
        if not 0.0 <= confidence <= 1.0:
            raise PoseFormatError(f"confidence {confidence} outside [0, 1]", index, k)
        keypoints.append(Keypoint(x, y, confidence))
    return PoseFrame(tuple(keypoints))


def parse_pose_sequence(text: str) -> PoseSequence:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise PoseFormatError(f"malformed document: {e}") from e
    if not isinstance(doc, dict):
        raise PoseFormatError("document must be an object with width, height and frames")

    for key in ("width", "height"):
        value = doc.get(key)
        if isinstance(value, bool) or not isinstance(value, int):
            raise PoseFormatError(f"'{key}' must be an integer")
        if value < 1:
            raise PoseFormatError(f"'{key}' must be positive, got {value}")

    frames = doc.get("frames")
    if not isinstance(frames, list) or not frames:
        raise PoseFormatError("'frames' must be a non-empty array")

    parsed = tuple(_parse_frame(raw, i) for i, raw in enumerate(frames))
    return PoseSequence(doc["width"], doc["height"], parsed)


def serialize_pose_sequence(seq: PoseSequence) -> str:
    return json.dumps(seq.to_dict(), sort_keys=True) + "\n"


def load_pose_sequence(path: str) -> PoseSequence:
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    seq = parse_pose_sequence(text)
    logger.info(f"Loaded {len(seq)} pose frames ({seq.width}x{seq.height}) from {path}")
    return seq


def save_pose_sequence(path: str, seq: PoseSequence) -> None:
    atomic_write_text(path, serialize_pose_sequence(seq))
    logger.info(f"Saved {len(seq)} pose frames to {path}")
