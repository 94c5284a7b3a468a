import io
import logging
import os
import tempfile
from typing import Tuple

import numpy as np
from PIL import Image

from poseflux.src.config.settings import TMAP_MAGIC
from poseflux.src.models.errors import InputError, MapFormatError
from poseflux.src.models.pose import RgbImage

logger = logging.getLogger("poseflux.artifacts")

_TMAP_HEADER = np.dtype("<u4")


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write to a temporary sibling file, then rename over the target."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    logger.debug(f"Wrote {len(data)} bytes to {path}")


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_ppm(image: RgbImage) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(image.pixels).save(buffer, format="PPM")
    return buffer.getvalue()


def write_ppm(path: str, image: RgbImage) -> None:
    atomic_write_bytes(path, encode_ppm(image))


def read_ppm(path: str) -> RgbImage:
    try:
        with Image.open(path) as img:
            return RgbImage(np.asarray(img.convert("RGB"), dtype=np.uint8).copy())
    except (OSError, ValueError) as e:
        raise InputError(f"{path}: not a readable image ({e})") from e


def write_pgm8(path: str, values: np.ndarray) -> None:
    """Write an array in [0, 1] as an 8-bit greyscale PGM."""
    grey = np.clip(np.rint(values * 255.0), 0, 255).astype(np.uint8)
    buffer = io.BytesIO()
    Image.fromarray(grey).save(buffer, format="PPM")
    atomic_write_bytes(path, buffer.getvalue())


def write_pgm16(path: str, values: np.ndarray) -> None:
    """Write an array in [0, 1] as a 16-bit greyscale PGM (maxval 65535)."""
    # mode "I" is the 32-bit mode Pillow writes as 16-bit P5
    grey = np.clip(np.rint(values * 65535.0), 0, 65535).astype(np.int32)
    buffer = io.BytesIO()
    Image.fromarray(grey).save(buffer, format="PPM")
    atomic_write_bytes(path, buffer.getvalue())


def encode_tmap(values: np.ndarray) -> bytes:
    height, width = values.shape
    header = TMAP_MAGIC + np.array([height, width, 0], dtype=_TMAP_HEADER).tobytes()
    return header + np.ascontiguousarray(values, dtype="<f8").tobytes()


def decode_tmap(data: bytes) -> np.ndarray:
    if len(data) < 16 or data[:4] != TMAP_MAGIC:
        raise MapFormatError("missing TMAP header")
    height, width, _ = np.frombuffer(data[4:16], dtype=_TMAP_HEADER)
    expected = 16 + int(height) * int(width) * 8
    if len(data) != expected:
        raise MapFormatError(f"TMAP payload has {len(data)} bytes, expected {expected}")
    return np.frombuffer(data[16:], dtype="<f8").reshape(int(height), int(width)).astype(np.float64)


def write_tmap(path: str, values: np.ndarray) -> None:
    atomic_write_bytes(path, encode_tmap(values))


def read_tmap(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_tmap(f.read())


def write_tmap_preview(path: str, values: np.ndarray, tau: float) -> None:
    """Map temperatures [1, 2*tau + 1] linearly onto the 16-bit grey range."""
    span = 2.0 * tau
    scaled = np.zeros_like(values) if span == 0 else (values - 1.0) / span
    write_pgm16(path, scaled)


def image_shape(path: str) -> Tuple[int, int]:
    with Image.open(path) as img:
        return img.height, img.width
