import logging
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import distance_transform_edt

from poseflux.src.config.settings import DEFAULT_TAU
from poseflux.src.models.maps import BinaryMask, DistanceMap, TemperatureMap
from poseflux.src.models.pose import BODY18, PoseSequence, RgbImage
from poseflux.src.services.rasterizer import rasterize_sequence
from poseflux.src.services.resampling import resize

logger = logging.getLogger("poseflux.temperature_map")


def presence_mask(images: Sequence[RgbImage]) -> BinaryMask:
    """Union over frames of the non-black pixels."""
    if not images:
        raise ValueError("presence_mask needs at least one image")
    shape = images[0].pixels.shape
    bits = np.zeros(shape[:2], dtype=bool)
    for i, image in enumerate(images):
        if image.pixels.shape != shape:
            raise ValueError(f"image {i} has shape {image.pixels.shape}, expected {shape}")
        bits |= image.pixels.any(axis=2)
    return BinaryMask(bits)


def distance_map(mask: BinaryMask) -> DistanceMap:
    height, width = mask.bits.shape
    if not mask.bits.any():
        # No pose anywhere in the window: treat the whole canvas as background.
        return DistanceMap(np.ones((height, width)))
    norm = np.sqrt((height / 2.0) ** 2 + (width / 2.0) ** 2)
    return DistanceMap(distance_transform_edt(~mask.bits) / norm)


def temperature_map(d: DistanceMap, tau: float = DEFAULT_TAU) -> TemperatureMap:
    if tau < 0:
        raise ValueError(f"tau must be non-negative, got {tau}")
    return TemperatureMap(tau * d.values + 1.0, tau=tau)


def resize_map(t: TemperatureMap, height: int, width: int) -> TemperatureMap:
    """Area-average where shrinking, bilinear where growing."""
    return TemperatureMap(resize(t.values, height, width), tau=t.tau)


def pose_temperature_map(images: Sequence[RgbImage], tau: float = DEFAULT_TAU) -> TemperatureMap:
    mask = presence_mask(images)
    logger.debug(f"Pose covers {int(mask.bits.sum())} of {mask.bits.size} pixels over {len(images)} frames")
    return temperature_map(distance_map(mask), tau)


def window_temperature_map(
    poses: PoseSequence,
    tau: float,
    height: int,
    width: int,
    stroke: Optional[int] = None,
) -> TemperatureMap:
    """Temperature map of one pose window, resized to a latent grid."""
    images = rasterize_sequence(poses, BODY18, stroke)
    return resize_map(pose_temperature_map(images, tau), height, width)
