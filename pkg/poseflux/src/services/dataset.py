"""Synthetic blob videos standing in for real training footage.

Each sample is a standing BODY-18 figure with a random scale and offset that
sways sinusoidally. The target frames are two Gaussian blobs (red on the neck,
green on the nose); the source image is the first target frame.
"""

import io
import logging
import os
from typing import List, Optional

import numpy as np
from einops import rearrange

from poseflux.src.config.settings import (
    CANVAS_SIZE,
    CODEC_SEED,
    DATASET_FRAMES,
    DEFAULT_CHANNELS,
    DEFAULT_LATENT_SIZE,
    LATENT_SCALE,
    NECK,
    NECK_BLOB_SIGMA,
    NOSE,
    NOSE_BLOB_SIGMA,
)
from poseflux.src.models.errors import InputError
from poseflux.src.models.pose import PoseFrame, PoseSequence, RgbImage
from poseflux.src.models.training import SyntheticSample
from poseflux.src.services.artifacts import atomic_write_bytes, read_ppm, write_ppm
from poseflux.src.services.pose_io import load_pose_sequence, save_pose_sequence
from poseflux.src.services.resampling import resize

logger = logging.getLogger("poseflux.dataset")

# Standing figure on a 64x64 canvas, BODY-18 order.
TEMPLATE_POSE = np.array(
    [
        (32, 12), (32, 20), (26, 20), (24, 28), (23, 35), (38, 20), (40, 28), (41, 35), (29, 36),
        (29, 46), (29, 56), (35, 36), (35, 46), (35, 56), (31, 11), (33, 11), (30, 12), (34, 12),
    ],
    dtype=np.float64,
)
TEMPLATE_CENTRE = np.array([32.0, 34.0])
WRISTS = (4, 7)


class LatentCodec:
    """Fixed linear map between RGB in [0, 1] and c latent channels; decode is the pseudo-inverse."""

    def __init__(self, encoder: np.ndarray):
        if encoder.ndim != 2 or encoder.shape[0] != 3:
            raise ValueError(f"encoder must be 3 x c, got {encoder.shape}")
        self.encoder = encoder
        self.decoder = np.linalg.pinv(encoder)

    @classmethod
    def seeded(cls, channels: int, seed: int = CODEC_SEED, scale: float = LATENT_SCALE) -> "LatentCodec":
        rng = np.random.default_rng(seed)
        return cls(scale * rng.normal(0.0, 1.0 / np.sqrt(3.0), (3, channels)))

    @property
    def channels(self) -> int:
        return int(self.encoder.shape[1])

    def encode(self, rgb: np.ndarray) -> np.ndarray:
        return rgb @ self.encoder

    def decode(self, latent: np.ndarray) -> np.ndarray:
        return latent @ self.decoder

    def encode_frames(self, frames: List[RgbImage], height: int, width: int) -> np.ndarray:
        """(c, f, h, w) latent of RGB frames area-resized to the latent grid."""
        grids = [resize(frame.pixels.astype(np.float64) / 255.0, height, width) for frame in frames]
        return rearrange(self.encode(np.stack(grids)), "f h w c -> c f h w")

    def decode_frames(self, latent: np.ndarray, height: int, width: int) -> List[RgbImage]:
        """RGB frames of a (c, f, h, w) latent, bilinearly resized to height x width."""
        rgb = self.decode(rearrange(latent, "c f h w -> f h w c"))
        frames = []
        for grid in rgb:
            values = np.clip(resize(grid, height, width), 0.0, 1.0)
            frames.append(RgbImage(np.round(values * 255.0).astype(np.uint8)))
        return frames


def blob_image(frame: PoseFrame, width: int, height: int) -> RgbImage:
    """Gaussian blobs at the neck (red) and nose (green) on black."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    pixels = np.zeros((height, width, 3))
    for channel, index, sigma in ((0, NECK, NECK_BLOB_SIGMA), (1, NOSE, NOSE_BLOB_SIGMA)):
        keypoint = frame.keypoints[index]
        if keypoint.present:
            d2 = (xs - keypoint.x) ** 2 + (ys - keypoint.y) ** 2
            pixels[..., channel] = np.exp(-d2 / (2.0 * sigma * sigma))
    return RgbImage(np.round(pixels * 255.0).astype(np.uint8))


def _trajectory(rng: np.random.Generator, frames: int, canvas: int) -> PoseSequence:
    factor = canvas / CANVAS_SIZE
    scale = rng.uniform(0.7, 1.0)
    offset = rng.uniform(-6.0, 6.0, 2)
    amplitude = rng.uniform(1.0, 3.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    speed = rng.uniform(0.5, 1.5) * 2.0 * np.pi / max(frames, 2)
    swing = rng.uniform(1.0, 4.0)

    sequence = []
    for j in range(frames):
        angle = speed * j + phase
        points = TEMPLATE_CENTRE + scale * (TEMPLATE_POSE - TEMPLATE_CENTRE) + offset
        points = points + np.array([amplitude * np.sin(angle), 0.5 * amplitude * np.cos(angle)])
        for wrist, sign in zip(WRISTS, (-1.0, 1.0)):
            points[wrist, 1] += sign * swing * np.sin(angle)
        values = np.concatenate([points * factor, np.ones((len(points), 1))], axis=1)
        sequence.append(PoseFrame.from_array(values))
    return PoseSequence(canvas, canvas, tuple(sequence))


def make_synthetic_dataset(
    n: int,
    seed: int,
    channels: int = DEFAULT_CHANNELS,
    height: int = DEFAULT_LATENT_SIZE,
    width: int = DEFAULT_LATENT_SIZE,
    frames: int = DATASET_FRAMES,
    canvas: int = CANVAS_SIZE,
    codec: Optional[LatentCodec] = None,
) -> List[SyntheticSample]:
    if n < 1:
        raise ValueError(f"dataset needs at least one sample, got {n}")
    codec = codec or LatentCodec.seeded(channels)
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        poses = _trajectory(rng, frames, canvas)
        renders = tuple(blob_image(frame, canvas, canvas) for frame in poses.frames)
        samples.append(SyntheticSample(renders[0], poses, renders, codec.encode_frames(list(renders), height, width)))
    logger.info(f"Generated {n} synthetic samples of {frames} frames (seed {seed})")
    return samples


def save_dataset(directory: str, samples: List[SyntheticSample]) -> None:
    os.makedirs(directory, exist_ok=True)
    for i, sample in enumerate(samples):
        folder = os.path.join(directory, f"sample_{i:04d}")
        os.makedirs(folder, exist_ok=True)
        save_pose_sequence(os.path.join(folder, "poses.json"), sample.poses)
        write_ppm(os.path.join(folder, "source.ppm"), sample.source)
        for j, frame in enumerate(sample.frames):
            write_ppm(os.path.join(folder, f"target_{j:04d}.ppm"), frame)
        buffer = _npy_bytes(sample.target)
        atomic_write_bytes(os.path.join(folder, "latent.npy"), buffer)
    logger.info(f"Saved {len(samples)} samples to {directory}")


def _npy_bytes(values: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    np.save(buffer, values.astype("<f8"), allow_pickle=False)
    return buffer.getvalue()


def load_dataset(directory: str) -> List[SyntheticSample]:
    if not os.path.isdir(directory):
        raise InputError(f"{directory}: dataset directory not found")
    folders = sorted(name for name in os.listdir(directory) if name.startswith("sample_"))
    if not folders:
        raise InputError(f"{directory}: no samples found")
    samples = []
    for name in folders:
        folder = os.path.join(directory, name)
        poses = load_pose_sequence(os.path.join(folder, "poses.json"))
        frames = tuple(read_ppm(os.path.join(folder, f"target_{j:04d}.ppm")) for j in range(len(poses)))
        try:
            target = np.load(os.path.join(folder, "latent.npy"), allow_pickle=False)
        except (OSError, ValueError) as e:
            raise InputError(f"{folder}/latent.npy: {e}")
        try:
            samples.append(SyntheticSample(read_ppm(os.path.join(folder, "source.ppm")), poses, frames, target))
        except ValueError as e:
            raise InputError(f"{folder}: {e}")
    logger.info(f"Loaded {len(samples)} samples from {directory}")
    return samples
