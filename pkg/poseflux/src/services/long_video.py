import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np

from poseflux.src.config.settings import DEFAULT_TAU, WORKERS
from poseflux.src.models.attention import LatentVideo
from poseflux.src.models.params import DenoiserParams
from poseflux.src.models.pose import PoseSequence, RgbImage
from poseflux.src.models.training import NoiseSchedule
from poseflux.src.models.windows import Window, WindowPlan
from poseflux.src.services.denoiser import Denoiser, prepare_conditioning
from poseflux.src.services.diffusion import ancestral_sample, seeded_noise
from poseflux.src.services.temperature_map import window_temperature_map

logger = logging.getLogger("poseflux.long_video")

# (window latent, (start, end)) -> window noise prediction
WindowPredictor = Callable[[LatentVideo, Window], LatentVideo]


def plan_windows(total: int, window: int, stride: int) -> WindowPlan:
    """Windows at 0, s, 2s, ... plus a final [F - f, F) when the regular ones fall short."""
    if not 1 <= window <= total:
        raise ValueError(f"window {window} must lie in [1, {total}]")
    if not 1 <= stride <= window:
        raise ValueError(f"stride {stride} must lie in [1, {window}]")
    windows = [(start, start + window) for start in range(0, total - window + 1, stride)]
    if windows[-1][1] < total:
        windows.append((total - window, total))
    return WindowPlan(total, window, stride, tuple(dict.fromkeys(windows)))


def fused_eps(
    z_t: LatentVideo,
    plan: WindowPlan,
    predictor: WindowPredictor,
    workers: int = WORKERS,
) -> LatentVideo:
    """Average each frame's noise prediction over the windows covering it."""
    if z_t.shape[2] != plan.total:
        raise ValueError(f"latent has {z_t.shape[2]} frames, plan covers {plan.total}")

    def run(window: Window) -> LatentVideo:
        start, end = window
        prediction = predictor(z_t[:, :, start:end], window)
        expected = z_t[:, :, start:end].shape
        if prediction.shape != expected:
            raise ValueError(f"window [{start}, {end}) prediction is {prediction.shape}, expected {expected}")
        return prediction

    if workers > 1 and len(plan.windows) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            predictions = list(executor.map(run, plan.windows))
    else:
        predictions = [run(window) for window in plan.windows]

    value = np.zeros_like(z_t)
    for (start, end), prediction in zip(plan.windows, predictions):
        value[:, :, start:end] += prediction
    count = plan.coverage.astype(np.float64).reshape(1, 1, -1, 1, 1)
    return value / count


def sample_long(
    params: DenoiserParams,
    source: RgbImage,
    poses: PoseSequence,
    sched: NoiseSchedule,
    plan: WindowPlan,
    tau: Optional[float] = DEFAULT_TAU,
    seed: int = 0,
    height: int = 8,
    width: int = 8,
    stroke: Optional[int] = None,
    pose_temporal_on: Optional[bool] = None,
    workers: int = WORKERS,
) -> LatentVideo:
    """Sample all F frames, fusing window predictions at every step.

    tau=None switches the temperature map off. Each window's map comes from
    that window's own poses.
    """
    if len(poses) != plan.total:
        raise ValueError(f"plan covers {plan.total} frames, poses have {len(poses)}")
    denoiser = Denoiser(params, pose_temporal_on=pose_temporal_on)
    pose_tokens, source_tokens = prepare_conditioning(poses, source, height, width, stroke)
    tmaps = {
        window: None
        if tau is None
        else window_temperature_map(poses.window(window[0], plan.window), tau, height, width, stroke)
        for window in plan.windows
    }
    logger.info(f"Sampling {plan.total} frames in {len(plan.windows)} windows of {plan.window}")

    def eps_fn(x: LatentVideo, t: int) -> LatentVideo:
        def predictor(z: LatentVideo, window: Window) -> LatentVideo:
            start, end = window
            return denoiser.eps_predict(z, t, pose_tokens[:, start:end], source_tokens, tmaps[window])

        return fused_eps(x, plan, predictor, workers)

    x_t, step_noise = seeded_noise(seed, (1, params.channels, plan.total, height, width))
    return ancestral_sample(eps_fn, sched, x_t, step_noise)
