import logging
from typing import Callable, Optional, Tuple

import numpy as np

from poseflux.src.models.attention import LatentVideo
from poseflux.src.models.errors import NumericalError
from poseflux.src.models.maps import TemperatureMap
from poseflux.src.models.params import DenoiserParams
from poseflux.src.models.pose import PoseSequence, RgbImage
from poseflux.src.models.training import NoiseSchedule
from poseflux.src.services.denoiser import Denoiser, prepare_conditioning

logger = logging.getLogger("poseflux.diffusion")

EpsFn = Callable[[LatentVideo, int], LatentVideo]
NoiseFn = Callable[[int], LatentVideo]


def make_schedule(steps: int, beta1: float, beta_t: float) -> NoiseSchedule:
    """Linear betas from beta1 to beta_t over `steps` timesteps."""
    if steps < 1:
        raise ValueError(f"schedule needs at least one step, got {steps}")
    if not 0.0 < beta1 <= beta_t < 1.0:
        raise ValueError(f"betas must satisfy 0 < beta1 <= betaT < 1, got {beta1}, {beta_t}")
    betas = np.linspace(beta1, beta_t, steps)
    alphas = 1.0 - betas
    return NoiseSchedule(betas, alphas, np.cumprod(alphas))


def q_sample(x0: LatentVideo, t: int, eps: LatentVideo, sched: NoiseSchedule) -> LatentVideo:
    if x0.shape != eps.shape:
        raise ValueError(f"noise {eps.shape} does not match latent {x0.shape}")
    ab = np.asarray(sched.alpha_bars[np.asarray(t) - 1], dtype=np.float64)
    # one timestep per batch element broadcasts over the remaining axes
    ab = ab.reshape(ab.shape + (1,) * (x0.ndim - ab.ndim))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def seeded_noise(seed: int, shape: Tuple[int, ...]) -> Tuple[LatentVideo, NoiseFn]:
    """Initial latent and per-step noise, all drawn from one generator in step order."""
    rng = np.random.default_rng(seed)
    x_t = rng.standard_normal(shape)

    def step_noise(_t: int) -> LatentVideo:
        return rng.standard_normal(shape)

    return x_t, step_noise


def ancestral_sample(eps_fn: EpsFn, sched: NoiseSchedule, x_t: LatentVideo, step_noise: NoiseFn) -> LatentVideo:
    """DDPM ancestral loop from t = T down to 1 with posterior variance."""
    x = x_t
    for t in range(sched.steps, 0, -1):
        beta = sched.betas[t - 1]
        ab = sched.alpha_bars[t - 1]
        eps = eps_fn(x, t)
        mean = (x - beta / np.sqrt(1.0 - ab) * eps) / np.sqrt(sched.alphas[t - 1])
        if t > 1:
            variance = beta * (1.0 - sched.alpha_bars[t - 2]) / (1.0 - ab)
            x = mean + np.sqrt(variance) * step_noise(t)
        else:
            x = mean
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"sample became non-finite at timestep {t}")
    return x


def sample(
    params: DenoiserParams,
    source: RgbImage,
    poses: PoseSequence,
    sched: NoiseSchedule,
    tmap: Optional[TemperatureMap],
    seed: int,
    height: int,
    width: int,
    stroke: Optional[int] = None,
    pose_temporal_on: Optional[bool] = None,
) -> LatentVideo:
    """Denoise a seeded (1, c, f, h, w) latent conditioned on source and poses."""
    denoiser = Denoiser(params, pose_temporal_on=pose_temporal_on)
    pose_tokens, source_tokens = prepare_conditioning(poses, source, height, width, stroke)
    shape = (1, params.channels, len(poses), height, width)
    x_t, step_noise = seeded_noise(seed, shape)
    state = "on" if denoiser.temporal_on else "off"
    logger.info(f"Sampling {len(poses)} frames over {sched.steps} steps (temporal layers {state})")

    def eps_fn(x: LatentVideo, t: int) -> LatentVideo:
        return denoiser.eps_predict(x, t, pose_tokens, source_tokens, tmap)

    return ancestral_sample(eps_fn, sched, x_t, step_noise)
