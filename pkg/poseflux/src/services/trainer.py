import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from poseflux.src.models.errors import InputError, NumericalError
from poseflux.src.models.params import DenoiserParams
from poseflux.src.models.training import SyntheticSample, TrainConfig
from poseflux.src.services.denoiser import Denoiser, prepare_conditioning
from poseflux.src.services.diffusion import make_schedule, q_sample

logger = logging.getLogger("poseflux.trainer")


class Trainer:
    """Plain SGD on the trainable groups of one stage.

    Stage 1 trains the appearance encoder and LoRA on single frames with the
    temporal layers off; stage 2 trains only the temporal layers on f-frame
    windows. Everything else keeps its exact bytes.
    """

    def __init__(self, cfg: TrainConfig, samples: Sequence[SyntheticSample], stroke: Optional[int] = None):
        if not samples:
            raise InputError("training needs at least one sample")
        self.cfg = cfg
        self.samples = list(samples)
        self.schedule = make_schedule(cfg.steps_t, cfg.beta1, cfg.beta_t)
        for i, sample in enumerate(self.samples):
            c, frames, h, w = sample.target.shape
            if (c, h, w) != (cfg.channels, cfg.height, cfg.width):
                raise InputError(
                    f"sample {i} latent is {(c, h, w)}, config expects {(cfg.channels, cfg.height, cfg.width)}"
                )
            if frames < cfg.frames:
                raise InputError(f"sample {i} has {frames} frames, stage {cfg.stage} windows need {cfg.frames}")
        logger.info(f"Preparing conditioning for {len(self.samples)} samples")
        self.conditioning = [
            prepare_conditioning(s.poses, s.source, cfg.height, cfg.width, stroke) for s in self.samples
        ]

    def _batch(self, rng: np.random.Generator):
        cfg = self.cfg
        latents, poses, sources = [], [], []
        for index in rng.integers(0, len(self.samples), cfg.batch):
            target = self.samples[index].target
            start = int(rng.integers(0, target.shape[1] - cfg.frames + 1))
            pose_tokens, source_tokens = self.conditioning[index]
            latents.append(target[:, start : start + cfg.frames])
            poses.append(pose_tokens[0, start : start + cfg.frames])
            sources.append(source_tokens[0])
        t = rng.integers(1, self.schedule.steps + 1, cfg.batch)
        return np.stack(latents), t, np.stack(poses), np.stack(sources)

    def train(self, params: DenoiserParams) -> Tuple[DenoiserParams, List[float]]:
        cfg = self.cfg
        if cfg.stage == 2 and params.stage < 1:
            raise InputError("stage 2 needs parameters that have completed stage 1")
        params = params.copy().for_stage(cfg.stage)
        trainable = [name for name, group in params.groups.items() if not group.frozen]
        denoiser = Denoiser(params, temporal_on=cfg.stage == 2)
        rng = np.random.default_rng(cfg.seed)
        trace: List[float] = []

        logger.info(f"Training stage {cfg.stage} for {cfg.steps} steps on {', '.join(trainable)}")
        for step in tqdm(range(cfg.steps), desc=f"stage {cfg.stage}", disable=cfg.steps == 0, leave=False):
            x0, t, pose_tokens, source_tokens = self._batch(rng)
            eps = rng.standard_normal(x0.shape)
            z_t = q_sample(x0, t, eps, self.schedule)
            try:
                loss, grads = denoiser.loss_and_grads(z_t, t, eps, pose_tokens, source_tokens)
            except NumericalError as e:
                raise NumericalError(f"stage {cfg.stage} step {step}: {e}")
            for name in trainable:
                group = params[name]
                for key, value in group.tensors.items():
                    step_grad = grads[f"{name}/{key}"]
                    if not np.all(np.isfinite(step_grad)):
                        raise NumericalError(f"stage {cfg.stage} step {step}: gradient of {name}/{key} is not finite")
                    value -= cfg.learning_rate * step_grad
            trace.append(loss)
            logger.debug(f"step {step}: loss {loss:.6f}")

        if cfg.steps:
            params.stage = max(params.stage, cfg.stage)
            logger.info(f"Stage {cfg.stage} finished: loss {trace[0]:.4f} -> {trace[-1]:.4f}")
        return params, trace
