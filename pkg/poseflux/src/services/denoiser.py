"""The toy conditional denoiser: pose branch, appearance encoder and K attention blocks.

Latents are (b, c, f, h, w); inside the blocks they travel as (b, f, n, c) token
grids with n = h * w. Spatial attention over z is blended per channel with
attention over z joined by the appearance tokens; the blend weight is the
appearance encoder's scale, zero for fresh parameters.

Forward passes keep what the backward pass needs in a ForwardTrace, and
`loss_and_grads` returns gradients for every parameter, frozen groups
included, keyed "group/tensor".
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from einops import rearrange, repeat

from poseflux.src.models.attention import LatentVideo
from poseflux.src.models.errors import NumericalError
from poseflux.src.models.maps import TemperatureMap
from poseflux.src.models.params import DenoiserParams
from poseflux.src.models.pose import BODY18, PoseSequence, RgbImage
from poseflux.src.services.attention import (
    AttentionCache,
    attend,
    attend_backward,
    effective_weights,
    temporal_attention_backward,
    temporal_attention_forward,
)
from poseflux.src.services.rasterizer import rasterize_sequence
from poseflux.src.services.resampling import resize

logger = logging.getLogger("poseflux.denoiser")

Timesteps = Union[int, np.ndarray]


def timestep_embedding(t: np.ndarray, channels: int) -> np.ndarray:
    """Sinusoidal embedding, sines in the first half of the channels and cosines in the second."""
    half = channels // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def image_tokens(image: RgbImage, height: int, width: int) -> np.ndarray:
    """(h*w, 3) tokens of an image scaled to [0, 1] and area-resized to the latent grid."""
    grid = resize(image.pixels.astype(np.float64) / 255.0, height, width)
    return rearrange(grid, "h w c -> (h w) c")


def prepare_conditioning(
    poses: PoseSequence,
    source: RgbImage,
    height: int,
    width: int,
    stroke: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Pose tokens (1, f, n, 3) and source tokens (1, n, 3) on an (h, w) latent grid."""
    frames = rasterize_sequence(poses, BODY18, stroke)
    pose_tokens = np.stack([image_tokens(image, height, width) for image in frames])
    return pose_tokens[None], image_tokens(source, height, width)[None]


def _tanh_grad(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * (1.0 - y * y)


def _outer_sum(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Sum over every leading axis of x^T dy."""
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def _bias_sum(dy: np.ndarray) -> np.ndarray:
    return dy.reshape(-1, dy.shape[-1]).sum(axis=0)


@dataclass
class PoseTrace:
    tokens: np.ndarray
    hidden: np.ndarray
    base: List[np.ndarray] = field(default_factory=list)
    temporal_out: List[Optional[np.ndarray]] = field(default_factory=list)
    temporal_cache: List[Optional[AttentionCache]] = field(default_factory=list)
    residuals: List[np.ndarray] = field(default_factory=list)


@dataclass
class AppearanceTrace:
    tokens: np.ndarray
    hidden: np.ndarray
    features: List[np.ndarray] = field(default_factory=list)


@dataclass
class BlockTrace:
    self_cache: AttentionCache
    joint_cache: AttentionCache
    self_out: np.ndarray
    joint_out: np.ndarray
    spatial_out: np.ndarray
    temporal_in: Optional[LatentVideo]
    temporal_out: Optional[np.ndarray]
    temporal_cache: Optional[AttentionCache]
    pre_ff: np.ndarray
    ff_hidden: np.ndarray


@dataclass
class ForwardTrace:
    shape: Tuple[int, ...]
    embedding: np.ndarray
    pose: PoseTrace
    appearance: AppearanceTrace
    blocks: List[BlockTrace]
    final_hidden: np.ndarray
    output: LatentVideo


class Denoiser:
    """Noise predictor over one parameter set.

    temporal_on switches the denoiser's temporal layers; pose_temporal_on the
    pose branch's (it follows temporal_on unless given). Both default to on
    only for parameters that have completed stage 2.
    """

    def __init__(
        self,
        params: DenoiserParams,
        temporal_on: Optional[bool] = None,
        pose_temporal_on: Optional[bool] = None,
    ):
        self.params = params
        self.temporal_on = params.stage >= 2 if temporal_on is None else temporal_on
        self.pose_temporal_on = self.temporal_on if pose_temporal_on is None else pose_temporal_on

    def pose_encode(self, pose_tokens: np.ndarray, height: int, width: int) -> PoseTrace:
        """One residual (b, f, n, c) per block from (b, f, n, 3) pose tokens."""
        p = self.params["pose_branch"]
        if pose_tokens.ndim != 4 or pose_tokens.shape[2] != height * width:
            raise ValueError(f"pose tokens {pose_tokens.shape} do not fit a {height}x{width} grid")
        hidden = np.tanh(pose_tokens @ p["w_in"] + p["b_in"])
        trace = PoseTrace(pose_tokens, hidden)
        for k in range(self.params.blocks):
            base = hidden @ p[f"w_out.{k}"] + p[f"b_out.{k}"]
            trace.base.append(base)
            if self.pose_temporal_on:
                z = rearrange(base, "b f (h w) c -> b c f h w", h=height, w=width)
                tm, cache = temporal_attention_forward(z, self.params.attention("pose_temporal", k))
                tm = rearrange(tm, "b c f h w -> b f (h w) c")
                trace.temporal_out.append(tm)
                trace.temporal_cache.append(cache)
                trace.residuals.append(base + tm @ self.params["pose_temporal"][f"wo.{k}"])
            else:
                trace.temporal_out.append(None)
                trace.temporal_cache.append(None)
                trace.residuals.append(base)
        return trace

    def encode_appearance(self, source_tokens: np.ndarray) -> AppearanceTrace:
        """One appearance token block (b, m, c) per denoiser block."""
        a = self.params["appearance_encoder"]
        if source_tokens.ndim != 3:
            raise ValueError(f"source tokens must be (b, m, 3), got {source_tokens.shape}")
        hidden = np.tanh(source_tokens @ a["w_in"] + a["b_in"])
        trace = AppearanceTrace(source_tokens, hidden)
        for k in range(self.params.blocks):
            trace.features.append(hidden @ a[f"w_out.{k}"] + a[f"b_out.{k}"])
        return trace

    def forward(
        self,
        z_t: LatentVideo,
        t: Timesteps,
        pose_tokens: np.ndarray,
        source_tokens: np.ndarray,
        tmap: Optional[TemperatureMap] = None,
    ) -> ForwardTrace:
        if z_t.ndim != 5:
            raise ValueError(f"expected a (b, c, f, h, w) latent, got {z_t.shape}")
        b, c, f, h, w = z_t.shape
        if c != self.params.channels:
            raise ValueError(f"latent has {c} channels, parameters expect {self.params.channels}")
        if pose_tokens.shape[:2] != (b, f):
            raise ValueError(f"pose tokens {pose_tokens.shape} do not match {b} samples of {f} frames")
        if source_tokens.shape[0] != b:
            raise ValueError(f"source tokens {source_tokens.shape} do not match batch {b}")

        base = self.params["denoiser_base"]
        steps = np.broadcast_to(np.asarray(t, dtype=np.float64), (b,))
        embedding = timestep_embedding(steps, c)
        pose = self.pose_encode(pose_tokens, h, w)
        appearance = self.encode_appearance(source_tokens)

        hidden = rearrange(z_t, "b c f h w -> b f (h w) c") + (embedding @ base["w_time"])[:, None, None, :]
        blocks = []
        for k in range(self.params.blocks):
            h1 = hidden + pose.residuals[k]
            eff = effective_weights(self.params.attention("denoiser_base", k), self.params.lora(k))
            x = rearrange(h1, "b f n c -> (b f) n c")
            context = repeat(appearance.features[k], "b m c -> (b f) m c", f=f)
            s_self, self_cache = attend(x, None, eff.wq, eff.wk, eff.wv, eff.head_count)
            s_joint, joint_cache = attend(x, context, eff.wq, eff.wk, eff.wv, eff.head_count)
            # a zero gate leaves exactly the attention over z
            s = s_self + (s_joint - s_self) * self.params["appearance_encoder"][f"scale.{k}"]
            s = rearrange(s, "(b f) n c -> b f n c", b=b)
            h2 = h1 + s @ base[f"wo.{k}"]

            zt, tm, t_cache = None, None, None
            if self.temporal_on:
                zt = rearrange(h2, "b f (h w) c -> b c f h w", h=h, w=w)
                tm, t_cache = temporal_attention_forward(zt, self.params.attention("denoiser_temporal", k), tmap)
                tm = rearrange(tm, "b c f h w -> b f (h w) c")
                h3 = h2 + tm @ self.params["denoiser_temporal"][f"wo.{k}"]
            else:
                h3 = h2

            ff = np.tanh(h3 @ base[f"ff_w1.{k}"] + base[f"ff_b1.{k}"])
            hidden = h3 + ff @ base[f"ff_w2.{k}"] + base[f"ff_b2.{k}"]
            blocks.append(BlockTrace(self_cache, joint_cache, s_self, s_joint, s, zt, tm, t_cache, h3, ff))

        out = hidden @ base["w_out"] + base["b_out"]
        output = rearrange(out, "b f (h w) c -> b c f h w", h=h, w=w)
        return ForwardTrace(z_t.shape, embedding, pose, appearance, blocks, hidden, output)

    def eps_predict(
        self,
        z_t: LatentVideo,
        t: Timesteps,
        pose_tokens: np.ndarray,
        source_tokens: np.ndarray,
        tmap: Optional[TemperatureMap] = None,
    ) -> LatentVideo:
        return self.forward(z_t, t, pose_tokens, source_tokens, tmap).output

    def backward(self, trace: ForwardTrace, d_output: LatentVideo) -> Dict[str, np.ndarray]:
        """Gradients of sum(output * d_output) for every parameter."""
        params = self.params
        base = params["denoiser_base"]
        b, c, f, h, w = trace.shape
        grads = {key: np.zeros_like(value) for key, value in params.items()}

        d_out = rearrange(d_output, "b c f h w -> b f (h w) c")
        grads["denoiser_base/w_out"] = _outer_sum(trace.final_hidden, d_out)
        grads["denoiser_base/b_out"] = _bias_sum(d_out)
        d_hidden = d_out @ base["w_out"].T

        d_residuals: List[np.ndarray] = [None] * params.blocks
        d_features: List[np.ndarray] = [None] * params.blocks
        for k in reversed(range(params.blocks)):
            block = trace.blocks[k]

            grads[f"denoiser_base/ff_w2.{k}"] = _outer_sum(block.ff_hidden, d_hidden)
            grads[f"denoiser_base/ff_b2.{k}"] = _bias_sum(d_hidden)
            d_pre = _tanh_grad(block.ff_hidden, d_hidden @ base[f"ff_w2.{k}"].T)
            grads[f"denoiser_base/ff_w1.{k}"] = _outer_sum(block.pre_ff, d_pre)
            grads[f"denoiser_base/ff_b1.{k}"] = _bias_sum(d_pre)
            d_h3 = d_hidden + d_pre @ base[f"ff_w1.{k}"].T

            if block.temporal_out is not None:
                wo = params["denoiser_temporal"][f"wo.{k}"]
                grads[f"denoiser_temporal/wo.{k}"] = _outer_sum(block.temporal_out, d_h3)
                d_tm = rearrange(d_h3 @ wo.T, "b f (h w) c -> b c f h w", h=h, w=w)
                g = temporal_attention_backward(d_tm, block.temporal_cache, (b, c, f, h, w))
                for name in ("wq", "wk", "wv"):
                    grads[f"denoiser_temporal/{name}.{k}"] = g[name]
                d_h2 = d_h3 + rearrange(g["z"], "b c f h w -> b f (h w) c")
            else:
                d_h2 = d_h3

            grads[f"denoiser_base/wo.{k}"] = _outer_sum(block.spatial_out, d_h2)
            d_s = rearrange(d_h2 @ base[f"wo.{k}"].T, "b f n c -> (b f) n c")
            gate = params["appearance_encoder"][f"scale.{k}"]
            grads[f"appearance_encoder/scale.{k}"] = _bias_sum(d_s * (block.joint_out - block.self_out))
            g_self = attend_backward(d_s * (1.0 - gate), block.self_cache)
            g_joint = attend_backward(d_s * gate, block.joint_cache)
            lora = params.lora(k)
            for name in ("q", "k", "v"):
                dw = getattr(g_self, f"w{name}") + getattr(g_joint, f"w{name}")
                grads[f"denoiser_base/w{name}.{k}"] = dw
                grads[f"lora/b_{name}.{k}"] = dw @ getattr(lora, f"a_{name}").T
                grads[f"lora/a_{name}.{k}"] = getattr(lora, f"b_{name}").T @ dw
            d_features[k] = rearrange(g_joint.context, "(b f) m c -> b f m c", b=b).sum(axis=1)
            d_h1 = d_h2 + rearrange(g_self.x + g_joint.x, "(b f) n c -> b f n c", b=b)

            d_residuals[k] = d_h1
            d_hidden = d_h1

        d_time = d_hidden.sum(axis=(1, 2))
        grads["denoiser_base/w_time"] = trace.embedding.T @ d_time

        self._pose_backward(trace.pose, d_residuals, (b, c, f, h, w), grads)
        self._appearance_backward(trace.appearance, d_features, grads)
        return grads

    def _pose_backward(self, trace: PoseTrace, d_residuals, shape, grads) -> None:
        p = self.params["pose_branch"]
        _, _, _, h, w = shape
        d_hidden = np.zeros_like(trace.hidden)
        for k, d_res in enumerate(d_residuals):
            if trace.temporal_out[k] is not None:
                wo = self.params["pose_temporal"][f"wo.{k}"]
                grads[f"pose_temporal/wo.{k}"] = _outer_sum(trace.temporal_out[k], d_res)
                d_tm = rearrange(d_res @ wo.T, "b f (h w) c -> b c f h w", h=h, w=w)
                g = temporal_attention_backward(d_tm, trace.temporal_cache[k], shape)
                for name in ("wq", "wk", "wv"):
                    grads[f"pose_temporal/{name}.{k}"] = g[name]
                d_base = d_res + rearrange(g["z"], "b c f h w -> b f (h w) c")
            else:
                d_base = d_res
            grads[f"pose_branch/w_out.{k}"] = _outer_sum(trace.hidden, d_base)
            grads[f"pose_branch/b_out.{k}"] = _bias_sum(d_base)
            d_hidden += d_base @ p[f"w_out.{k}"].T
        d_pre = _tanh_grad(trace.hidden, d_hidden)
        grads["pose_branch/w_in"] = _outer_sum(trace.tokens, d_pre)
        grads["pose_branch/b_in"] = _bias_sum(d_pre)

    def _appearance_backward(self, trace: AppearanceTrace, d_features, grads) -> None:
        a = self.params["appearance_encoder"]
        d_hidden = np.zeros_like(trace.hidden)
        for k, d_feat in enumerate(d_features):
            grads[f"appearance_encoder/w_out.{k}"] = _outer_sum(trace.hidden, d_feat)
            grads[f"appearance_encoder/b_out.{k}"] = _bias_sum(d_feat)
            d_hidden += d_feat @ a[f"w_out.{k}"].T
        d_pre = _tanh_grad(trace.hidden, d_hidden)
        grads["appearance_encoder/w_in"] = _outer_sum(trace.tokens, d_pre)
        grads["appearance_encoder/b_in"] = _bias_sum(d_pre)

    def loss_and_grads(
        self,
        z_t: LatentVideo,
        t: Timesteps,
        eps: LatentVideo,
        pose_tokens: np.ndarray,
        source_tokens: np.ndarray,
        tmap: Optional[TemperatureMap] = None,
    ) -> Tuple[float, Dict[str, np.ndarray]]:
        """Squared error summed over channels, averaged over batch, frames and latent pixels."""
        trace = self.forward(z_t, t, pose_tokens, source_tokens, tmap)
        b, _, f, h, w = z_t.shape
        diff = trace.output - eps
        loss = float((diff * diff).sum() / (b * f * h * w))
        if not np.isfinite(loss):
            raise NumericalError(f"loss is not finite ({loss}) at timesteps {np.asarray(t).tolist()}")
        return loss, self.backward(trace, 2.0 * diff / (b * f * h * w))

    def loss(
        self,
        z_t: LatentVideo,
        t: Timesteps,
        eps: LatentVideo,
        pose_tokens: np.ndarray,
        source_tokens: np.ndarray,
        tmap: Optional[TemperatureMap] = None,
    ) -> float:
        b, _, f, h, w = z_t.shape
        diff = self.eps_predict(z_t, t, pose_tokens, source_tokens, tmap) - eps
        return float((diff * diff).sum() / (b * f * h * w))
