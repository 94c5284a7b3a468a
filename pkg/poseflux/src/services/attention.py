"""Multi-head attention kernels with hand-derived gradients.

Tokens are rows: Q = x @ Wq. Spatial kernels draw keys and values from the
queries concatenated with a context block along the token axis; the temporal
kernel runs one sequence per spatial location over the frame axis and divides
each sequence's logits by its own temperature.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from einops import rearrange, repeat

from poseflux.src.models.attention import AttentionWeights, LatentVideo, LoraDelta, TokenBlock
from poseflux.src.models.maps import TemperatureMap

logger = logging.getLogger("poseflux.attention")


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_entropy(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Entropy of softmax(logits / temperature) along the last axis."""
    p = softmax(np.asarray(logits, dtype=np.float64) / temperature)
    logp = np.log(np.where(p > 0, p, 1.0))
    return -(p * logp).sum(axis=-1)


@dataclass
class AttentionCache:
    x: np.ndarray
    src: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    probs: np.ndarray
    denom: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    head_count: int
    has_context: bool


@dataclass
class AttentionGrads:
    x: np.ndarray
    context: Optional[np.ndarray]
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray


def attend(
    x: np.ndarray,
    context: Optional[np.ndarray],
    wq: np.ndarray,
    wk: np.ndarray,
    wv: np.ndarray,
    head_count: int,
    temps: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, AttentionCache]:
    """Batched attention over (B, n, c) queries.

    Keys and values come from x concatenated with context (B, m, c) when given.
    temps is an optional per-batch temperature (B,) dividing the logits along
    with sqrt(d).
    """
    if x.ndim != 3:
        raise ValueError(f"expected (B, n, c) queries, got {x.shape}")
    batch, _, channels = x.shape
    if channels % head_count:
        raise ValueError(f"{channels} channels cannot be split into {head_count} heads")
    if wq.shape != (channels, channels):
        raise ValueError(f"projection is {wq.shape}, tokens have {channels} channels")
    if context is not None and (context.ndim != 3 or context.shape[::2] != (batch, channels)):
        raise ValueError(f"context {context.shape} does not match queries {x.shape}")

    src = x if context is None else np.concatenate([x, context], axis=1)
    head_dim = channels // head_count
    if temps is None:
        temps = np.ones(batch)
    elif temps.shape != (batch,):
        raise ValueError(f"temperatures {temps.shape} do not match batch {batch}")
    denom = temps.reshape(batch, 1, 1, 1) * np.sqrt(head_dim)

    q = rearrange(x @ wq, "b n (h d) -> b h n d", h=head_count)
    k = rearrange(src @ wk, "b m (h d) -> b h m d", h=head_count)
    v = rearrange(src @ wv, "b m (h d) -> b h m d", h=head_count)
    probs = softmax(np.einsum("bhnd,bhmd->bhnm", q, k) / denom)
    out = rearrange(np.einsum("bhnm,bhmd->bhnd", probs, v), "b h n d -> b n (h d)")

    cache = AttentionCache(x, src, q, k, v, probs, denom, wq, wk, wv, head_count, context is not None)
    return out, cache


def attend_backward(d_out: np.ndarray, cache: AttentionCache) -> AttentionGrads:
    n = cache.x.shape[1]
    d_o = rearrange(d_out, "b n (h d) -> b h n d", h=cache.head_count)

    d_probs = np.einsum("bhnd,bhmd->bhnm", d_o, cache.v)
    d_v = np.einsum("bhnm,bhnd->bhmd", cache.probs, d_o)
    d_logits = cache.probs * (d_probs - (d_probs * cache.probs).sum(axis=-1, keepdims=True))
    d_raw = d_logits / cache.denom
    d_q = np.einsum("bhnm,bhmd->bhnd", d_raw, cache.k)
    d_k = np.einsum("bhnm,bhnd->bhmd", d_raw, cache.q)

    d_q = rearrange(d_q, "b h n d -> b n (h d)")
    d_k = rearrange(d_k, "b h m d -> b m (h d)")
    d_v = rearrange(d_v, "b h m d -> b m (h d)")

    d_src = d_k @ cache.wk.T + d_v @ cache.wv.T
    d_x = d_q @ cache.wq.T + d_src[:, :n]
    return AttentionGrads(
        x=d_x,
        context=d_src[:, n:] if cache.has_context else None,
        wq=np.einsum("bni,bnj->ij", cache.x, d_q),
        wk=np.einsum("bmi,bmj->ij", cache.src, d_k),
        wv=np.einsum("bmi,bmj->ij", cache.src, d_v),
    )


def _batched(z: TokenBlock) -> Tuple[np.ndarray, bool]:
    return (z[None], True) if z.ndim == 2 else (z, False)


def _as_context(z: np.ndarray, z_a: Optional[TokenBlock]) -> np.ndarray:
    if z_a is None:
        return np.zeros((z.shape[0], 0, z.shape[2]))
    context, _ = _batched(z_a)
    if context.shape[-1] != z.shape[-1]:
        raise ValueError(f"appearance tokens have {context.shape[-1]} channels, features have {z.shape[-1]}")
    return context


def base_attention(z: TokenBlock, z_a: Optional[TokenBlock], weights: AttentionWeights) -> TokenBlock:
    """softmax(Q K^T / sqrt(d)) V with K, V drawn from z concatenated with z_a."""
    x, squeeze = _batched(z)
    out, _ = attend(x, _as_context(x, z_a), weights.wq, weights.wk, weights.wv, weights.head_count)
    return out[0] if squeeze else out


def effective_weights(weights: AttentionWeights, delta: LoraDelta) -> AttentionWeights:
    if delta.b_q.shape[0] != weights.channels:
        raise ValueError(f"LoRA is for {delta.b_q.shape[0]} channels, weights have {weights.channels}")
    dq, dk, dv = delta.deltas()
    return AttentionWeights(weights.wq + dq, weights.wk + dk, weights.wv + dv, weights.head_count)


def appa_attention(
    z: TokenBlock,
    z_a: Optional[TokenBlock],
    weights: AttentionWeights,
    delta: LoraDelta,
) -> TokenBlock:
    """Attention with LoRA-adapted projections (W0 + B A) for Q, K and V."""
    return base_attention(z, z_a, effective_weights(weights, delta))


def appa_attention_with_grads(
    z: TokenBlock,
    z_a: TokenBlock,
    weights: AttentionWeights,
    delta: LoraDelta,
    d_out: TokenBlock,
) -> Tuple[TokenBlock, dict]:
    """Forward plus gradients for z, z_a, W0 and both LoRA factors."""
    eff = effective_weights(weights, delta)
    x, squeeze = _batched(z)
    context = _as_context(x, z_a)
    out, cache = attend(x, context, eff.wq, eff.wk, eff.wv, eff.head_count)
    d, _ = _batched(d_out)
    g = attend_backward(d, cache)
    grads = {
        "z": g.x[0] if squeeze else g.x,
        "z_a": g.context[0] if squeeze else g.context,
        "wq": g.wq,
        "wk": g.wk,
        "wv": g.wv,
    }
    for name, dw in (("q", g.wq), ("k", g.wk), ("v", g.wv)):
        grads[f"b_{name}"] = dw @ getattr(delta, f"a_{name}").T
        grads[f"a_{name}"] = getattr(delta, f"b_{name}").T @ dw
    return (out[0] if squeeze else out), grads


def _temporal_temps(tmap: Optional[TemperatureMap], batch: int, height: int, width: int):
    if tmap is None:
        return None
    if tmap.values.shape != (height, width):
        raise ValueError(
            f"temperature map is {tmap.values.shape}, latent grid is {(height, width)}; resize it first"
        )
    return repeat(tmap.values, "h w -> (b h w)", b=batch)


def temporal_attention_forward(
    z: LatentVideo,
    weights: AttentionWeights,
    tmap: Optional[TemperatureMap] = None,
) -> Tuple[LatentVideo, AttentionCache]:
    if z.ndim != 5:
        raise ValueError(f"expected a (b, c, f, h, w) latent, got {z.shape}")
    b, _, _, h, w = z.shape
    seq = rearrange(z, "b c f h w -> (b h w) f c")
    temps = _temporal_temps(tmap, b, h, w)
    out, cache = attend(seq, None, weights.wq, weights.wk, weights.wv, weights.head_count, temps)
    return rearrange(out, "(b h w) f c -> b c f h w", b=b, h=h, w=w), cache


def temporal_attention(
    z: LatentVideo,
    weights: AttentionWeights,
    tmap: Optional[TemperatureMap] = None,
) -> LatentVideo:
    """Attention across frames at each (h, w) location, logits over T(h, w) * sqrt(d)."""
    out, _ = temporal_attention_forward(z, weights, tmap)
    return out


def temporal_attention_backward(d_out: LatentVideo, cache: AttentionCache, shape) -> dict:
    b, _, _, h, w = shape
    g = attend_backward(rearrange(d_out, "b c f h w -> (b h w) f c"), cache)
    return {
        "z": rearrange(g.x, "(b h w) f c -> b c f h w", b=b, h=h, w=w),
        "wq": g.wq,
        "wk": g.wk,
        "wv": g.wv,
    }


def temporal_attention_maps(
    z: LatentVideo,
    weights: AttentionWeights,
    tmap: Optional[TemperatureMap] = None,
) -> np.ndarray:
    """Head-averaged f x f attention blocks, shaped (b, h, w, f, f)."""
    b, _, _, h, w = z.shape
    _, cache = temporal_attention_forward(z, weights, tmap)
    return rearrange(cache.probs.mean(axis=1), "(b h w) f g -> b h w f g", b=b, h=h, w=w)
