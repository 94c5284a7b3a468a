import logging
from typing import Callable, Dict, Optional

import numpy as np

from poseflux.src.models.attention import AttentionWeights, LoraDelta
from poseflux.src.models.errors import NumericalError
from poseflux.src.models.maps import TemperatureMap
from poseflux.src.services.attention import (
    appa_attention_with_grads,
    attend,
    attend_backward,
    temporal_attention_backward,
    temporal_attention_forward,
)

logger = logging.getLogger("poseflux.gradcheck")

Arrays = Dict[str, np.ndarray]
LossFn = Callable[[Arrays], float]
GradFn = Callable[[Arrays], Arrays]


def grad_check(loss_fn: LossFn, grad_fn: GradFn, arrays: Arrays, h: float = 1e-6) -> float:
    """Max |analytic - central difference| / max(1, |central difference|) over every entry."""
    if not 1e-6 <= h <= 1e-4:
        raise ValueError(f"step {h} outside [1e-6, 1e-4]")
    arrays = {name: np.array(value, dtype=np.float64) for name, value in arrays.items()}
    analytic = grad_fn(arrays)

    worst = 0.0
    for name, value in arrays.items():
        grad = analytic[name]
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"analytic gradient for {name} is not finite")
        flat = value.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            plus = loss_fn(arrays)
            flat[i] = saved - h
            minus = loss_fn(arrays)
            flat[i] = saved
            numeric = (plus - minus) / (2.0 * h)
            if not np.isfinite(numeric):
                raise NumericalError(f"central difference for {name}[{i}] is not finite")
            error = abs(grad.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, error)
    logger.debug(f"Gradient check over {sum(v.size for v in arrays.values())} entries: {worst:.3e}")
    return worst


def _probe(shape, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(size=shape)


def base_attention_probe(head_count: int, probe: np.ndarray):
    """Loss sum(out * probe) for base attention over arrays z, z_a, wq, wk, wv."""

    def loss(a: Arrays) -> float:
        out, _ = attend(a["z"][None], a["z_a"][None], a["wq"], a["wk"], a["wv"], head_count)
        return float((out[0] * probe).sum())

    def grads(a: Arrays) -> Arrays:
        _, cache = attend(a["z"][None], a["z_a"][None], a["wq"], a["wk"], a["wv"], head_count)
        g = attend_backward(probe[None], cache)
        return {"z": g.x[0], "z_a": g.context[0], "wq": g.wq, "wk": g.wk, "wv": g.wv}

    return loss, grads


def appa_attention_probe(head_count: int, probe: np.ndarray):
    """Same as the base probe with LoRA factors b_* and a_* added to the arrays."""

    def split(a: Arrays):
        weights = AttentionWeights(a["wq"], a["wk"], a["wv"], head_count)
        delta = LoraDelta(a["b_q"], a["b_k"], a["b_v"], a["a_q"], a["a_k"], a["a_v"])
        return weights, delta

    def loss(a: Arrays) -> float:
        weights, delta = split(a)
        out, _ = appa_attention_with_grads(a["z"], a["z_a"], weights, delta, probe)
        return float((out * probe).sum())

    def grads(a: Arrays) -> Arrays:
        weights, delta = split(a)
        _, g = appa_attention_with_grads(a["z"], a["z_a"], weights, delta, probe)
        return g

    return loss, grads


def temporal_attention_probe(head_count: int, probe: np.ndarray, tmap: Optional[TemperatureMap] = None):
    """Loss sum(out * probe) for temporal attention over arrays z, wq, wk, wv."""

    def run(a: Arrays):
        weights = AttentionWeights(a["wq"], a["wk"], a["wv"], head_count)
        return temporal_attention_forward(a["z"], weights, tmap)

    def loss(a: Arrays) -> float:
        out, _ = run(a)
        return float((out * probe).sum())

    def grads(a: Arrays) -> Arrays:
        _, cache = run(a)
        return temporal_attention_backward(probe, cache, a["z"].shape)

    return loss, grads


def check_attention(
    op: str,
    channels: int = 4,
    tokens: int = 3,
    context_tokens: int = 2,
    rank: int = 2,
    head_count: int = 2,
    frames: int = 3,
    grid: int = 2,
    tmap: Optional[TemperatureMap] = None,
    seed: int = 0,
    h: float = 1e-6,
) -> float:
    """Gradient check of one kernel ("base", "appa" or "temporal") on random inputs."""
    rng = np.random.default_rng(seed)
    weights = {name: _probe((channels, channels), rng) for name in ("wq", "wk", "wv")}
    if op == "temporal":
        arrays = {"z": _probe((1, channels, frames, grid, grid), rng), **weights}
        loss, grads = temporal_attention_probe(head_count, _probe(arrays["z"].shape, rng), tmap)
        return grad_check(loss, grads, arrays, h)

    arrays = {
        "z": _probe((tokens, channels), rng),
        "z_a": _probe((context_tokens, channels), rng),
        **weights,
    }
    probe = _probe((tokens, channels), rng)
    if op == "base":
        loss, grads = base_attention_probe(head_count, probe)
    elif op == "appa":
        for name in ("q", "k", "v"):
            arrays[f"b_{name}"] = _probe((channels, rank), rng)
            arrays[f"a_{name}"] = _probe((rank, channels), rng)
        loss, grads = appa_attention_probe(head_count, probe)
    else:
        raise ValueError(f"unknown attention op {op!r}")
    return grad_check(loss, grads, arrays, h)
