import numpy as np


def area_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) matrix averaging each target cell's preimage [j*s/d, (j+1)*s/d)."""
    scale = src / dst
    edges = np.arange(dst + 1) * scale
    lo = np.maximum(edges[:-1, None], np.arange(src)[None, :])
    hi = np.minimum(edges[1:, None], np.arange(1, src + 1)[None, :])
    return np.clip(hi - lo, 0.0, None) / scale


def bilinear_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) matrix of half-pixel-centred linear interpolation, clamped at edges."""
    centres = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    centres = np.clip(centres, 0.0, src - 1)
    left = np.floor(centres).astype(int)
    right = np.minimum(left + 1, src - 1)
    frac = centres - left
    weights = np.zeros((dst, src))
    rows = np.arange(dst)
    np.add.at(weights, (rows, left), 1.0 - frac)
    np.add.at(weights, (rows, right), frac)
    return weights


def axis_weights(src: int, dst: int) -> np.ndarray:
    if dst == src:
        return np.eye(src)
    if dst < src:
        return area_weights(src, dst)
    return bilinear_weights(src, dst)


def resize(values: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize the two leading axes; trailing axes (e.g. colour) ride along."""
    if height < 1 or width < 1:
        raise ValueError(f"target size must be at least 1x1, got {height}x{width}")
    src_h, src_w = values.shape[:2]
    if (src_h, src_w) == (height, width):
        return np.array(values, dtype=np.float64, copy=True)
    rows = axis_weights(src_h, height)
    cols = axis_weights(src_w, width)
    return np.einsum("iy,yx...,jx->ij...", rows, values.astype(np.float64), cols)
