from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.typing import NDArray

# (n, c) flattened feature map, optionally with leading batch axes.
TokenBlock = NDArray[np.float64]
# (b, c, f, h, w) latent video tensor.
LatentVideo = NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class AttentionWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    head_count: int = 1

    def __post_init__(self):
        c = self.wq.shape[0]
        for name in ("wq", "wk", "wv"):
            if getattr(self, name).shape != (c, c):
                raise ValueError(f"{name} must be {c}x{c}, got {getattr(self, name).shape}")
        if self.head_count < 1 or c % self.head_count:
            raise ValueError(f"{c} channels cannot be split into {self.head_count} heads")

    @property
    def channels(self) -> int:
        return int(self.wq.shape[0])

    @property
    def head_dim(self) -> int:
        return self.channels // self.head_count

    @classmethod
    def random(cls, rng: np.random.Generator, channels: int, head_count: int = 1) -> "AttentionWeights":
        scale = 1.0 / np.sqrt(channels)
        return cls(
            *(rng.normal(0.0, scale, (channels, channels)) for _ in range(3)),
            head_count=head_count,
        )


@dataclass(frozen=True, eq=False)
class LoraDelta:
    """Low-rank updates dW = B @ A for the Q, K and V projections."""

    b_q: np.ndarray
    b_k: np.ndarray
    b_v: np.ndarray
    a_q: np.ndarray
    a_k: np.ndarray
    a_v: np.ndarray

    def __post_init__(self):
        c, r = self.b_q.shape
        if not 1 <= r <= c:
            raise ValueError(f"rank {r} must lie in [1, {c}]")
        for name in ("b_q", "b_k", "b_v"):
            if getattr(self, name).shape != (c, r):
                raise ValueError(f"{name} must be {c}x{r}, got {getattr(self, name).shape}")
        for name in ("a_q", "a_k", "a_v"):
            if getattr(self, name).shape != (r, c):
                raise ValueError(f"{name} must be {r}x{c}, got {getattr(self, name).shape}")

    @property
    def rank(self) -> int:
        return int(self.b_q.shape[1])

    def deltas(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.b_q @ self.a_q, self.b_k @ self.a_k, self.b_v @ self.a_v

    @classmethod
    def initial(cls, rng: np.random.Generator, channels: int, rank: int) -> "LoraDelta":
        """A ~ U(-1/sqrt(r), 1/sqrt(r)), B = 0."""
        bound = 1.0 / np.sqrt(rank)
        zeros = [np.zeros((channels, rank)) for _ in range(3)]
        a = [rng.uniform(-bound, bound, (rank, channels)) for _ in range(3)]
        return cls(*zeros, *a)
