from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])


@dataclass(frozen=True, eq=False)
class DistanceMap:
    """Distance to the nearest pose pixel over the half-diagonal."""

    values: np.ndarray

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True, eq=False)
class TemperatureMap:
    values: np.ndarray
    tau: float

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @classmethod
    def uniform(cls, height: int, width: int, value: float = 1.0) -> "TemperatureMap":
        return cls(np.full((height, width), float(value)), tau=0.0)
