from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

Window = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class WindowPlan:
    total: int
    window: int
    stride: int
    windows: Tuple[Window, ...]

    def __post_init__(self):
        for start, end in self.windows:
            if not (0 <= start and end <= self.total and end - start == self.window):
                raise ValueError(f"window [{start}, {end}) does not fit {self.total} frames with size {self.window}")
        if (self.coverage == 0).any():
            raise ValueError(f"frames {np.flatnonzero(self.coverage == 0).tolist()} are not covered")

    @property
    def coverage(self) -> np.ndarray:
        counts = np.zeros(self.total, dtype=np.int64)
        for start, end in self.windows:
            counts[start:end] += 1
        return counts

    def starts(self) -> List[int]:
        return [start for start, _ in self.windows]
