"""
Dense channel x height x width float32 grid.

Carries page images, target maps and prediction maps between modules. A grid is
read-only once built; operations return new grids.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import torch

from .errors import ShapeError


@dataclass(frozen=True, eq=False)
class TensorGrid:
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32, copy=True)
        if arr.ndim != 3 or min(arr.shape) <= 0:
            raise ShapeError(f"grid must be rank 3 with positive dims, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ShapeError("grid contains NaN or Inf values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> "TensorGrid":
        return cls(np.zeros((channels, height, width), dtype=np.float32))

    @classmethod
    def from_tensor(cls, tensor: torch.Tensor) -> "TensorGrid":
        return cls(tensor.detach().cpu().numpy())

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape

    @property
    def flat(self) -> np.ndarray:
        """Row-major buffer, channel outermost"""
        return self.data.reshape(-1)

    def get(self, c: int, y: int, x: int) -> float:
        return float(self.data[c, y, x])

    def with_value(self, c: int, y: int, x: int, value: float) -> "TensorGrid":
        arr = self.data.copy()
        arr[c, y, x] = value
        return TensorGrid(arr)

    def channel(self, c: int) -> np.ndarray:
        return self.data[c]

    def padded(self, height: int, width: int, value: float) -> "TensorGrid":
        """Extend at the bottom and right to at least height x width, filled with value"""
        pad_h = max(0, height - self.height)
        pad_w = max(0, width - self.width)
        if not pad_h and not pad_w:
            return self
        arr = np.pad(self.data, ((0, 0), (0, pad_h), (0, pad_w)), constant_values=value)
        return TensorGrid(arr)

    def to_tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.data.copy())

    def same_dims(self, other: "TensorGrid") -> bool:
        return self.shape == other.shape

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TensorGrid):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    def __repr__(self) -> str:
        c, h, w = self.shape
        return f"TensorGrid({c}x{h}x{w})"


def round_up(n: int, multiple: int) -> int:
    return -(-n // multiple) * multiple
