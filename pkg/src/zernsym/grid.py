"""Square pixel grid covering [-1, 1]^2 with the unit disc inscribed.

Arrays are indexed ``values[i, j]`` with ``i`` running along x and ``j``
along y, so ``values[i, j]`` is the sample at pixel centre ``(x_i, y_j)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DataError


def pixel_centers(m: int) -> np.ndarray:
    """Centres ``-1 + (i - 1/2) * delta`` for ``i = 1..m`` with ``delta = 2/m``."""
    if m < 1:
        raise DataError(f"grid size must be positive, got {m}")
    delta = 2.0 / m
    # built symmetric so that x_i == -x_{m-i+1} holds bit for bit
    half = (np.arange(m) - (m - 1) / 2.0) * delta
    return half


@dataclass(frozen=True, eq=False)
class ImageGrid:
    """Real samples on an ``m x m`` grid of edge width ``delta = 2/m``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DataError(f"image must be square, got shape {v.shape}")
        if v.shape[0] < 1:
            raise DataError("image is empty")
        if not np.all(np.isfinite(v)):
            raise DataError("image contains non-finite values")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, m: int) -> "ImageGrid":
        return cls(np.zeros((m, m)))

    @classmethod
    def from_function(cls, func, m: int) -> "ImageGrid":
        """Sample ``func(x, y)`` at pixel centres inside the disc, zero outside."""
        g = cls.zeros(m)
        x, y = g.coords
        vals = np.zeros((m, m))
        mask = g.mask
        vals[mask] = func(x[mask], y[mask])
        return cls(vals)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def delta(self) -> float:
        return 2.0 / self.m

    @cached_property
    def centers(self) -> np.ndarray:
        return pixel_centers(self.m)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.centers, self.centers, indexing="ij")

    @cached_property
    def mask(self) -> np.ndarray:
        x, y = self.coords
        return x * x + y * y <= 1.0

    def with_values(self, values) -> "ImageGrid":
        values = np.asarray(values, dtype=float)
        if values.shape != self.values.shape:
            raise DataError(f"shape mismatch: {values.shape} vs {self.values.shape}")
        return ImageGrid(values)

    def masked(self) -> "ImageGrid":
        """Copy with every pixel whose centre lies outside the disc set to zero."""
        return ImageGrid(np.where(self.mask, self.values, 0.0))
