"""Sensor raster geometry: pixel grid, physical frame, and conversions.

The physical frame has its origin at the image center, +x to the right and
+y up. Array element [iy, ix] covers the square patch centered at
``((ix + 0.5) * scale - extent / 2, (iy + 0.5) * scale - extent / 2)`` in mm.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class SensorConfig:
    """Raster size and physical scale of the simulated sensor."""

    input_size: int = 640
    scale_mm_per_px: float = 0.05

    def __post_init__(self):
        if self.input_size <= 0 or self.input_size % 32 != 0:
            raise ConfigError(
                f"input_size must be a positive multiple of 32, got {self.input_size}"
            )
        if not (self.scale_mm_per_px > 0):
            raise ConfigError("scale_mm_per_px must be > 0")

    @property
    def extent_mm(self) -> float:
        """Side length of the active area in mm."""
        return self.input_size * self.scale_mm_per_px

    def params(self) -> dict:
        return {
            "input_size": self.input_size,
            "scale_mm_per_px": self.scale_mm_per_px,
        }


@lru_cache(maxsize=8)
def _pixel_axes(input_size: int, scale: float):
    half = input_size * scale / 2.0
    coords = (np.arange(input_size) + 0.5) * scale - half
    return coords


def pixel_centers_mm(sensor: SensorConfig):
    """Meshgrid (X, Y) of pixel-center coordinates in mm, shape (H, W) each."""
    coords = _pixel_axes(sensor.input_size, sensor.scale_mm_per_px)
    X, Y = np.meshgrid(coords, coords)
    return X, Y


def px_to_mm(ix, iy, sensor: SensorConfig):
    """Convert fractional pixel indices to physical mm coordinates."""
    half = sensor.extent_mm / 2.0
    s = sensor.scale_mm_per_px
    return (np.asarray(ix) + 0.5) * s - half, (np.asarray(iy) + 0.5) * s - half


def mm_to_px(x, y, sensor: SensorConfig):
    """Convert physical mm coordinates to fractional pixel indices."""
    half = sensor.extent_mm / 2.0
    s = sensor.scale_mm_per_px
    return (np.asarray(x) + half) / s - 0.5, (np.asarray(y) + half) / s - 0.5
