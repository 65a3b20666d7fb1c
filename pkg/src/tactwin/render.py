"""Gradient-based shading of the membrane and the simulated-image entry points.

Each pixel's intensity comes from the local surface normal: with height f and
unit lights L_k, I = clamp(ambient + diffuse * mean_k max(0, n . L_k)^p, 0, 1)
where n = (-df/dx, -df/dy, 1) normalized. A flat membrane therefore renders to
a uniform baseline, and contact signatures appear as local darkening whose
strength grows with surface slope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .contact import (ContactScenario, GroundTruth, HeightField, MaterialParams,
                      SphereProbe, ground_truth, height_field, hertz_indentation)
from .errors import ConfigError
from .frames import SensorConfig, pixel_centers_mm


def ring_lights(n: int = 12, elevation_deg: float = 45.0) -> np.ndarray:
    """n unit light directions on a ring at the given elevation, (n, 3).

    A dense ring keeps the shading nearly rotation-invariant, emulating the
    diffused LED ring of the physical sensor; 4 lights leave a few percent of
    orientation dependence at steep slopes.
    """
    el = math.radians(elevation_deg)
    az = np.radians(np.arange(n) * 360.0 / n)
    return np.stack([np.cos(az) * math.cos(el),
                     np.sin(az) * math.cos(el),
                     np.full(n, math.sin(el))], axis=1)


@dataclass(frozen=True)
class IlluminationModel:
    ambient: float = 0.25
    diffuse: float = 0.6
    light_dirs: np.ndarray = field(default_factory=ring_lights)
    exponent: float = 1.0

    def __post_init__(self):
        if not (0 <= self.ambient <= 1 and 0 <= self.diffuse <= 1):
            raise ConfigError("ambient and diffuse must be in [0, 1]")
        if self.ambient + self.diffuse > 1.0 + 1e-12:
            raise ConfigError("ambient + diffuse must not exceed 1")
        if self.exponent < 1:
            raise ConfigError("exponent must be >= 1")
        dirs = np.asarray(self.light_dirs, dtype=float).reshape(-1, 3)
        if dirs.shape[0] == 0:
            raise ConfigError("at least one light direction is required")
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(norms <= 0):
            raise ConfigError("light directions must be nonzero")
        # Normalize only when needed: renormalizing an already-unit vector
        # perturbs the last bit, which would break parameter-hash round trips.
        if np.any(np.abs(norms - 1.0) > 1e-12):
            dirs = dirs / norms[:, None]
        object.__setattr__(self, "light_dirs", dirs)

    def params(self) -> dict:
        return {
            "ambient": self.ambient,
            "diffuse": self.diffuse,
            "light_dirs": [list(map(float, d)) for d in self.light_dirs],
            "exponent": self.exponent,
        }


@dataclass(frozen=True)
class TactileImage:
    """Rendered intensity grid in [0, 1] with its physical scale."""

    pixels: np.ndarray
    scale_mm_per_px: float
    is_reference: bool = False

    @property
    def shape(self):
        return self.pixels.shape


def baseline_intensity(illum: IlluminationModel) -> float:
    """Intensity of an undeformed (flat) membrane pixel."""
    shade = np.maximum(illum.light_dirs[:, 2], 0.0) ** illum.exponent
    return float(np.clip(illum.ambient + illum.diffuse * shade.mean(), 0.0, 1.0))


def render(height: HeightField, illum: IlluminationModel) -> TactileImage:
    """Shade a height field into a tactile image."""
    z = height.z
    fy, fx = np.gradient(z, height.scale_mm_per_px)
    inv_norm = 1.0 / np.sqrt(1.0 + fx * fx + fy * fy)
    shade = np.zeros(z.shape)
    for lx, ly, lz in illum.light_dirs:
        dot = (-fx * lx - fy * ly + lz) * inv_norm
        np.maximum(dot, 0.0, out=dot)
        if illum.exponent != 1.0:
            dot **= illum.exponent
        shade += dot
    shade /= illum.light_dirs.shape[0]
    pixels = np.clip(illum.ambient + illum.diffuse * shade, 0.0, 1.0)
    return TactileImage(pixels, height.scale_mm_per_px,
                        is_reference=not bool(np.any(z)))


def make_reference(sensor: SensorConfig, illum: IlluminationModel) -> TactileImage:
    """Reference image of the undeformed membrane."""
    zero = HeightField(np.zeros((sensor.input_size, sensor.input_size)),
                       sensor.scale_mm_per_px)
    return render(zero, illum)


def simulate(scenario: ContactScenario, material: MaterialParams,
             illum: IlluminationModel, sensor: SensorConfig,
             seed: int = 0) -> tuple[TactileImage, GroundTruth]:
    """Forward model: scenario -> (noisy tactile image, ground truth).

    Deterministic in (scenario, parameters, seed); pixel noise is zero-mean
    Gaussian with the scenario's noise_sigma, applied before clamping.
    """
    img = render(height_field(scenario, material, sensor), illum)
    pixels = img.pixels
    if scenario.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        pixels = np.clip(pixels + rng.normal(0.0, scenario.noise_sigma, pixels.shape),
                         0.0, 1.0)
    return (TactileImage(pixels, img.scale_mm_per_px, is_reference=img.is_reference),
            ground_truth(scenario, material))


def deviation_area_mm2(img: TactileImage, illum: IlluminationModel,
                       threshold: float = 0.0034) -> float:
    """Area (mm^2) where the image deviates from the flat baseline."""
    dev = np.abs(img.pixels - baseline_intensity(illum))
    return float((dev >= threshold).sum()) * img.scale_mm_per_px ** 2


def contact_band_contrast(scenario: ContactScenario, material: MaterialParams,
                          illum: IlluminationModel, sensor: SensorConfig,
                          band_mm: float = 0.5) -> float:
    """Peak |I - baseline| on the band just inside the contact boundary.

    The inside band isolates the indenter's own edge slope from the membrane
    decay outside the contact, which saturates the shading at high loads for
    every probe alike.
    """
    hf = height_field(scenario, material, sensor)
    img = render(hf, illum)
    dev = np.abs(img.pixels - baseline_intensity(illum))
    X, Y = pixel_centers_mm(sensor)
    if isinstance(scenario.probe, SphereProbe):
        _, a = hertz_indentation(scenario.force_n, scenario.probe.radius_mm,
                                 material.e_star)
        r = np.hypot(X - scenario.x_mm, Y - scenario.y_mm)
        band = (r <= a) & (r >= a - band_mm)
    else:
        inside = hf.z >= hf.max_depth * (1.0 - 1e-9)
        dist = ndimage.distance_transform_edt(inside, sampling=sensor.scale_mm_per_px)
        band = inside & (dist <= band_mm)
    if not band.any():
        return 0.0
    return float(dev[band].max())


# ---------------------------------------------------------------------------
# Resolution characterization with a simulated stripe target.
# ---------------------------------------------------------------------------

RESOLVABLE_MODULATION = 0.1


@dataclass(frozen=True)
class SweepRow:
    frequency_lp_mm: float
    modulation: float
    resolvable: bool


@dataclass(frozen=True)
class ResolutionSweep:
    orientation: str
    rows: list
    limit_lp_mm: float | None  # highest frequency with modulation >= 0.1


def nyquist_lp_mm(sensor: SensorConfig) -> float:
    """Sampling bound: one line pair needs at least two pixels."""
    return 1.0 / (2.0 * sensor.scale_mm_per_px)


# Irrational-ish bar phase (in px) keeps the grating from locking to the
# pixel grid, where central differences of an aligned 4 px period degenerate
# to a constant gradient magnitude.
_BAR_PHASE_PX = 0.2347
# Fixed conformance smoothing of the pressed profile, in px.
_BAR_SMOOTH_PX = 1.5


def _bar_coverage(u: np.ndarray, frequency: float, pixel_mm: float) -> np.ndarray:
    """Fraction of each pixel covered by a 50%-duty bar pattern (anti-aliased)."""
    period = 1.0 / frequency
    shifted = u + _BAR_PHASE_PX * pixel_mm
    lo = (shifted - pixel_mm / 2.0) / period
    hi = (shifted + pixel_mm / 2.0) / period

    def ramp(x):
        fl = np.floor(x)
        return 0.5 * fl + np.minimum(x - fl, 0.5)

    return (ramp(hi) - ramp(lo)) / (hi - lo)


def resolution_sweep(frequencies, orientation: str, material: MaterialParams,
                     illum: IlluminationModel, sensor: SensorConfig,
                     depth_mm: float = 0.4, patch_mm: float = 24.0) -> ResolutionSweep:
    """Press a stripe grating at each frequency and measure image modulation.

    Bars are rasterized by pixel coverage and smoothed by a fixed conformance
    width, so the rolloff reflects sampling rather than rasterization beats.
    Modulation is (Imax - Imin) / (Imax + Imin) over the interior of the
    grating patch. Frequencies beyond the two-pixel sampling bound are
    flagged unresolvable and recorded with modulation 0.
    """
    if orientation not in ("horizontal", "vertical"):
        raise ConfigError(f"orientation must be horizontal or vertical, got {orientation!r}")
    freqs = [float(f) for f in frequencies]
    if any(f <= 0 for f in freqs):
        raise ConfigError("frequencies must be > 0")
    nyq = nyquist_lp_mm(sensor)
    X, Y = pixel_centers_mm(sensor)
    u = Y if orientation == "horizontal" else X
    half_patch = patch_mm / 2.0
    patch = (np.abs(X) <= half_patch) & (np.abs(Y) <= half_patch)
    margin = 2.0
    region = (np.abs(X) <= half_patch - margin) & (np.abs(Y) <= half_patch - margin)
    rows = []
    for f in freqs:
        if f > nyq:
            rows.append(SweepRow(f, 0.0, False))
            continue
        cov = _bar_coverage(u, f, sensor.scale_mm_per_px)
        z = np.where(patch, depth_mm * cov, 0.0)
        z = ndimage.gaussian_filter(z, sigma=_BAR_SMOOTH_PX)
        img = render(HeightField(z, sensor.scale_mm_per_px), illum)
        vals = img.pixels[region]
        i_max, i_min = float(vals.max()), float(vals.min())
        m = (i_max - i_min) / (i_max + i_min) if i_max + i_min > 0 else 0.0
        rows.append(SweepRow(f, m, m >= RESOLVABLE_MODULATION))
    limit = None
    for r in rows:
        if r.modulation >= RESOLVABLE_MODULATION:
            limit = r.frequency_lp_mm if limit is None else max(limit, r.frequency_lp_mm)
    return ResolutionSweep(orientation=orientation, rows=rows, limit_lp_mm=limit)
