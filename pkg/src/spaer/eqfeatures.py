"""Rotation-equivariant filter bank and per-channel spatial means.

Every channel is an isotropic operator (Gaussian smoothing, gradient
magnitude, Laplacian magnitude, pointwise powers), so the bank is
rotation-equivariant by construction. Channel gains are learnable and kept
non-negative through a softplus map; because spatial means are
mass-normalized, gains scale channel masses but never move the points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InvalidChannelSpec
from .volume import Volume

BASE_TYPES = ("smoothed_intensity", "gradient_magnitude",
              "laplacian_magnitude", "intensity_power")


@dataclass(frozen=True)
class ChannelSpec:
    base_type: str
    scale_sigma: float  # mm
    power: float = 1.0  # pointwise exponent on the (non-negative) base response

    def __post_init__(self):
        if self.base_type not in BASE_TYPES:
            raise InvalidChannelSpec(f"unknown base_type {self.base_type!r}")
        if self.scale_sigma <= 0:
            raise InvalidChannelSpec("scale_sigma must be > 0")
        if self.power < 1:
            raise InvalidChannelSpec("power must be >= 1")


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    y = np.asarray(y, dtype=float)
    return y + np.log1p(-np.exp(-y))


@dataclass(frozen=True)
class FilterBank:
    channels: tuple[ChannelSpec, ...]
    raw_gains: np.ndarray  # unconstrained; effective gain = softplus(raw)

    def __post_init__(self):
        ch = tuple(self.channels)
        rg = np.asarray(self.raw_gains, dtype=float).reshape(len(ch))
        rg.setflags(write=False)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "raw_gains", rg)

    @property
    def size(self) -> int:
        return len(self.channels)

    @property
    def gains(self) -> np.ndarray:
        return softplus(self.raw_gains)

    def with_raw_gains(self, raw) -> "FilterBank":
        return FilterBank(self.channels, raw)


def default_bank(sigmas=(3.0, 6.0)) -> FilterBank:
    """32 channels: base types x 2 scales x power variants, K = 32; unit gains.

    Flattened coordinates give token dimension d = 3K = 96.
    """
    # derivative-based channels get only low powers, and the Laplacian only
    # the coarsest scale: sharp responses amplify the grid-locked curvature
    # artifacts of trilinear resampling and break equivariance tolerances
    channels = []
    coarsest = max(sigmas)
    for sigma in sigmas:
        channels.append(ChannelSpec("smoothed_intensity", sigma, 1.0))
        int_powers = [1.25, 1.5, 1.75, 2.0, 2.25, 2.5, 2.75, 3.0, 3.25, 3.5]
        if sigma != coarsest:
            int_powers.append(3.75)
        for p in int_powers:
            channels.append(ChannelSpec("intensity_power", sigma, p))
        for p in (1.0, 1.25, 1.5, 1.75):
            channels.append(ChannelSpec("gradient_magnitude", sigma, p))
        if sigma == coarsest:
            channels.append(ChannelSpec("laplacian_magnitude", sigma, 1.0))
    raw = inverse_softplus(np.ones(len(channels)))
    return FilterBank(tuple(channels), raw)


@dataclass(frozen=True)
class PointCloud:
    """K weighted points (mm); zero-mass channels are flagged invalid."""

    points: np.ndarray  # (K, 3)
    masses: np.ndarray  # (K,)

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        m = np.asarray(self.masses, dtype=float).reshape(p.shape[0])
        p.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "masses", m)

    @property
    def valid(self) -> np.ndarray:
        return self.masses > 0


def _smooth(vol: Volume, sigma_mm: float) -> np.ndarray:
    sigma_vox = sigma_mm / vol.spacing
    radius = [int(math.ceil(3 * s)) for s in sigma_vox]
    return ndimage.gaussian_filter(vol.data, sigma_vox, mode="constant",
                                   cval=0.0, radius=radius)


def _gradient_magnitude(smoothed: np.ndarray, spacing: np.ndarray) -> np.ndarray:
    gx, gy, gz = np.gradient(smoothed, *spacing)
    return np.sqrt(gx * gx + gy * gy + gz * gz)


def _laplacian_magnitude(smoothed: np.ndarray, spacing: np.ndarray) -> np.ndarray:
    lap = np.zeros_like(smoothed)
    kernel = np.array([1.0, -2.0, 1.0])
    for axis in range(3):
        lap += ndimage.correlate1d(smoothed, kernel / spacing[axis] ** 2,
                                   axis=axis, mode="constant", cval=0.0)
    return np.abs(lap)


def apply_filter_bank(bank: FilterBank, vol: Volume) -> np.ndarray:
    """(K, M1, M2, M3) stack of non-negative channel responses.

    Smoothed bases are shared across channels with the same sigma, so the cost
    is one Gaussian pass per distinct scale plus cheap pointwise work.
    """
    gains = bank.gains
    smoothed_cache: dict[float, np.ndarray] = {}
    base_cache: dict[tuple[str, float], np.ndarray] = {}
    stack = np.empty((bank.size,) + vol.dims)
    for k, spec in enumerate(bank.channels):
        if spec.scale_sigma not in smoothed_cache:
            smoothed_cache[spec.scale_sigma] = _smooth(vol, spec.scale_sigma)
        smoothed = smoothed_cache[spec.scale_sigma]
        key = (spec.base_type, spec.scale_sigma)
        if key not in base_cache:
            if spec.base_type in ("smoothed_intensity", "intensity_power"):
                base = np.maximum(smoothed, 0.0)
            elif spec.base_type == "gradient_magnitude":
                base = _gradient_magnitude(smoothed, vol.spacing)
            else:
                base = _laplacian_magnitude(smoothed, vol.spacing)
            base_cache[key] = base
        base = base_cache[key]
        if spec.power != 1.0:
            base = base ** spec.power
        stack[k] = gains[k] * base
    return stack


def spatial_means(stack: np.ndarray, vol: Volume) -> PointCloud:
    """Mass-normalized weighted centroid per channel, in world coordinates."""
    k = stack.shape[0]
    flat = stack.reshape(k, -1)
    totals = flat.sum(axis=1)
    coords = vol.voxel_centers().reshape(-1, 3)
    points = np.zeros((k, 3))
    nz = totals > 0
    if np.any(nz):
        points[nz] = (flat[nz] @ coords) / totals[nz, None]
    voxel_volume = float(np.prod(vol.spacing))
    return PointCloud(points, totals * voxel_volume)


def representation(bank: FilterBank, vol: Volume) -> PointCloud:
    """Volume -> K weighted spatial-mean points."""
    return spatial_means(apply_filter_bank(bank, vol), vol)
