"""Reproducible phantoms, bounded smooth motion trajectories, and sequences.

Everything is deterministic from (seed, config) via numpy's PCG64 generator,
whose output stream is specified by its reference algorithm and stable
across platforms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .diffeo import VelocityField, exponentiate, warp
from .geometry import RigidTransform, compose, inverse, rotation_from_euler
from .volume import Volume, centered_volume, normalize_intensity, resample_rigid


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    size: int = 64
    spacing_mm: float = 3.0
    frames: int = 20
    t_max_mm: float = 10.0
    r_max_deg: float = 5.0
    noise_sigma: float = 0.0
    contrast_drift: float = 0.0
    distortion_mm: float = 0.0

    def __post_init__(self):
        if self.size < 16:
            raise ValueError("size must be >= 16")
        if self.frames < 2:
            raise ValueError("frames must be >= 2")
        if self.t_max_mm < 0 or self.r_max_deg < 0:
            raise ValueError("motion bounds must be >= 0")
        if not 0 <= self.contrast_drift <= 1:
            raise ValueError("contrast_drift must be in [0, 1]")


def make_phantom(cfg: SimConfig) -> Volume:
    """Smooth ellipsoidal head with interior blobs; zero background.

    The blob layout is rejected and re-drawn (deterministically) until the
    phantom's spatial structure spans three dimensions, so rotations about
    any axis are observable.
    """
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    n = cfg.size
    sp = cfg.spacing_mm
    coords = (np.indices((n, n, n)).astype(float)
              - (n - 1) / 2.0) * sp  # world mm, centered
    x, y, z = coords

    half_extent = (n - 1) / 2.0 * sp
    axes = rng.uniform(0.35, 0.45, 3) * n * sp  # mm semi-axes scale
    rho2 = (x / axes[0]) ** 2 + (y / axes[1]) ** 2 + (z / axes[2]) ** 2
    # C1 profile that decays to zero at the ellipsoid boundary
    head = np.clip(1.0 - rho2, 0.0, None) ** 2

    for _ in range(64):
        n_blobs = int(rng.integers(3, 7))
        blob = np.zeros_like(head)
        for _ in range(n_blobs):
            center = rng.uniform(-0.55, 0.55, 3) * axes
            sigma = rng.uniform(0.14, 0.28) * np.mean(axes)
            amp = rng.uniform(0.5, 1.5)
            r2 = ((x - center[0]) ** 2 + (y - center[1]) ** 2
                  + (z - center[2]) ** 2) / sigma ** 2
            blob += amp * np.exp(-0.5 * r2)
        data = (0.5 * head + blob) * (rho2 < 1.0)
        vol = normalize_intensity(centered_volume(data, sp))
        if _spans_three_dims(vol):
            return vol
    return vol  # last candidate; in practice the loop exits early


def _spans_three_dims(vol: Volume, min_singular_mm: float = 1.0) -> bool:
    """Check the intensity distribution is genuinely 3-D asymmetric."""
    w = vol.data.ravel()
    total = w.sum()
    if total == 0:
        return False
    pts = vol.voxel_centers().reshape(-1, 3)
    mean = (w @ pts) / total
    centered = pts - mean
    cov = (centered * w[:, None]).T @ centered / total
    sv = np.sqrt(np.maximum(np.linalg.eigvalsh(cov), 0.0))
    return bool(sv.min() > min_singular_mm)


def _bounded_walk(rng, n_frames: int, bound: float, n_axes: int = 3) -> np.ndarray:
    """Smoothed cumulative random walk rescaled to hit the bound exactly."""
    steps = rng.normal(0.0, 1.0, (n_frames, n_axes))
    steps[0] = 0.0
    path = np.cumsum(steps, axis=0)
    kernel = np.ones(3) / 3.0
    path = np.stack([np.convolve(path[:, a], kernel, mode="same")
                     for a in range(n_axes)], axis=1)
    path -= path[0]
    peak = np.max(np.abs(path))
    if bound > 0 and peak > 0:
        path *= bound / peak
    elif bound == 0:
        path[:] = 0.0
    return path


def make_trajectory(cfg: SimConfig) -> list[RigidTransform]:
    """Length-T list of transforms about the grid center; element 0 identity."""
    rng = np.random.Generator(np.random.PCG64((cfg.seed, 1)))
    trans = _bounded_walk(rng, cfg.frames, cfg.t_max_mm)
    angles = _bounded_walk(rng, cfg.frames, cfg.r_max_deg)
    out = []
    for t in range(cfg.frames):
        r = rotation_from_euler(*angles[t], order="XYZ")
        out.append(RigidTransform(r, trans[t]))
    return out


def _random_svf(vol: Volume, magnitude_mm: float, rng) -> VelocityField:
    field = rng.normal(0.0, 1.0, vol.dims + (3,))
    sigma_vox = 2.5
    for c in range(3):
        field[..., c] = ndimage.gaussian_filter(field[..., c], sigma_vox,
                                                mode="constant", cval=0.0)
    peak = np.max(np.linalg.norm(field, axis=-1))
    if peak > 0:
        field *= magnitude_mm / peak
    return VelocityField(field, vol.spacing, vol.origin)


def pairwise_from_trajectory(traj: list[RigidTransform]) -> list[RigidTransform]:
    """Frame t -> t+1 transforms: q_t = traj[t+1] o traj[t]^-1."""
    return [compose(traj[t + 1], inverse(traj[t])) for t in range(len(traj) - 1)]


def synthesize(phantom: Volume, traj: list[RigidTransform],
               cfg: SimConfig) -> tuple[list[Volume], list[RigidTransform]]:
    """Moving frames plus the ground-truth pairwise transforms.

    Frame t is the phantom pulled back through traj[t]^-1, so
    resample_rigid(frame_t, traj[t]) re-aligns it to frame 0. Optional
    corruption: additive Gaussian noise, multiplicative contrast drift, and
    a per-frame random diffeomorphic distortion.
    """
    rng = np.random.Generator(np.random.PCG64((cfg.seed, 2)))
    n_frames = len(traj)
    frames = []
    for t, q in enumerate(traj):
        frame = resample_rigid(phantom, inverse(q))
        if cfg.distortion_mm > 0:
            svf = _random_svf(frame, cfg.distortion_mm, rng)
            frame = warp(frame, exponentiate(svf))
        data = frame.data
        if cfg.contrast_drift > 0:
            data = data * (1.0 + cfg.contrast_drift * np.sin(2 * np.pi * t / n_frames))
        if cfg.noise_sigma > 0:
            data = data + rng.normal(0.0, cfg.noise_sigma, data.shape)
        frames.append(Volume(data, frame.spacing, frame.origin))
    return frames, pairwise_from_trajectory(traj)


def simulate(cfg: SimConfig) -> tuple[list[Volume], list[RigidTransform],
                                      list[RigidTransform]]:
    """Full generation: (frames, trajectory, pairwise ground truth)."""
    phantom = make_phantom(cfg)
    traj = make_trajectory(cfg)
    frames, pairwise = synthesize(phantom, traj, cfg)
    return frames, traj, pairwise
