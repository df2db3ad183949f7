"""Stationary-velocity-field diffeomorphic residual correction.

A velocity field is exponentiated by scaling and squaring into a
displacement field; variational registration descends an SSD + gradient
penalty energy with demons-style smoothed updates and a backtracking line
search, so the recorded energy trace is non-increasing.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import GridMismatch, NonFiniteEnergy
from .volume import Volume, ssd, trilinear_sample

BOUNDARY_MARGIN = 2  # voxels forced to zero in velocity fields


def _zero_margin(field: np.ndarray, margin: int = BOUNDARY_MARGIN) -> np.ndarray:
    out = field.copy()
    for axis in range(3):
        sl = [slice(None)] * 4
        sl[axis] = slice(0, margin)
        out[tuple(sl)] = 0.0
        sl[axis] = slice(-margin, None)
        out[tuple(sl)] = 0.0
    return out


@dataclass(frozen=True)
class VelocityField:
    """Per-voxel 3-vector (mm); zero on a 2-voxel boundary margin."""

    vectors: np.ndarray  # (M1, M2, M3, 3)
    spacing: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim != 4 or v.shape[-1] != 3:
            raise ValueError(f"vectors must be (M1,M2,M3,3), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("velocity field must be finite")
        v = _zero_margin(v)
        sp = np.asarray(self.spacing, dtype=float).reshape(3)
        og = np.asarray(self.origin, dtype=float).reshape(3)
        for a in (v, sp, og):
            a.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "spacing", sp)
        object.__setattr__(self, "origin", og)

    @staticmethod
    def zeros_like(vol: Volume) -> "VelocityField":
        return VelocityField(np.zeros(vol.dims + (3,)), vol.spacing, vol.origin)

    def scaled(self, factor: float) -> "VelocityField":
        return VelocityField(self.vectors * factor, self.spacing, self.origin)


@dataclass(frozen=True)
class DeformationField:
    """Per-voxel displacement (mm): the map is p -> p + displacement(p)."""

    displacement: np.ndarray  # (M1, M2, M3, 3)
    spacing: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.displacement, dtype=float)
        if d.ndim != 4 or d.shape[-1] != 3:
            raise ValueError(f"displacement must be (M1,M2,M3,3), got {d.shape}")
        sp = np.asarray(self.spacing, dtype=float).reshape(3)
        og = np.asarray(self.origin, dtype=float).reshape(3)
        for a in (d, sp, og):
            a.setflags(write=False)
        object.__setattr__(self, "displacement", d)
        object.__setattr__(self, "spacing", sp)
        object.__setattr__(self, "origin", og)

    @property
    def dims(self):
        return self.displacement.shape[:3]

    def same_grid(self, other) -> bool:
        return (self.dims == other.dims if hasattr(other, "dims") else False) \
            and np.array_equal(self.spacing, other.spacing) \
            and np.array_equal(self.origin, other.origin)


def _component_volumes(disp: np.ndarray, spacing, origin) -> list[Volume]:
    return [Volume(disp[..., c], spacing, origin) for c in range(3)]


def _interp_displacement(phi: DeformationField, points: np.ndarray) -> np.ndarray:
    """Trilinear displacement lookup at world points (zero outside)."""
    comps = _component_volumes(phi.displacement, phi.spacing, phi.origin)
    return np.stack([trilinear_sample(c, points) for c in comps], axis=-1)


def _grid_points(phi: DeformationField) -> np.ndarray:
    idx = np.indices(phi.dims).astype(float)
    return np.stack([idx[a] * phi.spacing[a] + phi.origin[a] for a in range(3)],
                    axis=-1).reshape(-1, 3)


def compose_deformations(a: DeformationField, b: DeformationField) -> DeformationField:
    """(a o b)(p) = p + b(p) + a(p + b(p)); identity is the neutral element."""
    if a.dims != b.dims or not np.array_equal(a.spacing, b.spacing) \
            or not np.array_equal(a.origin, b.origin):
        raise GridMismatch("deformation fields on different grids")
    pts = _grid_points(b)
    db = b.displacement.reshape(-1, 3)
    da = _interp_displacement(a, pts + db)
    return DeformationField((db + da).reshape(b.displacement.shape),
                            b.spacing, b.origin)


def exponentiate(v: VelocityField, steps: int = 6) -> DeformationField:
    """Scaling and squaring: (id + v / 2^steps) self-composed 2^steps times."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    phi = DeformationField(v.vectors / (2 ** steps), v.spacing, v.origin)
    if not np.any(v.vectors):
        return phi  # exp(0) = identity exactly
    for _ in range(steps):
        phi = compose_deformations(phi, phi)
    return phi


def warp(vol: Volume, phi: DeformationField) -> Volume:
    """Pull-back warp: out(p) = vol(p + phi(p))."""
    if vol.dims != phi.dims or not np.array_equal(vol.spacing, phi.spacing) \
            or not np.array_equal(vol.origin, phi.origin):
        raise GridMismatch("volume and field on different grids")
    pts = _grid_points(phi) + phi.displacement.reshape(-1, 3)
    return Volume(trilinear_sample(vol, pts).reshape(vol.dims),
                  vol.spacing, vol.origin)


def jacobian_determinant(phi: DeformationField) -> np.ndarray:
    """det of the Jacobian of p -> p + phi(p), per voxel."""
    jac = np.zeros(phi.dims + (3, 3))
    for comp in range(3):
        grads = np.gradient(phi.displacement[..., comp], *phi.spacing)
        for axis in range(3):
            jac[..., comp, axis] = grads[axis]
        jac[..., comp, comp] += 1.0
    return np.linalg.det(jac)


@dataclass(frozen=True)
class RegistrationConfig:
    iterations: int = 100
    step_size: float = 1.0  # mm, initial update magnitude
    smooth_sigma_mm: float = 4.5
    reg_weight: float = 0.1
    exp_steps: int = 6
    backtrack_max: int = 10


def _reg_energy(vectors: np.ndarray, spacing) -> float:
    total = 0.0
    for comp in range(3):
        for axis, g in enumerate(np.gradient(vectors[..., comp], *spacing)):
            total += float(np.mean(g * g))
    return total


def register_svf(moving: Volume, fixed: Volume,
                 cfg: RegistrationConfig = RegistrationConfig()
                 ) -> tuple[VelocityField, list[float]]:
    """Variational SVF registration of moving onto fixed.

    Returns the velocity field and the (non-increasing) energy trace.
    """
    if not moving.same_grid(fixed):
        raise GridMismatch("moving and fixed on different grids")
    spacing = moving.spacing
    sigma_vox = cfg.smooth_sigma_mm / spacing
    v = VelocityField.zeros_like(moving)

    def energy(vel: VelocityField) -> float:
        warped = warp(moving, exponentiate(vel, cfg.exp_steps))
        e = ssd(warped, fixed) + cfg.reg_weight * _reg_energy(vel.vectors, spacing)
        if not np.isfinite(e):
            raise NonFiniteEnergy(f"registration energy became {e}")
        return e

    step = cfg.step_size
    current = energy(v)
    trace = [current]
    for _ in range(cfg.iterations):
        warped = warp(moving, exponentiate(v, cfg.exp_steps))
        residual = warped.data - fixed.data
        grads = np.gradient(warped.data, *spacing)
        force = np.stack([residual * g for g in grads], axis=-1)
        # regularizer gradient is -w * laplacian(v) per component (up to the
        # shared mean normalization, which the peak rescaling absorbs)
        for comp in range(3):
            lap = np.zeros(moving.dims)
            for axis in range(3):
                lap += ndimage.correlate1d(v.vectors[..., comp],
                                           np.array([1.0, -2.0, 1.0]) / spacing[axis] ** 2,
                                           axis=axis, mode="constant", cval=0.0)
            force[..., comp] -= cfg.reg_weight * lap
        for comp in range(3):
            force[..., comp] = ndimage.gaussian_filter(force[..., comp], sigma_vox,
                                                       mode="constant", cval=0.0)
        peak = float(np.max(np.abs(force)))
        if peak == 0.0:
            break
        direction = -force / peak  # largest update = `step` mm

        accepted = False
        trial_step = step
        for _ in range(cfg.backtrack_max + 1):
            trial = VelocityField(v.vectors + trial_step * direction,
                                  v.spacing, v.origin)
            e = energy(trial)
            if e < current:
                v = trial
                current = e
                step = min(trial_step * 2.0, cfg.step_size)
                accepted = True
                break
            trial_step *= 0.5
        trace.append(current)
        if not accepted:
            break
    return v, trace


# ---------------------------------------------------------------------------
# File I/O: raw float32 with 3 interleaved components per voxel + sidecar JSON

def save_field(field_obj, path):
    path = Path(path)
    if path.suffix != ".vol":
        path = path.with_suffix(".vol")
    if isinstance(field_obj, VelocityField):
        data, field_type = field_obj.vectors, "velocity"
    else:
        data, field_type = field_obj.displacement, "deformation"
    data.astype("<f4").reshape(-1, 3, order="F").ravel().tofile(path)
    sidecar = {
        "field_type": field_type,
        "dims": list(data.shape[:3]),
        "spacing_mm": field_obj.spacing.tolist(),
        "origin_mm": field_obj.origin.tolist(),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_field(path):
    path = Path(path)
    if path.suffix != ".vol":
        path = path.with_suffix(".vol")
    meta = json.loads(path.with_suffix(".json").read_text())
    dims = tuple(meta["dims"])
    raw = np.fromfile(path, dtype="<f4").astype(float)
    data = raw.reshape(-1, 3).reshape(dims + (3,), order="F")
    cls = VelocityField if meta["field_type"] == "velocity" else DeformationField
    return cls(data, meta["spacing_mm"], meta["origin_mm"])
