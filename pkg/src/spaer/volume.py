"""3D scalar grids in world (mm) coordinates, resampling, and image distances.

Resampling follows the pull-back convention: the resampled volume at world
point p holds the input sampled at q(p). Out-of-grid samples are zero.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridMismatch
from .geometry import RigidTransform, apply


@dataclass(frozen=True)
class Volume:
    """A dims-shaped scalar grid; data[i,j,k] sits at origin + (i,j,k)*spacing."""

    data: np.ndarray
    spacing: np.ndarray = field(default_factory=lambda: np.full(3, 3.0))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.ndim != 3:
            raise ValueError(f"data must be 3-D, got shape {d.shape}")
        sp = np.asarray(self.spacing, dtype=float).reshape(3)
        if np.any(sp <= 0):
            raise ValueError("spacing components must be > 0")
        og = np.asarray(self.origin, dtype=float).reshape(3)
        for a in (d, sp, og):
            a.setflags(write=False)
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "spacing", sp)
        object.__setattr__(self, "origin", og)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def same_grid(self, other: "Volume") -> bool:
        return (self.dims == other.dims
                and np.array_equal(self.spacing, other.spacing)
                and np.array_equal(self.origin, other.origin))

    def voxel_centers(self) -> np.ndarray:
        """(M1,M2,M3,3) world coordinates of every voxel center."""
        idx = np.indices(self.dims).astype(float)
        return np.stack([idx[a] * self.spacing[a] + self.origin[a] for a in range(3)],
                        axis=-1)

    def center(self) -> np.ndarray:
        """World coordinate of the grid center."""
        return self.origin + (np.array(self.dims) - 1) / 2.0 * self.spacing


def centered_volume(data, spacing=3.0) -> Volume:
    """Volume whose world origin sits at the grid center."""
    data = np.asarray(data, dtype=float)
    sp = np.broadcast_to(np.asarray(spacing, dtype=float), (3,)).copy()
    origin = -(np.array(data.shape) - 1) / 2.0 * sp
    return Volume(data, sp, origin)


def _require_same_grid(a: Volume, b: Volume):
    if not a.same_grid(b):
        raise GridMismatch(f"grids differ: {a.dims}/{a.spacing}/{a.origin} "
                           f"vs {b.dims}/{b.spacing}/{b.origin}")


def trilinear_sample(vol: Volume, p) -> np.ndarray | float:
    """Trilinear interpolation at world point(s) p; zero outside the grid.

    p may be a single 3-vector or an (..., 3) array.
    """
    pts = np.asarray(p, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    g = (pts - vol.origin) / vol.spacing  # fractional voxel coords
    i0 = np.floor(g).astype(np.int64)
    f = g - i0

    dims = np.array(vol.dims)
    out = np.zeros(g.shape[:-1])
    data = vol.data
    for corner in range(8):
        off = np.array([(corner >> a) & 1 for a in range(3)])
        idx = i0 + off
        w = np.prod(np.where(off, f, 1.0 - f), axis=-1)
        valid = np.all((idx >= 0) & (idx < dims), axis=-1)
        ci = np.where(valid[..., None], idx, 0)
        vals = data[ci[..., 0], ci[..., 1], ci[..., 2]]
        out += w * np.where(valid, vals, 0.0)
    return float(out[0]) if single else out


def resample_rigid(vol: Volume, q: RigidTransform) -> Volume:
    """Pull-back resample onto the same grid: out(p) = vol(q(p))."""
    pts = vol.voxel_centers().reshape(-1, 3)
    sampled = trilinear_sample(vol, apply(q, pts))
    return Volume(sampled.reshape(vol.dims), vol.spacing, vol.origin)


def normalize_intensity(vol: Volume) -> Volume:
    """Linear rescale to [0,1]; constant volumes map to zeros."""
    lo = float(vol.data.min())
    hi = float(vol.data.max())
    if hi == lo:
        return Volume(np.zeros(vol.dims), vol.spacing, vol.origin)
    return Volume((vol.data - lo) / (hi - lo), vol.spacing, vol.origin)


def ssd(a: Volume, b: Volume) -> float:
    """Mean squared voxel difference."""
    _require_same_grid(a, b)
    diff = a.data - b.data
    return float(np.mean(diff * diff))


def ncc(a: Volume, b: Volume) -> float:
    """Pearson correlation of voxel values, in [-1, 1]."""
    _require_same_grid(a, b)
    x = a.data.ravel() - a.data.mean()
    y = b.data.ravel() - b.data.mean()
    denom = np.sqrt(np.sum(x * x) * np.sum(y * y))
    if denom == 0:
        return 0.0
    return float(np.clip(np.sum(x * y) / denom, -1.0, 1.0))


def dice(a: Volume, b: Volume, threshold_fraction: float = 0.5) -> float:
    """Overlap of masks thresholded at threshold_fraction * max per volume."""
    _require_same_grid(a, b)
    if not 0 < threshold_fraction < 1:
        raise ValueError("threshold_fraction must be in (0, 1)")
    ma = a.data > threshold_fraction * a.data.max()
    mb = b.data > threshold_fraction * b.data.max()
    total = int(ma.sum()) + int(mb.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(ma, mb).sum()) / total


# ---------------------------------------------------------------------------
# File I/O: <name>.vol raw little-endian float32, x-fastest; <name>.json sidecar

def save_volume(vol: Volume, path: str | Path):
    path = Path(path)
    if path.suffix != ".vol":
        path = path.with_suffix(".vol")
    vol.data.astype("<f4").ravel(order="F").tofile(path)
    sidecar = {
        "dims": list(vol.dims),
        "spacing_mm": vol.spacing.tolist(),
        "origin_mm": vol.origin.tolist(),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_volume(path: str | Path) -> Volume:
    path = Path(path)
    if path.suffix != ".vol":
        path = path.with_suffix(".vol")
    meta = json.loads(path.with_suffix(".json").read_text())
    dims = tuple(meta["dims"])
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != int(np.prod(dims)):
        raise ValueError(f"{path}: expected {np.prod(dims)} voxels, got {raw.size}")
    data = raw.astype(float).reshape(dims, order="F")
    return Volume(data, meta["spacing_mm"], meta["origin_mm"])


def save_sequence(frames: list[Volume], outdir: str | Path) -> Path:
    """Write frames plus a manifest listing them in temporal order."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    names = []
    for t, frame in enumerate(frames):
        name = f"frame_{t:04d}.vol"
        save_volume(frame, outdir / name)
        names.append(name)
    (outdir / "manifest.json").write_text(
        json.dumps({"frames": names}, indent=2) + "\n")
    return outdir


def load_sequence(indir: str | Path) -> list[Volume]:
    indir = Path(indir)
    manifest = json.loads((indir / "manifest.json").read_text())
    return [load_volume(indir / name) for name in manifest["frames"]]
