"""Closed-form weighted rigid alignment of point clouds via 3x3 SVD.

The SVD is a dependency-free Jacobi eigen-decomposition of m^T m with a
polar correction; the alignment is the centered, mass-weighted Kabsch
solution with the det(R) = +1 constraint.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, NonFiniteInput
from .eqfeatures import PointCloud
from .geometry import RigidTransform

_JACOBI_SWEEPS = 30
_JACOBI_TOL = 1e-12


def _jacobi_eigh3(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric 3x3 via cyclic Jacobi rotations."""
    a = a.copy()
    v = np.eye(3)
    for _ in range(_JACOBI_SWEEPS):
        off = abs(a[0, 1]) + abs(a[0, 2]) + abs(a[1, 2])
        if off <= _JACOBI_TOL * max(1.0, np.trace(np.abs(a))):
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = a[p, q]
            if abs(apq) < 1e-300:
                continue
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
            if theta == 0.0:
                t = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rot = np.eye(3)
            rot[p, p] = rot[q, q] = c
            rot[p, q] = s
            rot[q, p] = -s
            a = rot.T @ a @ rot
            v = v @ rot
    return np.diag(a).copy(), v


def svd3(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD of a 3x3 matrix: m = U diag(s) V^T, s sorted descending."""
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"expected 3x3 matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteInput("svd3 requires finite entries")
    eigvals, v = _jacobi_eigh3(m.T @ m)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    v = v[:, order]
    s = np.sqrt(np.maximum(eigvals, 0.0))

    # u_i = m v_i / s_i where well-conditioned; complete small-s columns
    u = np.zeros((3, 3))
    scale = s[0] if s[0] > 0 else 1.0
    for i in range(3):
        col = m @ v[:, i]
        if s[i] > 1e-13 * scale:
            u[:, i] = col / s[i]
        else:
            u[:, i] = 0.0
    # Gram-Schmidt polish; fill degenerate columns to an orthonormal frame
    for i in range(3):
        for j in range(i):
            u[:, i] -= (u[:, j] @ u[:, i]) * u[:, j]
        n = np.linalg.norm(u[:, i])
        if n > 1e-13:
            u[:, i] /= n
        else:
            if i == 2:
                u[:, 2] = np.cross(u[:, 0], u[:, 1])
                n2 = np.linalg.norm(u[:, 2])
                u[:, 2] = u[:, 2] / n2 if n2 > 0 else np.eye(3)[:, 2]
            else:
                # pick any unit vector orthogonal to previous columns
                for cand in np.eye(3).T:
                    w = cand.copy()
                    for j in range(i):
                        w -= (u[:, j] @ w) * u[:, j]
                    nw = np.linalg.norm(w)
                    if nw > 0.5:
                        u[:, i] = w / nw
                        break
    return u, s, v


@dataclass(frozen=True)
class AlignmentResult:
    transform: RigidTransform
    residual_rms: float  # mm
    condition: float  # smallest / largest singular value of the covariance


def estimate_rigid(source: PointCloud, target: PointCloud) -> AlignmentResult:
    """Weighted least-squares rigid fit mapping source points onto target.

    Weights are min(source mass, target mass) per channel, normalized to
    sum 1, so low-confidence channels contribute little; scaling all masses
    leaves the result unchanged.
    """
    if source.points.shape != target.points.shape:
        raise DegenerateGeometry("clouds must have the same number of points")
    if not (np.all(np.isfinite(source.points)) and np.all(np.isfinite(target.points))
            and np.all(np.isfinite(source.masses)) and np.all(np.isfinite(target.masses))):
        raise NonFiniteInput("point clouds contain NaN/Inf")

    valid = source.valid & target.valid
    if int(valid.sum()) < 3:
        raise DegenerateGeometry(f"only {int(valid.sum())} valid point pairs (need >= 3)")
    s = source.points[valid]
    t = target.points[valid]
    w = np.minimum(source.masses[valid], target.masses[valid])
    w = w / w.sum()

    c_s = w @ s
    c_t = w @ t
    sc = s - c_s
    tc = t - c_t
    h = (sc * w[:, None]).T @ tc
    u, sig, v = svd3(h)
    if sig[0] > 0 and sig[1] < 1e-9 * sig[0] and sig[2] < 1e-9 * sig[0]:
        raise DegenerateGeometry("points are collinear: rotation about the axis "
                                 "is unobservable")
    d = np.sign(np.linalg.det(v @ u.T))
    r = v @ np.diag([1.0, 1.0, d]) @ u.T
    trans = c_t - r @ c_s

    residuals = (sc @ r.T) - tc
    rms = float(np.sqrt(w @ np.sum(residuals * residuals, axis=1)))
    condition = float(sig[2] / sig[0]) if sig[0] > 0 else 0.0
    return AlignmentResult(RigidTransform(r, trans), rms, condition)
