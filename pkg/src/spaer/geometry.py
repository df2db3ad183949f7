"""Exact SE(3) arithmetic: rigid transforms, composition, angular metrics, I/O.

Rotations are stored as 3x3 matrices; quaternions appear only at I/O
boundaries (trajectory CSV). Euler convention for I/O is intrinsic X-Y-Z in
degrees. All operations are pure and all values immutable.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-9


def _as_rotation(m) -> np.ndarray:
    r = np.asarray(m, dtype=float)
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {r.shape}")
    return r


def orthogonality_error(r: np.ndarray) -> float:
    return float(np.max(np.abs(r.T @ r - np.eye(3))))


def project_to_rotation(m: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar projection via SVD, det forced to +1)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation, acting as v -> rotation @ v + translation (mm)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = _as_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        # re-orthonormalize if accumulated drift exceeds the invariant
        if orthogonality_error(r) > ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            r = project_to_rotation(r)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform()

    def as_matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def apply(q: RigidTransform, v) -> np.ndarray:
    """Transform a point or an (N,3) array of points (mm)."""
    p = np.asarray(v, dtype=float)
    return p @ q.rotation.T + q.translation


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """a after b: apply(compose(a,b), v) == apply(a, apply(b, v))."""
    return RigidTransform(a.rotation @ b.rotation,
                          a.rotation @ b.translation + a.translation)


def inverse(q: RigidTransform) -> RigidTransform:
    return RigidTransform(q.rotation.T, -q.rotation.T @ q.translation)


def geodesic_angle(r1, r2) -> float:
    """Rotation distance in degrees, the angle of r1 r2^T.

    Uses atan2(sin, cos) with sin taken from the skew part and cos from the
    trace, which stays accurate near 0 and near 180 degrees (plain arccos of
    the trace loses ~1e-6 deg of precision near zero).
    """
    r1 = _as_rotation(r1)
    r2 = _as_rotation(r2)
    d = r1 @ r2.T
    c = (np.trace(d) - 1.0) / 2.0
    s = np.linalg.norm(d - d.T) / (2.0 * np.sqrt(2.0))
    return float(np.degrees(np.arctan2(s, c)))


def rot_x(deg: float) -> np.ndarray:
    a = np.radians(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def rot_y(deg: float) -> np.ndarray:
    a = np.radians(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def rot_z(deg: float) -> np.ndarray:
    a = np.radians(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


def rotation_from_euler(rx: float, ry: float, rz: float, order: str = "XYZ") -> np.ndarray:
    """Euler angles (degrees) to rotation matrix, intrinsic rotation order."""
    axes = {"X": rot_x, "Y": rot_y, "Z": rot_z}
    angles = {"X": rx, "Y": ry, "Z": rz}
    order = order.upper()
    if sorted(order) != ["X", "Y", "Z"]:
        raise ValueError(f"order must be a permutation of XYZ, got {order!r}")
    r = np.eye(3)
    for ax in order:  # intrinsic: each rotation about the already-rotated axis
        r = r @ axes[ax](angles[ax])
    return r


def quaternion_from_rotation(r) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0 from a rotation matrix."""
    r = _as_rotation(r)
    # Shepperd's method: pick the largest diagonal combination for stability
    tr = np.trace(r)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s,
                      (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s,
                      (r[1, 0] - r[0, 1]) / s])
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        q = np.array([(r[2, 1] - r[1, 2]) / s,
                      0.25 * s,
                      (r[0, 1] + r[1, 0]) / s,
                      (r[0, 2] + r[2, 0]) / s])
    elif r[1, 1] >= r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        q = np.array([(r[0, 2] - r[2, 0]) / s,
                      (r[0, 1] + r[1, 0]) / s,
                      0.25 * s,
                      (r[1, 2] + r[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
        q = np.array([(r[1, 0] - r[0, 1]) / s,
                      (r[0, 2] + r[2, 0]) / s,
                      (r[1, 2] + r[2, 1]) / s,
                      0.25 * s])
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def rotation_from_quaternion(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quaternion_roundtrip(q: RigidTransform) -> RigidTransform:
    """Matrix -> quaternion -> matrix; used to validate I/O conversions."""
    return RigidTransform(rotation_from_quaternion(quaternion_from_rotation(q.rotation)),
                          q.translation)


# ---------------------------------------------------------------------------
# Trajectory CSV: frame,qw,qx,qy,qz,tx_mm,ty_mm,tz_mm

CSV_VERSION_LINE = "# spaer-csv v1"
TRAJECTORY_HEADER = "frame,qw,qx,qy,qz,tx_mm,ty_mm,tz_mm"


def trajectory_to_csv(transforms: list[RigidTransform]) -> str:
    out = io.StringIO()
    out.write(CSV_VERSION_LINE + "\n")
    out.write(TRAJECTORY_HEADER + "\n")
    for i, q in enumerate(transforms):
        quat = quaternion_from_rotation(q.rotation)
        values = [*quat, *q.translation]
        out.write(f"{i}," + ",".join(repr(float(v)) for v in values) + "\n")
    return out.getvalue()


def trajectory_from_csv(text: str) -> list[RigidTransform]:
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("frame,"):
            if line != TRAJECTORY_HEADER:
                raise ValueError(f"unexpected trajectory header: {line!r}")
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise ValueError(f"bad trajectory row: {line!r}")
        rows.append((int(parts[0]), [float(x) for x in parts[1:]]))
    rows.sort(key=lambda r: r[0])
    return [RigidTransform(rotation_from_quaternion(v[:4]), v[4:]) for _, v in rows]
