"""Rigid-body geometry, pinhole projection, rays and planes.

Rotations are plain ``(3, 3)`` float64 arrays. Lengths are meters, angles
are degrees wherever they cross the public API and radians internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, DataError, NotUnit

ORTHO_TOL = 1e-10
UNIT_TOL = 1e-12


def as_vec3(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,):
        raise DataError(f"expected a 3-vector, got shape {v.shape}")
    return v


def is_rotation(R, tol: float = ORTHO_TOL) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    if np.max(np.abs(R.T @ R - np.eye(3))) >= tol:
        return False
    return abs(np.linalg.det(R) - 1.0) < tol


def check_rotation(R, tol: float = ORTHO_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if not is_rotation(R, tol):
        raise DataError("matrix is not a proper rotation")
    return R


def skew(w) -> np.ndarray:
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def rodrigues(w) -> np.ndarray:
    """Rotation matrix for the rotation vector ``w`` (axis * angle, radians)."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    K = skew(w)
    if theta < 1e-8:
        # second-order series keeps the result orthonormal to f64 precision
        return np.eye(3) + K + 0.5 * K @ K
    K = K / theta
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def axis_angle(axis, angle_deg: float) -> np.ndarray:
    axis = as_vec3(axis)
    axis = axis / np.linalg.norm(axis)
    return rodrigues(axis * np.deg2rad(angle_deg))


def orthonormalize(M) -> np.ndarray:
    """Closest rotation to ``M`` in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=np.float64))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    # uniform on SO(3) via a normalized gaussian quaternion
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_geodesic_deg(a, b) -> float:
    """Angle of the relative rotation ``a^T b`` in degrees, in [0, 180].

    Equal to ``arccos((trace(a^T b) - 1) / 2)``; evaluated through atan2 of
    the antisymmetric and trace parts so that angles near zero keep full
    relative precision (arccos loses about half the digits there).
    """
    M = np.asarray(a, dtype=np.float64).T @ np.asarray(b, dtype=np.float64)
    cos = (np.trace(M) - 1.0) / 2.0
    sin = 0.5 * np.linalg.norm([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    return float(np.clip(np.rad2deg(np.arctan2(sin, cos)), 0.0, 180.0))


@dataclass(frozen=True)
class RigidTransform:
    """``p -> R p + t``."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "R", check_rotation(self.R))
        object.__setattr__(self, "t", as_vec3(self.t).copy())

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    def apply(self, p) -> np.ndarray:
        """Transform a point ``(3,)`` or a stack of points ``(N, 3)``."""
        p = np.asarray(p, dtype=np.float64)
        return p @ self.R.T + self.t

    __call__ = apply

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose_rigid(self, other)

    def inverse(self) -> RigidTransform:
        return invert_rigid(self)

    def to_dict(self) -> dict:
        return {"R": self.R.tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> RigidTransform:
        return cls(np.array(d["R"], dtype=np.float64), np.array(d["t"], dtype=np.float64))


def compose_rigid(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``(a o b)(p) = a.R (b.R p + b.t) + a.t``."""
    return RigidTransform(orthonormalize(a.R @ b.R), a.R @ b.t + a.t)


def invert_rigid(a: RigidTransform) -> RigidTransform:
    return RigidTransform(a.R.T.copy(), -a.R.T @ a.t)


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DataError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DataError("principal point outside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def project(self, p) -> np.ndarray:
        return project_point(self, p)

    def unproject(self, uv, depth) -> np.ndarray:
        return unproject_point(self, uv, depth)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> PinholeCamera:
        extra = set(d) - {"fx", "fy", "cx", "cy", "width", "height"}
        if extra:
            raise DataError(f"unknown camera keys: {sorted(extra)}")
        return cls(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
            int(d["width"]), int(d["height"]),
        )


def project_point(cam: PinholeCamera, p) -> np.ndarray:
    """Pixel coordinates of camera-frame point(s) ``p``; shape ``(2,)`` or ``(N, 2)``."""
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 1e-9):
        raise BehindCamera("point is not in front of the camera")
    u = cam.fx * p[..., 0] / z + cam.cx
    v = cam.fy * p[..., 1] / z + cam.cy
    return np.stack([u, v], axis=-1)


def unproject_point(cam: PinholeCamera, uv, depth) -> np.ndarray:
    uv = np.asarray(uv, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    x = (uv[..., 0] - cam.cx) / cam.fx * depth
    y = (uv[..., 1] - cam.cy) / cam.fy * depth
    return np.stack([x, y, depth * np.ones_like(x)], axis=-1)


def normalize(v, tol: float = 0.0) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n <= tol):
        raise DataError("cannot normalize a zero-length vector")
    return v / n


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", as_vec3(self.origin).copy())
        d = as_vec3(self.direction)
        if abs(np.linalg.norm(d) - 1.0) > UNIT_TOL:
            raise NotUnit("ray direction must be unit length")
        object.__setattr__(self, "direction", d.copy())

    def at(self, s: float) -> np.ndarray:
        return self.origin + s * self.direction


@dataclass(frozen=True)
class Plane:
    """The set ``{p : p . normal = offset}``."""

    normal: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        n = as_vec3(self.normal)
        if abs(np.linalg.norm(n) - 1.0) > UNIT_TOL:
            raise NotUnit("plane normal must be unit length")
        object.__setattr__(self, "normal", n.copy())

    def signed_distance(self, p) -> np.ndarray:
        return np.asarray(p, dtype=np.float64) @ self.normal - self.offset
