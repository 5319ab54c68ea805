"""Gaze-ray intersections with the three coordinate planes, and their encoding.

The planes ``x = 0``, ``y = 0`` and ``z = 0`` of the DMS camera frame stand
in for the cabin surfaces. A ray parallel to a plane (``|g . n| <= 1e-9``)
has no hit there; the plane is flagged invalid and encoded as the point
``(0, 0, 0)`` so the feature length stays fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotUnit

PARALLEL_TOL = 1e-9
PLANE_NORMALS = np.eye(3)


@dataclass(frozen=True)
class TriPlaneHit:
    points: np.ndarray  # (3, 3): row k is the hit on the plane with normal e_k
    valid: np.ndarray  # (3,) bool
    ray_param: np.ndarray  # (3,) signed distance along the ray, 0 where invalid

    def to_dict(self) -> dict:
        return {
            "points": [p.tolist() if v else None for p, v in zip(self.points, self.valid)],
            "ray_param": self.ray_param.tolist(),
        }


def intersect_triplane_batch(o, g, forward_only: bool = False):
    """Vectorised hits for rays ``o + s g``; ``o``, ``g`` of shape ``(N, 3)``.

    Returns ``points (N, 3, 3)``, ``valid (N, 3)`` and ``s (N, 3)``. With
    ``forward_only`` hits behind the origin (``s < 0``) count as invalid.
    """
    o = np.asarray(o, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    # plane k has normal e_k, so o . n = o[k] and g . n = g[k]
    valid = np.abs(g) > PARALLEL_TOL
    safe = np.where(valid, g, 1.0)
    s = np.where(valid, -o / safe, 0.0)
    if forward_only:
        valid = valid & (s >= 0)
        s = np.where(valid, s, 0.0)
    points = o[:, None, :] + s[:, :, None] * g[:, None, :]
    k = np.arange(3)
    # the hit lies on its plane by construction; pin the coordinate exactly
    points[:, k, k] = 0.0
    points = np.where(valid[:, :, None], points, 0.0)
    return points, valid, s


def intersect_triplane(o, g_o, forward_only: bool = False) -> TriPlaneHit:
    g = np.asarray(g_o, dtype=np.float64)
    if abs(np.linalg.norm(g) - 1.0) > 1e-9:
        raise NotUnit("gaze direction must be unit length")
    points, valid, s = intersect_triplane_batch(np.asarray(o, dtype=np.float64)[None], g[None], forward_only)
    return TriPlaneHit(points[0], valid[0], s[0])


def positional_encoding(points, bands: int = 8, scale: float = 2.0) -> np.ndarray:
    """``[sin(2^j pi c / scale), cos(2^j pi c / scale)]`` for each coordinate.

    ``points`` is ``(..., k, 3)``; the result is ``(..., k * 3 * 2 * bands)``
    ordered point-major, then coordinate, then (sin block, cos block) over j.
    """
    if bands < 1 or scale <= 0:
        raise ValueError("bands must be >= 1 and scale > 0")
    p = np.asarray(points, dtype=np.float64)
    freqs = (2.0 ** np.arange(bands)) * np.pi / scale
    ang = p[..., None] * freqs  # (..., k, 3, L)
    enc = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)  # (..., k, 3, 2L)
    return enc.reshape(*p.shape[:-2], -1)


def encode_hits(points, valid, bands: int = 8, scale: float = 2.0) -> np.ndarray:
    """Per-plane token features: encoding of the hit plus a validity flag.

    ``points (N, 3, 3)``, ``valid (N, 3)`` -> ``(N, 3, 3 * 2 * bands + 1)``.
    """
    pts = np.asarray(points, dtype=np.float64)
    enc = positional_encoding(pts[..., None, :], bands, scale)  # (N, 3, 6L)
    return np.concatenate([enc, np.asarray(valid, dtype=np.float64)[..., None]], axis=-1)


def triplane_features(o, g_o, bands: int = 8, scale: float = 2.0, forward_only: bool = False) -> np.ndarray:
    """Flat feature vector: three encoded hits followed by three flags (147 for L=8)."""
    hit = intersect_triplane(o, g_o, forward_only)
    return np.concatenate([positional_encoding(hit.points, bands, scale), hit.valid.astype(np.float64)])
