"""Data normalization: rotate and scale a virtual camera onto the face.

The virtual camera looks straight at the face center, keeps the real
camera's x-axis as far as possible (no head-pose based roll), and sits at a
fixed distance ``d_norm``. The face image is warped with
``H = K_n S R K_o^-1`` and gaze transforms as ``g_n = R g_o``.

``normalization_rotation_legacy`` is the older head-pose based variant,
kept only for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotate import GazeLabel
from .errors import DegenerateDirection, FaceAtOrigin, SingularHomography
from .geom import PinholeCamera, as_vec3

CAMERA_X = np.array([1.0, 0.0, 0.0])


def _face_axis(face_center) -> tuple[np.ndarray, float]:
    o = as_vec3(face_center)
    dist = np.linalg.norm(o)
    if dist <= 1e-6:
        raise FaceAtOrigin("face center coincides with the camera center")
    return o / dist, dist


def _rotation_from_z_and_x(z: np.ndarray, x_hint: np.ndarray) -> np.ndarray:
    y = np.cross(z, x_hint)
    ny = np.linalg.norm(y)
    if ny < 1e-6:
        raise DegenerateDirection("x reference axis is parallel to the face direction")
    y /= ny
    x = np.cross(y, z)
    return np.stack([x, y, z])


def normalization_rotation(face_center) -> np.ndarray:
    """Rows ``[x; y; z]`` with ``z`` toward the face and ``x`` from the camera."""
    z, _ = _face_axis(face_center)
    return _rotation_from_z_and_x(z, CAMERA_X)


def normalization_rotation_legacy(head_rotation, face_center) -> np.ndarray:
    """Head-pose based rotation: the x reference is the head's x-axis."""
    z, _ = _face_axis(face_center)
    head_x = np.asarray(head_rotation, dtype=np.float64)[:, 0]
    return _rotation_from_z_and_x(z, head_x)


def scale_matrix(face_center, d_norm: float) -> np.ndarray:
    _, dist = _face_axis(face_center)
    if d_norm <= 0:
        raise ValueError("d_norm must be positive")
    return np.diag([1.0, 1.0, d_norm / dist])


def warp_homography(K_o: PinholeCamera, K_n: PinholeCamera, S, R) -> np.ndarray:
    return K_n.K @ np.asarray(S) @ np.asarray(R) @ K_o.K_inv


def warp_with_homography(img: np.ndarray, H: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Inverse-map each output pixel through ``H^-1`` and sample bilinearly.

    Sources outside ``[0, W-1] x [0, H-1]`` give 0.
    """
    H = np.asarray(H, dtype=np.float64)
    if abs(np.linalg.det(H)) <= 1e-12:
        raise SingularHomography("homography is not invertible")
    img = np.asarray(img, dtype=np.float64)
    h_in, w_in = img.shape
    h_out, w_out = out_shape
    Hinv = np.linalg.inv(H)
    v, u = np.mgrid[0:h_out, 0:w_out].astype(np.float64)
    pts = np.stack([u.ravel(), v.ravel(), np.ones(u.size)])
    src = Hinv @ pts
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = src[0] / src[2]
        ys = src[1] / src[2]
    inside = (src[2] != 0) & (xs >= 0) & (xs <= w_in - 1) & (ys >= 0) & (ys <= h_in - 1)
    out = np.zeros(u.size)
    xs, ys = xs[inside], ys[inside]
    x0 = np.minimum(np.floor(xs).astype(int), w_in - 2) if w_in > 1 else np.zeros(xs.shape, int)
    y0 = np.minimum(np.floor(ys).astype(int), h_in - 2) if h_in > 1 else np.zeros(ys.shape, int)
    fx = xs - x0
    fy = ys - y0
    x1 = np.minimum(x0 + 1, w_in - 1)
    y1 = np.minimum(y0 + 1, h_in - 1)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    out[inside] = top * (1 - fy) + bottom * fy
    return out.reshape(h_out, w_out)


def warp_image(img, K_o: PinholeCamera, K_n: PinholeCamera, S, R) -> np.ndarray:
    H = warp_homography(K_o, K_n, S, R)
    return warp_with_homography(img, H, (K_n.height, K_n.width))


def transform_gaze(R, g_o: GazeLabel) -> GazeLabel:
    return GazeLabel.from_vector(np.asarray(R) @ g_o.direction)


def inverse_transform_gaze(R, g_n: GazeLabel) -> GazeLabel:
    return GazeLabel.from_vector(np.asarray(R).T @ g_n.direction)


@dataclass(frozen=True)
class NormalizationResult:
    R: np.ndarray
    S: np.ndarray
    H: np.ndarray
    camera: PinholeCamera
    g_n: GazeLabel

    def to_dict(self) -> dict:
        return {
            "R": self.R.tolist(),
            "S": self.S.tolist(),
            "H": self.H.tolist(),
            "camera": self.camera.to_dict(),
            "gaze": self.g_n.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> NormalizationResult:
        return cls(
            np.array(d["R"], dtype=np.float64),
            np.array(d["S"], dtype=np.float64),
            np.array(d["H"], dtype=np.float64),
            PinholeCamera.from_dict(d["camera"]),
            GazeLabel.from_dict(d["gaze"]),
        )


def virtual_camera(fx: float = 960.0, fy: float = 960.0, width: int = 224, height: int = 224) -> PinholeCamera:
    return PinholeCamera(fx, fy, width / 2.0, height / 2.0, width, height)


def normalize_sample(
    face_center,
    g_o: GazeLabel,
    K_o: PinholeCamera,
    K_n: PinholeCamera,
    d_norm: float = 0.6,
    method: str = "ours",
    head_rotation=None,
) -> NormalizationResult:
    if method == "ours":
        R = normalization_rotation(face_center)
    elif method == "legacy":
        if head_rotation is None:
            raise ValueError("legacy normalization needs the head rotation")
        R = normalization_rotation_legacy(head_rotation, face_center)
    else:
        raise ValueError(f"unknown normalization method {method!r}")
    S = scale_matrix(face_center, d_norm)
    return NormalizationResult(R, S, warp_homography(K_o, K_n, S, R), K_n, transform_gaze(R, g_o))


def normalize_record(
    record, image: np.ndarray, K_o: PinholeCamera, K_n: PinholeCamera, d_norm: float = 0.6, method: str = "ours"
) -> tuple[np.ndarray, NormalizationResult]:
    """Normalize one sample: returns the warped raster and the transform block."""
    norm = normalize_sample(record.face_center, record.gaze, K_o, K_n, d_norm, method, record.head_rotation)
    return warp_with_homography(image, norm.H, (K_n.height, K_n.width)), norm
