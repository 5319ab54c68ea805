"""Planar chessboard pose estimation and transparent-chessboard extrinsics.

The DMS camera and the depth camera look at opposite faces of one
transparent board. Each camera's board pose is estimated independently;
the two board frames are related by a fixed flip, and chaining

    p_dms = R_dms (R_chess R_depth^-1 (p_depth - t_depth) + t_chess) + t_dms

gives the depth -> DMS transform ``{R_rot, t_rot}``.

Board frame convention: corners lie in the ``z = 0`` plane at
``(col * square, row * square)``; ``z = x cross y``. The back face of the
board, as seen by the second camera, has ``x`` unchanged and ``y``, ``z``
reversed, with its origin ``d`` (board thickness) behind the front face.
In mirror mode the second camera's image is left-right flipped, so ``x``
is reversed instead of ``y``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DegenerateConfiguration, NoConvergence
from .geom import PinholeCamera, RigidTransform, orthonormalize, rodrigues, skew

logger = logging.getLogger(__name__)

MAX_ITER = 50
STEP_TOL = 1e-12
MAX_HALVINGS = 8


@dataclass(frozen=True)
class BoardSpec:
    rows: int = 6
    cols: int = 9
    square_size: float = 0.04
    thickness: float = 0.003

    def __post_init__(self):
        if self.rows < 3 or self.cols < 3:
            raise DataError("a board needs at least 3x3 inner corners")
        if self.square_size <= 0 or self.thickness < 0:
            raise DataError("square size must be positive and thickness non-negative")

    def corners(self) -> np.ndarray:
        """Inner-corner board coordinates, row-major, shape ``(rows*cols, 2)``."""
        r, c = np.meshgrid(np.arange(self.rows), np.arange(self.cols), indexing="ij")
        return np.stack([c.ravel(), r.ravel()], axis=1) * self.square_size

    def back_corners(self, mirror: bool = False) -> np.ndarray:
        """The same physical corners in the back-face frame."""
        xy = self.corners()
        return xy * ([-1.0, 1.0] if mirror else [1.0, -1.0])


@dataclass
class CornerObservations:
    board_xy: np.ndarray
    pixels: np.ndarray

    def __post_init__(self):
        self.board_xy = np.asarray(self.board_xy, dtype=np.float64).reshape(-1, 2)
        self.pixels = np.asarray(self.pixels, dtype=np.float64).reshape(-1, 2)
        if len(self.board_xy) != len(self.pixels):
            raise DataError("board points and pixels differ in count")

    def __len__(self):
        return len(self.board_xy)

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for xy, uv in zip(self.board_xy, self.pixels):
                fh.write(json.dumps({"board_xy": xy.tolist(), "pixel": uv.tolist()}) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> CornerObservations:
        xy, uv = [], []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            if line.strip():
                try:
                    d = json.loads(line)
                    xy.append(d["board_xy"])
                    uv.append(d["pixel"])
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise DataError(f"{path}:{lineno}: bad corner observation ({exc})") from None
        return cls(np.array(xy), np.array(uv))


@dataclass(frozen=True)
class CrossCameraCalibration:
    """Maps depth-camera coordinates into the DMS camera frame."""

    rot: RigidTransform
    residual_px: float = 0.0

    @property
    def R_rot(self) -> np.ndarray:
        return self.rot.R

    @property
    def t_rot(self) -> np.ndarray:
        return self.rot.t

    def to_dict(self) -> dict:
        return {"R_rot": self.R_rot.tolist(), "t_rot": self.t_rot.tolist(), "residual_px": self.residual_px}

    @classmethod
    def from_dict(cls, d: dict) -> CrossCameraCalibration:
        try:
            rot = RigidTransform(np.array(d["R_rot"], dtype=np.float64), np.array(d["t_rot"], dtype=np.float64))
        except KeyError as exc:
            raise DataError(f"calibration file missing {exc}") from None
        return cls(rot, float(d.get("residual_px", 0.0)))


@dataclass
class PoseResult:
    pose: RigidTransform
    rmse_px: float
    iterations: int
    rmse_history: list = field(default_factory=list)


def _hartley(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    mean_dist = np.linalg.norm(pts - c, axis=1).mean()
    if mean_dist <= 0:
        raise DegenerateConfiguration("all points coincide")
    s = np.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def homography_dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Normalized DLT homography with ``dst ~ H src``."""
    if len(src) < 4:
        raise DegenerateConfiguration("a homography needs at least 4 correspondences")
    Ts, Td = _hartley(src), _hartley(dst)
    s = src @ Ts[:2, :2].T + Ts[:2, 2]
    d = dst @ Td[:2, :2].T + Td[:2, 2]
    n = len(s)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:2] = s
    A[0::2, 2] = 1.0
    A[0::2, 6:8] = -d[:, :1] * s
    A[0::2, 8] = -d[:, 0]
    A[1::2, 3:5] = s
    A[1::2, 5] = 1.0
    A[1::2, 6:8] = -d[:, 1:] * s
    A[1::2, 8] = -d[:, 1]
    _, sv, Vt = np.linalg.svd(A)
    # a unique solution needs an 8-dimensional row space
    if sv[7] < 1e-10 * sv[0]:
        raise DegenerateConfiguration("rank-deficient DLT system")
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    return H / np.linalg.norm(H)


def _check_board_points(xy: np.ndarray) -> None:
    if len(xy) < 4:
        raise DegenerateConfiguration("at least 4 correspondences are required")
    centered = xy - xy.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0 or sv[1] < 1e-9 * sv[0]:
        raise DegenerateConfiguration("board points are collinear")


def _initial_pose(H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # H maps board (x, y, 1) to normalized image coordinates: H ~ [r1 r2 t]
    h1, h2, h3 = H[:, 0], H[:, 1], H[:, 2]
    lam = 2.0 / (np.linalg.norm(h1) + np.linalg.norm(h2))
    if h3[2] * lam < 0:
        lam = -lam  # keep the board origin in front of the camera
    r1, r2 = lam * h1, lam * h2
    R = orthonormalize(np.column_stack([r1, r2, np.cross(r1, r2)]))
    return R, lam * h3


def _residuals(R, t, X, uv, cam: PinholeCamera) -> np.ndarray:
    Xc = X @ R.T + t
    proj = np.stack([cam.fx * Xc[:, 0] / Xc[:, 2] + cam.cx, cam.fy * Xc[:, 1] / Xc[:, 2] + cam.cy], axis=1)
    return (proj - uv).ravel()


def _jacobian(R, t, X, cam: PinholeCamera) -> np.ndarray:
    RX = X @ R.T
    Xc = RX + t
    x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    n = len(X)
    dproj = np.zeros((n, 2, 3))
    dproj[:, 0, 0] = cam.fx / z
    dproj[:, 0, 2] = -cam.fx * x / z**2
    dproj[:, 1, 1] = cam.fy / z
    dproj[:, 1, 2] = -cam.fy * y / z**2
    # left-multiplied increment: d(exp([w]) R X)/dw = -[R X]_x
    dX = np.zeros((n, 3, 6))
    dX[:, :, :3] = -np.stack([skew(p) for p in RX])
    dX[:, :, 3:] = np.eye(3)
    return np.einsum("nij,njk->nik", dproj, dX).reshape(2 * n, 6)


def solve_planar_pose(obs: CornerObservations, cam: PinholeCamera) -> PoseResult:
    """Board-to-camera pose from planar corner observations.

    Homography DLT gives the initial pose, Gauss-Newton on pixel
    reprojection residuals (with step halving) refines it.
    """
    xy, uv = obs.board_xy, obs.pixels
    _check_board_points(xy)
    norm_uv = np.stack([(uv[:, 0] - cam.cx) / cam.fx, (uv[:, 1] - cam.cy) / cam.fy], axis=1)
    H = homography_dlt(xy, norm_uv)
    R, t = _initial_pose(H)
    X = np.column_stack([xy, np.zeros(len(xy))])

    r = _residuals(R, t, X, uv, cam)
    cost = r @ r
    cost0 = cost
    history = [np.sqrt(cost / len(xy))]
    it = 0
    for it in range(1, MAX_ITER + 1):
        J = _jacobian(R, t, X, cam)
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            raise NoConvergence("non-finite Gauss-Newton step")
        alpha = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            R_new = rodrigues(alpha * step[:3]) @ R
            t_new = t + alpha * step[3:]
            r_new = _residuals(R_new, t_new, X, uv, cam)
            cost_new = r_new @ r_new
            if cost_new < cost:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break  # no representable descent left
        R, t, r, cost = R_new, t_new, r_new, cost_new
        history.append(np.sqrt(cost / len(xy)))
        if np.linalg.norm(alpha * step) < STEP_TOL:
            break
    if not np.isfinite(cost) or cost > cost0:
        raise NoConvergence("reprojection error was not reduced")
    if t[2] <= 0:
        raise DegenerateConfiguration("board is not in front of the camera")
    return PoseResult(RigidTransform(orthonormalize(R), t), float(np.sqrt(cost / len(xy))), it, history)


def estimate_planar_pose(obs: CornerObservations, cam: PinholeCamera) -> RigidTransform:
    return solve_planar_pose(obs, cam).pose


def chessboard_flip_transform(spec: BoardSpec, mirror: bool = False) -> RigidTransform:
    """Back-face board frame -> front-face board frame."""
    R = np.diag([-1.0, 1.0, -1.0]) if mirror else np.diag([1.0, -1.0, -1.0])
    return RigidTransform(R, np.array([0.0, 0.0, -spec.thickness]))


def compose_cross_camera(
    dms_pose: RigidTransform, depth_pose: RigidTransform, flip: RigidTransform
) -> CrossCameraCalibration:
    R_dms, t_dms = dms_pose.R, dms_pose.t
    R_depth, t_depth = depth_pose.R, depth_pose.t
    R_chess, t_chess = flip.R, flip.t
    M = R_dms @ R_chess @ R_depth.T
    R_rot = M
    t_rot = -M @ t_depth + R_dms @ t_chess + t_dms
    return CrossCameraCalibration(RigidTransform(orthonormalize(R_rot), t_rot))


def transfer_point(calib: CrossCameraCalibration, p_depth) -> np.ndarray:
    """Depth-camera point(s) into the DMS frame: ``R_rot p + t_rot``."""
    return calib.rot.apply(p_depth)


def calibrate(
    dms_obs: CornerObservations,
    depth_obs: CornerObservations,
    dms_cam: PinholeCamera,
    depth_cam: PinholeCamera,
    spec: BoardSpec,
    mirror: bool = False,
) -> CrossCameraCalibration:
    """Full transparent-chessboard calibration from the two corner sets."""
    dms = solve_planar_pose(dms_obs, dms_cam)
    depth = solve_planar_pose(depth_obs, depth_cam)
    logger.info("board poses: dms rmse %.4g px, depth rmse %.4g px", dms.rmse_px, depth.rmse_px)
    calib = compose_cross_camera(dms.pose, depth.pose, chessboard_flip_transform(spec, mirror))
    n1, n2 = len(dms_obs), len(depth_obs)
    rmse = float(np.sqrt((n1 * dms.rmse_px**2 + n2 * depth.rmse_px**2) / (n1 + n2)))
    return CrossCameraCalibration(calib.rot, rmse)
