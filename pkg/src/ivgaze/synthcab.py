"""Synthetic cabin: ground-truth targets, cameras, boards, subjects and renders.

The DMS camera frame is the world frame: x to the camera's right (the
vehicle's left, since the camera faces the driver), y down, z from the
camera toward the driver. Targets ahead of the driver therefore have
negative z. The default layout is left-hand drive.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .annotate import ALL_ZONES, NONE_ZONE, Posture, SampleRecord, build_record, vec_from_yawpitch
from .calib import BoardSpec, CornerObservations
from .errors import BadLayout, BehindCamera, BoardNotVisible
from .geom import PinholeCamera, RigidTransform, axis_angle, invert_rigid, normalize, project_point
from .normalize import normalize_record, virtual_camera

# zone -> (center, half extent), meters, DMS frame
DEFAULT_ZONE_BOXES: dict[str, tuple[tuple[float, float, float], tuple[float, float, float]]] = {
    "left-side mirror": ((0.62, -0.02, -0.25), (0.05, 0.04, 0.04)),
    "rear-view mirror": ((-0.40, -0.48, -0.30), (0.10, 0.03, 0.03)),
    "right-side mirror": ((-1.20, -0.02, -0.30), (0.05, 0.04, 0.04)),
    "central-control screen": ((-0.45, 0.05, -0.25), (0.08, 0.06, 0.03)),
    "steering wheel": ((0.00, 0.10, 0.05), (0.16, 0.12, 0.02)),
    "handbrake": ((-0.42, 0.45, 0.35), (0.05, 0.04, 0.08)),
    "dashboard": ((-0.05, -0.05, -0.15), (0.10, 0.03, 0.04)),
    "left-side windshield": ((0.10, -0.40, -0.75), (0.25, 0.12, 0.10)),
    "right-side windshield": ((-0.75, -0.40, -0.75), (0.25, 0.12, 0.10)),
    NONE_ZONE: ((0.55, 0.35, 0.35), (0.05, 0.10, 0.10)),
}

FACE_SIGMA = 0.045  # face blob radius (m)
EYE_OFFSETS = np.array([[0.032, -0.03, 0.02], [-0.032, -0.03, 0.02]])  # head frame, relative to the nose
EYE_RADIUS = 0.015  # exaggerated so that eye rotation is visible at desk resolution


@dataclass
class LayoutConfig:
    cabin_min: tuple = (-1.3, -0.8, -1.2)
    cabin_max: tuple = (0.7, 0.7, 0.8)
    zone_boxes: dict = field(default_factory=lambda: dict(DEFAULT_ZONE_BOXES))
    targets_per_zone: int = 6
    none_targets: int = 4
    dms_camera: dict = field(
        default_factory=lambda: {"fx": 1000.0, "fy": 1000.0, "cx": 640.0, "cy": 400.0, "width": 1280, "height": 800}
    )
    depth_camera: dict = field(
        default_factory=lambda: {"fx": 910.0, "fy": 910.0, "cx": 640.0, "cy": 360.0, "width": 1280, "height": 720}
    )
    board: dict = field(default_factory=lambda: {"rows": 6, "cols": 9, "square_size": 0.04, "thickness": 0.003})
    board_distance: tuple = (0.5, 1.5)  # DMS camera -> board center
    depth_distance: tuple = (0.5, 1.0)  # board center -> depth camera
    board_tilt_deg: float = 20.0
    depth_tilt_deg: float = 10.0
    n_boards: int = 1
    mirror: bool = False


@dataclass
class BoardPlacement:
    pose: RigidTransform  # front board frame -> DMS frame
    spec: BoardSpec


@dataclass
class CabinScene:
    targets: dict  # zone -> (n, 3) positions in the DMS frame
    target_ids: dict  # zone -> list of ids
    dms_camera: PinholeCamera
    depth_camera: PinholeCamera
    depth_pose: RigidTransform  # depth frame -> DMS frame
    boards: list
    seed: int
    mirror: bool = False

    def all_targets(self) -> list[tuple[str, str, np.ndarray]]:
        out = []
        for zone in ALL_ZONES:
            for tid, p in zip(self.target_ids.get(zone, []), self.targets.get(zone, np.zeros((0, 3)))):
                out.append((tid, zone, p))
        return out

    def targets_in_depth_frame(self) -> list[dict]:
        inv = invert_rigid(self.depth_pose)
        return [{"target_id": tid, "zone": z, "p_depth": inv.apply(p).tolist()} for tid, z, p in self.all_targets()]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "mirror": self.mirror,
            "dms_camera": self.dms_camera.to_dict(),
            "depth_camera": self.depth_camera.to_dict(),
            "depth_pose": self.depth_pose.to_dict(),
            "targets": [{"target_id": tid, "zone": z, "position": p.tolist()} for tid, z, p in self.all_targets()],
            "boards": [{"pose": b.pose.to_dict(), "spec": asdict(b.spec)} for b in self.boards],
        }


def _check_layout(cfg: LayoutConfig) -> None:
    lo, hi = np.asarray(cfg.cabin_min, float), np.asarray(cfg.cabin_max, float)
    if np.any(hi <= lo):
        raise BadLayout("cabin box is empty")
    if cfg.targets_per_zone < 0 or cfg.none_targets < 0 or cfg.n_boards < 1:
        raise BadLayout("target and board counts must be non-negative (at least one board)")
    for zone, (c, h) in cfg.zone_boxes.items():
        if zone not in ALL_ZONES:
            raise BadLayout(f"unknown zone {zone!r} in layout")
        c, h = np.asarray(c, float), np.asarray(h, float)
        if np.any(h < 0) or np.any(c - h < lo) or np.any(c + h > hi):
            raise BadLayout(f"zone box {zone!r} leaves the cabin")
    for lo_, hi_ in (cfg.board_distance, cfg.depth_distance):
        if not 0 < lo_ <= hi_:
            raise BadLayout("distance ranges must be positive and ordered")


def _visible(cam: PinholeCamera, pts: np.ndarray) -> bool:
    if np.any(pts[:, 2] <= 1e-9):
        return False
    uv = project_point(cam, pts)
    return bool(np.all((uv[:, 0] >= 0) & (uv[:, 0] <= cam.width - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= cam.height - 1)))


def _place_board(rng, cfg: LayoutConfig, spec: BoardSpec, dms: PinholeCamera, depth: PinholeCamera):
    w = (spec.cols - 1) * spec.square_size
    h = (spec.rows - 1) * spec.square_size
    for _ in range(200):
        dist = rng.uniform(*cfg.board_distance)
        center = np.array([rng.uniform(-0.1, 0.1) * dist, rng.uniform(-0.1, 0.1) * dist, dist])
        # board x along camera x, z toward the DMS camera, y = z cross x (image up)
        tilt = axis_angle(rng.normal(size=3), rng.uniform(0, cfg.board_tilt_deg))
        R_board = tilt @ np.diag([1.0, -1.0, -1.0])
        t_board = center - R_board @ np.array([w / 2, h / 2, 0.0])
        pose = RigidTransform(R_board, t_board)

        # depth camera behind the board, looking back at it (toward -z)
        ddist = rng.uniform(*cfg.depth_distance)
        dpos = center + np.array([rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), ddist])
        look = normalize(center - dpos)
        wobble = axis_angle(rng.normal(size=3), rng.uniform(0, cfg.depth_tilt_deg))
        R_nominal = np.diag([-1.0, 1.0, -1.0])  # 180 deg about y: depth z = DMS -z
        # align the nominal optical axis with the look direction, then wobble
        z_axis = R_nominal[:, 2]
        axis = np.cross(z_axis, look)
        ang = np.degrees(np.arctan2(np.linalg.norm(axis), z_axis @ look))
        align = axis_angle(axis, ang) if np.linalg.norm(axis) > 1e-12 else np.eye(3)
        depth_pose = RigidTransform(wobble @ align @ R_nominal, dpos)

        corners = np.column_stack([spec.corners(), np.zeros(spec.rows * spec.cols)])
        in_dms = pose.apply(corners)
        in_depth = invert_rigid(depth_pose).apply(in_dms)
        if _visible(dms, in_dms) and _visible(depth, in_depth):
            return pose, depth_pose
    raise BadLayout("could not place a board visible to both cameras")


def generate_cabin(seed: int = 0, layout: Optional[LayoutConfig] = None) -> CabinScene:
    cfg = layout or LayoutConfig()
    _check_layout(cfg)
    rng = np.random.default_rng(seed)
    dms = PinholeCamera.from_dict(cfg.dms_camera)
    depth = PinholeCamera.from_dict(cfg.depth_camera)
    spec = BoardSpec(**cfg.board)

    targets, ids = {}, {}
    n = 0
    for zone in ALL_ZONES:
        if zone not in cfg.zone_boxes:
            continue
        count = cfg.none_targets if zone == NONE_ZONE else cfg.targets_per_zone
        c, h = (np.asarray(a, dtype=np.float64) for a in cfg.zone_boxes[zone])
        targets[zone] = c + rng.uniform(-1.0, 1.0, size=(count, 3)) * h
        ids[zone] = [f"T{n + i:03d}" for i in range(count)]
        n += count

    boards, depth_pose = [], None
    for i in range(cfg.n_boards):
        pose, dp = _place_board(rng, cfg, spec, dms, depth)
        boards.append(BoardPlacement(pose, spec))
        if depth_pose is None:
            depth_pose = dp
    return CabinScene(targets, ids, dms, depth, depth_pose, boards, seed, cfg.mirror)


@dataclass
class ChessboardSimulation:
    dms_obs: CornerObservations
    depth_obs: CornerObservations
    dms_pose: RigidTransform  # front board frame -> DMS
    depth_pose: RigidTransform  # back board frame -> depth camera


def simulate_chessboard(scene: CabinScene, noise_px: float = 0.0, rng=None, board_index: int = 0) -> ChessboardSimulation:
    """Project both faces of the board into their cameras, with pixel noise."""
    rng = rng if rng is not None else np.random.default_rng(scene.seed + 1)
    placement = scene.boards[board_index]
    spec = placement.spec
    front_xy = spec.corners()
    back_xy = spec.back_corners(scene.mirror)
    n = len(front_xy)
    front = placement.pose.apply(np.column_stack([front_xy, np.zeros(n)]))
    # back-face corners sit at z = -d in the front frame
    flip_R = np.diag([-1.0, 1.0, -1.0]) if scene.mirror else np.diag([1.0, -1.0, -1.0])
    back_pose_front = RigidTransform(flip_R, np.array([0.0, 0.0, -spec.thickness]))
    back_in_dms_pose = placement.pose @ back_pose_front
    depth_from_dms = invert_rigid(scene.depth_pose)
    depth_board_pose = depth_from_dms @ back_in_dms_pose
    back = depth_board_pose.apply(np.column_stack([back_xy, np.zeros(n)]))
    if np.any(front[:, 2] <= 1e-9) or np.any(back[:, 2] <= 1e-9):
        raise BoardNotVisible("board is behind one of the cameras")
    if not (_visible(scene.dms_camera, front) and _visible(scene.depth_camera, back)):
        raise BoardNotVisible("board corners fall outside an image")
    uv_f = project_point(scene.dms_camera, front)
    uv_b = project_point(scene.depth_camera, back)
    if noise_px > 0:
        uv_f = uv_f + rng.normal(scale=noise_px, size=uv_f.shape)
        uv_b = uv_b + rng.normal(scale=noise_px, size=uv_b.shape)
    return ChessboardSimulation(
        CornerObservations(front_xy, uv_f), CornerObservations(back_xy, uv_b), placement.pose, depth_board_pose
    )


# ---------------------------------------------------------------- subjects


def head_rotation_from(forward, roll_deg: float = 0.0) -> np.ndarray:
    """Head axes (columns) in the camera frame for a facing direction.

    Head frame: x to the image right when frontal, y down, z backward, so a
    head facing the camera has the identity rotation.
    """
    f = normalize(forward)
    z = -f
    x = normalize(np.cross([0.0, 1.0, 0.0], z))
    y = np.cross(z, x)
    R = np.column_stack([x, y, z])
    if roll_deg:
        R = axis_angle(z, roll_deg) @ R
    return R


def _slerp_dir(a: np.ndarray, b: np.ndarray, frac: float) -> np.ndarray:
    ang = np.arccos(np.clip(a @ b, -1.0, 1.0))
    if ang < 1e-9:
        return a.copy()
    axis = normalize(np.cross(a, b))
    return axis_angle(axis, np.degrees(frac * ang)) @ a


@dataclass
class SyntheticSubject:
    subject_id: str
    posture: Posture
    face_center: np.ndarray  # rest position of the nose, DMS frame
    seed: int = 0
    head_forward: tuple = (0.0, 8.0)  # resting (yaw, pitch), degrees: toward the road
    max_eye_deg: float = 30.0  # fixed-head: re-orient the head beyond this eye rotation


def landmarks_for(face_center: np.ndarray, head_R: np.ndarray) -> list[np.ndarray]:
    eyes = face_center + EYE_OFFSETS @ head_R.T
    return [face_center.copy(), eyes[0], eyes[1]]


def sample_frames(scene: CabinScene, subject: SyntheticSubject, n: int) -> list[SampleRecord]:
    """Frames of one subject looking at randomly chosen targets under a posture."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([subject.seed, scene.seed]))
    targets = scene.all_targets()
    rest = vec_from_yawpitch(*subject.head_forward)
    head_dir = rest.copy()
    base = np.asarray(subject.face_center, dtype=np.float64)
    records = []
    for i in range(n):
        tid, zone, t = targets[rng.integers(len(targets))]
        posture = Posture(subject.posture)
        roll = 0.0
        if posture is Posture.FIXED_HEAD:
            o = base.copy()
            g = normalize(t - o)
            if np.degrees(np.arccos(np.clip(head_dir @ g, -1, 1))) > subject.max_eye_deg:
                # turn the head just enough, then hold it for the following frames
                ang = np.degrees(np.arccos(np.clip(head_dir @ g, -1, 1)))
                head_dir = _slerp_dir(head_dir, g, 1.0 - 0.5 * subject.max_eye_deg / ang)
        elif posture is Posture.FIXED_POSITION:
            o = base.copy()
            g = normalize(t - o)
            head_dir = _slerp_dir(rest, g, rng.uniform(0.3, 0.8))
            roll = rng.normal(0.0, 3.0)
        else:
            o = base + rng.uniform(-1.0, 1.0, 3) * [0.05, 0.04, 0.06]
            g = normalize(t - o)
            head_dir = _slerp_dir(rest, g, rng.uniform(0.2, 0.9))
            roll = rng.normal(0.0, 8.0)
        head_R = head_rotation_from(head_dir, roll)
        records.append(
            build_record(
                o, t, zone, landmarks_for(o, head_R), posture,
                subject_id=subject.subject_id, camera_id="dms", target_id=tid, head_rotation=head_R,
            )
        )
    return records


# ---------------------------------------------------------------- rendering


def crop_camera(face_center, size: int, focal: float) -> PinholeCamera:
    """Un-rotated crop of the DMS view around the face, at focal ``focal``.

    The principal point is clamped into the raster, so a strongly off-axis
    face sits off-centre (and may be cut by the border) instead of centred.
    """
    o = np.asarray(face_center, dtype=np.float64)
    if o[2] <= 1e-9:
        raise BehindCamera("face is behind the camera")
    cx = np.clip(size / 2.0 - focal * o[0] / o[2], 0.0, size - 1e-6)
    cy = np.clip(size / 2.0 - focal * o[1] / o[2], 0.0, size - 1e-6)
    return PinholeCamera(focal, focal, float(cx), float(cy), size, size)


def _gauss(u, v, u0, v0, sigma):
    return np.exp(-((u - u0) ** 2 + (v - v0) ** 2) / (2.0 * sigma**2))


def render_face(record: SampleRecord, camera: PinholeCamera, eyes: bool = True) -> np.ndarray:
    """Grayscale float raster: face blob at the nose, eye sockets and pupils.

    The pupils sit at ``eye + r * g`` and the sockets at ``eye + r * f``
    (``f`` the head's facing direction), so their image offset follows the
    gaze direction relative to the head.
    """
    o = record.face_center
    if o[2] <= 1e-9:
        raise BehindCamera("face is behind the camera")
    v, u = np.mgrid[0 : camera.height, 0 : camera.width].astype(np.float64)
    f = camera.fx
    uo, vo = project_point(camera, o)
    img = 0.6 * _gauss(u, v, uo, vo, f * FACE_SIGMA / o[2])
    if eyes:
        head_R = record.head_rotation if record.head_rotation is not None else np.eye(3)
        facing = -head_R[:, 2]
        g = record.gaze.direction
        for offset in EYE_OFFSETS:
            eye = o + head_R @ offset
            socket = eye + EYE_RADIUS * facing
            pupil = eye + EYE_RADIUS * g
            us, vs = project_point(camera, socket)
            up, vp = project_point(camera, pupil)
            img += 0.3 * _gauss(u, v, us, vs, f * 0.014 / socket[2])
            img -= 0.5 * _gauss(u, v, up, vp, f * 0.006 / pupil[2])
    return np.clip(img, 0.0, 1.0)


def render_dot(camera: PinholeCamera, point, sigma_px: float = 1.5) -> np.ndarray:
    v, u = np.mgrid[0 : camera.height, 0 : camera.width].astype(np.float64)
    u0, v0 = project_point(camera, point)
    return _gauss(u, v, u0, v0, sigma_px)


def blob_centroid(img: np.ndarray, frac: float = 0.0) -> np.ndarray:
    """Intensity-weighted centroid ``(u, v)`` of pixels above ``frac * max``."""
    w = np.where(img > frac * img.max(), img, 0.0)
    v, u = np.mgrid[0 : img.shape[0], 0 : img.shape[1]]
    return np.array([(w * u).sum(), (w * v).sum()]) / w.sum()


# ---------------------------------------------------------------- datasets


@dataclass
class SyntheticDataset:
    records: list
    images_o: np.ndarray  # (N, H, W)
    images_n: np.ndarray  # (N, H, W)
    cameras_o: list
    R: np.ndarray  # (N, 3, 3)


def default_subjects(n_subjects: int, seed: int) -> list[SyntheticSubject]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
    postures = list(Posture)
    out = []
    for i in range(n_subjects):
        o = np.array([0.0, -0.12, 0.65]) + rng.uniform(-1, 1, 3) * [0.04, 0.03, 0.05]
        out.append(
            SyntheticSubject(
                f"S{i:03d}", postures[i % 3], o, seed=int(rng.integers(2**31)),
                head_forward=(float(rng.normal(0, 3)), float(8 + rng.normal(0, 3))),
            )
        )
    return out


def build_dataset(
    scene: CabinScene,
    n_samples: int,
    seed: int = 0,
    size: int = 64,
    virtual_fx: Optional[float] = None,
    d_norm: float = 0.6,
    n_subjects: int = 6,
) -> SyntheticDataset:
    """Records plus original crops and normalized renders for the toy model."""
    focal = virtual_fx if virtual_fx is not None else 960.0 * size / 224.0
    subjects = default_subjects(n_subjects, seed)
    per = [n_samples // n_subjects + (1 if i < n_samples % n_subjects else 0) for i in range(n_subjects)]
    records = []
    for subj, k in zip(subjects, per):
        if k:
            records.extend(sample_frames(scene, subj, k))
    K_n = virtual_camera(focal, focal, size, size)
    imgs_o = np.zeros((len(records), size, size))
    imgs_n = np.zeros((len(records), size, size))
    cams, Rs = [], np.zeros((len(records), 3, 3))
    for i, rec in enumerate(records):
        cam = crop_camera(rec.face_center, size, focal)
        imgs_o[i] = render_face(rec, cam)
        imgs_n[i], norm = normalize_record(rec, imgs_o[i], cam, K_n, d_norm)
        rec.image = {"camera": cam.to_dict()}
        rec.normalization = norm.to_dict()
        cams.append(cam)
        Rs[i] = norm.R
    return SyntheticDataset(records, imgs_o, imgs_n, cams, Rs)
