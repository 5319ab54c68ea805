"""Gaze labels and annotated sample records.

A gaze label is the unit vector from the face center (nose) to the fixated
target, expressed in the DMS camera frame. Yaw/pitch use the convention

    yaw = atan2(-x, -z),  pitch = asin(-y)

so that looking straight into the camera, ``(0, 0, -1)``, is ``(0, 0)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import CoincidentPoints, DataError, NotUnit, UnknownZone
from .geom import as_vec3

ZONES: tuple[str, ...] = (
    "left-side mirror",
    "rear-view mirror",
    "right-side mirror",
    "central-control screen",
    "steering wheel",
    "handbrake",
    "dashboard",
    "left-side windshield",
    "right-side windshield",
)
NONE_ZONE = "None"
ALL_ZONES: tuple[str, ...] = ZONES + (NONE_ZONE,)
ZONE_INDEX = {z: i for i, z in enumerate(ALL_ZONES)}


class Posture(str, Enum):
    FIXED_HEAD = "fixed-head"
    FIXED_POSITION = "fixed-position"
    FREE = "free"


def check_zone(zone: str) -> str:
    if zone not in ZONE_INDEX:
        raise UnknownZone(f"unknown gaze zone {zone!r}")
    return zone


def yawpitch_from_vec(v) -> tuple[float, float]:
    """(yaw, pitch) in degrees of a unit direction."""
    v = as_vec3(v)
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise NotUnit("direction is not unit length")
    yaw = np.degrees(np.arctan2(-v[0], -v[2]))
    pitch = np.degrees(np.arcsin(np.clip(-v[1], -1.0, 1.0)))
    if yaw == -180.0:
        yaw = 180.0
    return float(yaw), float(pitch)


def vec_from_yawpitch(yaw: float, pitch: float) -> np.ndarray:
    return vec_from_yawpitch_rad(np.radians(yaw), np.radians(pitch))


def vec_from_yawpitch_rad(yaw, pitch) -> np.ndarray:
    """Vectorised inverse of the yaw/pitch convention; angles in radians.

    Accepts scalars or arrays of matching shape and returns ``(..., 3)``.
    """
    yaw = np.asarray(yaw, dtype=np.float64)
    pitch = np.asarray(pitch, dtype=np.float64)
    cp = np.cos(pitch)
    return np.stack([-cp * np.sin(yaw), -np.sin(pitch), -cp * np.cos(yaw)], axis=-1)


def yawpitch_rad_from_vecs(v) -> np.ndarray:
    """``(..., 3)`` unit vectors to ``(..., 2)`` (yaw, pitch) in radians."""
    v = np.asarray(v, dtype=np.float64)
    yaw = np.arctan2(-v[..., 0], -v[..., 2])
    pitch = np.arcsin(np.clip(-v[..., 1], -1.0, 1.0))
    return np.stack([yaw, pitch], axis=-1)


@dataclass(frozen=True)
class GazeLabel:
    direction: np.ndarray
    yaw: float
    pitch: float

    @classmethod
    def from_vector(cls, v) -> GazeLabel:
        v = as_vec3(v)
        yaw, pitch = yawpitch_from_vec(v)
        return cls(v.copy(), yaw, pitch)

    def to_dict(self) -> dict:
        return {"direction": self.direction.tolist(), "yaw": self.yaw, "pitch": self.pitch}

    @classmethod
    def from_dict(cls, d: dict) -> GazeLabel:
        return cls(np.array(d["direction"], dtype=np.float64), float(d["yaw"]), float(d["pitch"]))


def gaze_from_target(o, t) -> GazeLabel:
    o, t = as_vec3(o), as_vec3(t)
    diff = t - o
    n = np.linalg.norm(diff)
    if n <= 1e-6:
        raise CoincidentPoints("face center and target coincide")
    return GazeLabel.from_vector(diff / n)


@dataclass
class SampleRecord:
    subject_id: str
    camera_id: str
    face_center: np.ndarray
    target: np.ndarray
    target_id: str
    gaze: GazeLabel
    zone: str
    landmarks: list = field(default_factory=list)
    posture: Posture = Posture.FREE
    image: Optional[dict] = None
    # optional extensions: head rotation (legacy normalization) and the
    # normalization block written by the normalize stage
    head_rotation: Optional[np.ndarray] = None
    normalization: Optional[dict] = None

    def to_dict(self) -> dict:
        d = {
            "subject_id": self.subject_id,
            "camera_id": self.camera_id,
            "face_center": self.face_center.tolist(),
            "target": self.target.tolist(),
            "target_id": self.target_id,
            "gaze": self.gaze.to_dict(),
            "zone": self.zone,
            "landmarks": [np.asarray(p).tolist() for p in self.landmarks],
            "posture": Posture(self.posture).value,
            "image": self.image,
        }
        if self.head_rotation is not None:
            d["head_rotation"] = np.asarray(self.head_rotation).tolist()
        if self.normalization is not None:
            d["normalization"] = self.normalization
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SampleRecord:
        try:
            rec = cls(
                subject_id=str(d["subject_id"]),
                camera_id=str(d["camera_id"]),
                face_center=np.array(d["face_center"], dtype=np.float64),
                target=np.array(d["target"], dtype=np.float64),
                target_id=str(d["target_id"]),
                gaze=GazeLabel.from_dict(d["gaze"]),
                zone=check_zone(d["zone"]),
                landmarks=[np.array(p, dtype=np.float64) for p in d.get("landmarks", [])],
                posture=Posture(d.get("posture", "free")),
                image=d.get("image"),
                head_rotation=(
                    np.array(d["head_rotation"], dtype=np.float64) if d.get("head_rotation") is not None else None
                ),
                normalization=d.get("normalization"),
            )
        except KeyError as exc:
            raise DataError(f"record is missing field {exc}") from None
        except ValueError as exc:
            raise DataError(str(exc)) from None
        return rec

    def check(self, tol: float = 1e-9) -> None:
        expected = (self.target - self.face_center) / np.linalg.norm(self.target - self.face_center)
        if np.max(np.abs(expected - self.gaze.direction)) > tol:
            raise DataError("gaze direction inconsistent with face center and target")
        check_zone(self.zone)


def build_record(
    o,
    t,
    zone: str,
    landmarks: Iterable = (),
    posture: Posture | str = Posture.FREE,
    *,
    subject_id: str = "s0",
    camera_id: str = "dms",
    target_id: str = "t0",
    image: Optional[dict] = None,
    head_rotation=None,
) -> SampleRecord:
    zone = check_zone(zone)
    gaze = gaze_from_target(o, t)
    return SampleRecord(
        subject_id=subject_id,
        camera_id=camera_id,
        face_center=as_vec3(o).copy(),
        target=as_vec3(t).copy(),
        target_id=target_id,
        gaze=gaze,
        zone=zone,
        landmarks=[as_vec3(p).copy() for p in landmarks],
        posture=Posture(posture),
        image=image,
        head_rotation=None if head_rotation is None else np.asarray(head_rotation, dtype=np.float64),
    )


def write_jsonl(path, records: Iterable[SampleRecord]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def read_jsonl(path) -> list[SampleRecord]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(SampleRecord.from_dict(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


def record_schema() -> dict:
    """JSON schema of one dataset line, as shipped with the package."""
    from importlib import resources

    return json.loads(resources.files("ivgaze").joinpath("schemas/sample_record.schema.json").read_text())
