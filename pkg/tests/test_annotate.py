import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ivgaze.annotate import (
    ALL_ZONES,
    ZONES,
    GazeLabel,
    Posture,
    SampleRecord,
    build_record,
    gaze_from_target,
    read_jsonl,
    record_schema,
    vec_from_yawpitch,
    write_jsonl,
    yawpitch_from_vec,
    yawpitch_rad_from_vecs,
    vec_from_yawpitch_rad,
)
from ivgaze.errors import CoincidentPoints, DataError, NotUnit, UnknownZone

coords = st.floats(-3, 3, allow_nan=False)
points = st.tuples(coords, coords, coords).map(np.array)


def test_gaze_along_optical_axis():
    g = gaze_from_target([0, 0, 0], [0, 0, 2])
    assert np.array_equal(g.direction, [0.0, 0.0, 1.0])


def test_gaze_is_normalized():
    g = gaze_from_target([0, 0, 0], [1, 1, 1])
    assert np.max(np.abs(g.direction - np.ones(3) / np.sqrt(3))) < 1e-15


def test_coincident_points():
    with pytest.raises(CoincidentPoints):
        gaze_from_target([0.1, 0.2, 0.3], [0.1, 0.2, 0.3])


def test_frontal_direction_is_zero_angles():
    assert yawpitch_from_vec([0, 0, -1]) == (0.0, 0.0)


def test_pitch_pole():
    assert yawpitch_from_vec([0, -1, 0])[1] == pytest.approx(90.0, abs=1e-12)


def test_yaw_sign_convention():
    # looking to the camera's -x side is positive yaw
    yaw, pitch = yawpitch_from_vec([-1, 0, 0])
    assert yaw == pytest.approx(90.0) and pitch == 0.0


def test_yaw_range_excludes_minus_180():
    yaw, _ = yawpitch_from_vec([-0.0, 0.0, 1.0])
    assert yaw == 180.0


def test_yawpitch_rejects_non_unit():
    with pytest.raises(NotUnit):
        yawpitch_from_vec([0, 0, 2])


def test_round_trip_random_vectors(rng):
    v = rng.normal(size=(1000, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for x in v:
        assert np.max(np.abs(vec_from_yawpitch(*yawpitch_from_vec(x)) - x)) < 1e-9


def test_vectorised_forms_agree(rng):
    v = rng.normal(size=(50, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    yp = yawpitch_rad_from_vecs(v)
    assert np.max(np.abs(vec_from_yawpitch_rad(yp[:, 0], yp[:, 1]) - v)) < 1e-12
    scalar = np.radians([yawpitch_from_vec(x) for x in v])
    assert np.max(np.abs(scalar - yp)) < 1e-12


@given(points, points, st.floats(1e-3, 1e3))
def test_scale_invariance_along_ray(o, t, s):
    if np.linalg.norm(t - o) < 1e-3:
        return
    a = gaze_from_target(o, t).direction
    b = gaze_from_target(o, o + s * (t - o)).direction
    assert np.max(np.abs(a - b)) < 1e-12


@given(points, points)
def test_label_invariants(o, t):
    if np.linalg.norm(t - o) < 1e-3:
        return
    g = gaze_from_target(o, t)
    assert abs(np.linalg.norm(g.direction) - 1) < 1e-12
    assert -180 < g.yaw <= 180 and -90 <= g.pitch <= 90
    assert np.max(np.abs(vec_from_yawpitch(g.yaw, g.pitch) - g.direction)) < 1e-9


def test_build_record_matches_gaze_from_target():
    rec = build_record([0, 0, 0.7], [0.4, -0.1, 0.2], "left-side mirror", posture="fixed-head")
    ref = gaze_from_target([0, 0, 0.7], [0.4, -0.1, 0.2])
    assert np.array_equal(rec.gaze.direction, ref.direction)
    assert rec.posture is Posture.FIXED_HEAD
    rec.check()


def test_zone_set():
    assert len(ZONES) == 9 and ALL_ZONES[-1] == "None"
    assert {"left-side mirror", "right-side mirror", "rear-view mirror"} <= set(ZONES)


def test_unknown_zone():
    with pytest.raises(UnknownZone):
        build_record([0, 0, 0.7], [0, 0, 0], "roof")


def test_build_record_propagates_coincident():
    with pytest.raises(CoincidentPoints):
        build_record([0, 0, 0.7], [0, 0, 0.7], "dashboard")


def test_check_detects_inconsistent_gaze():
    rec = build_record([0, 0, 0.7], [0.4, -0.1, 0.2], "dashboard")
    rec.gaze = GazeLabel.from_vector([0, 0, -1])
    with pytest.raises(DataError):
        rec.check()


def test_jsonl_round_trip_is_bit_identical(tmp_path, rng):
    recs = []
    for i in range(20):
        o = rng.normal(size=3) * 0.1 + [0, 0, 0.7]
        t = rng.normal(size=3)
        recs.append(
            build_record(
                o, t, ALL_ZONES[i % 10], landmarks=[o + 0.03, o - 0.03], subject_id=f"s{i}",
                image={"path": f"crops/{i:06d}.pgm"}, head_rotation=np.eye(3),
            )
        )
    write_jsonl(tmp_path / "r.jsonl", recs)
    back = read_jsonl(tmp_path / "r.jsonl")
    for a, b in zip(recs, back):
        for name in ("face_center", "target", "head_rotation"):
            assert np.array_equal(getattr(a, name), getattr(b, name))
        assert np.array_equal(a.gaze.direction, b.gaze.direction)
        assert (a.gaze.yaw, a.gaze.pitch) == (b.gaze.yaw, b.gaze.pitch)
        assert all(np.array_equal(p, q) for p, q in zip(a.landmarks, b.landmarks))
        assert (a.zone, a.subject_id, a.image) == (b.zone, b.subject_id, b.image)


def test_record_field_names():
    d = build_record([0, 0, 0.7], [0, 0, 0], "dashboard").to_dict()
    assert set(d) == {
        "subject_id", "camera_id", "face_center", "target", "target_id",
        "gaze", "zone", "landmarks", "posture", "image",
    }


def test_record_missing_field():
    d = build_record([0, 0, 0.7], [0, 0, 0], "dashboard").to_dict()
    del d["target"]
    with pytest.raises(DataError):
        SampleRecord.from_dict(d)


def test_read_jsonl_reports_bad_line(tmp_path):
    (tmp_path / "r.jsonl").write_text(json.dumps(build_record([0, 0, 1], [0, 0, 0], "None").to_dict()) + "\n{oops\n")
    with pytest.raises(DataError, match=":2:"):
        read_jsonl(tmp_path / "r.jsonl")


# ---------------------------------------------------------------- shipped schema


def test_records_match_shipped_schema(small_dataset):
    schema = record_schema()
    for rec in small_dataset.records:
        jsonschema.validate(rec.to_dict(), schema)


def test_schema_zone_enum_matches_code():
    assert record_schema()["properties"]["zone"]["enum"] == list(ALL_ZONES)


def test_schema_rejects_unknown_field(small_dataset):
    d = small_dataset.records[0].to_dict()
    d["mood"] = "sleepy"
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(d, record_schema())
