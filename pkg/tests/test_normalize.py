import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.ndimage import map_coordinates

from ivgaze.annotate import GazeLabel, build_record
from ivgaze.errors import DegenerateDirection, FaceAtOrigin, SingularHomography
from ivgaze.geom import PinholeCamera, axis_angle, is_rotation, project_point, random_rotation
from ivgaze.metrics import angular_error_deg
from ivgaze.normalize import (
    NormalizationResult,
    inverse_transform_gaze,
    normalization_rotation,
    normalization_rotation_legacy,
    normalize_record,
    normalize_sample,
    scale_matrix,
    transform_gaze,
    virtual_camera,
    warp_homography,
    warp_image,
    warp_with_homography,
)
from ivgaze.synthcab import blob_centroid, crop_camera, render_dot

DMS = PinholeCamera(1000.0, 1000.0, 640.0, 400.0, 1280, 800)
K_N = virtual_camera(274.0, 274.0, 64, 64)

faces = st.tuples(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(0.2, 2.0)).map(np.array)


def random_unit(rng, n=None):
    v = rng.normal(size=(n or 1, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v if n else v[0]


# ---------------------------------------------------------------- rotation


def test_frontal_face_gives_identity():
    assert np.array_equal(normalization_rotation([0, 0, 1]), np.eye(3))


def test_pitch_only_offset_keeps_camera_x():
    s = 0.2
    R = normalization_rotation([0, s, 1.0])
    assert np.array_equal(R[0], [1.0, 0.0, 0.0])
    assert np.allclose(R[2], np.array([0, s, 1.0]) / np.hypot(s, 1.0), atol=1e-15)


def test_face_along_camera_x_is_degenerate():
    with pytest.raises(DegenerateDirection):
        normalization_rotation([1, 0, 0])


def test_face_at_origin():
    with pytest.raises(FaceAtOrigin):
        normalization_rotation([0, 0, 0])


@given(faces)
def test_rotation_points_z_at_face(o):
    R = normalization_rotation(o)
    assert is_rotation(R, tol=1e-12)
    assert np.max(np.abs(R @ (o / np.linalg.norm(o)) - [0, 0, 1])) < 1e-9
    # rows follow the stated construction
    z = o / np.linalg.norm(o)
    y = np.cross(z, [1, 0, 0])
    y /= np.linalg.norm(y)
    assert np.max(np.abs(R - np.stack([np.cross(y, z), y, z]))) < 1e-12


def test_rotation_invariant_over_many_faces(rng):
    o = rng.uniform([-0.5, -0.5, 0.2], [0.5, 0.5, 2.0], size=(10_000, 3))
    worst = max(np.max(np.abs(normalization_rotation(p) @ (p / np.linalg.norm(p)) - [0, 0, 1])) for p in o)
    assert worst < 1e-9


def test_legacy_identity():
    assert np.allclose(normalization_rotation_legacy(np.eye(3), [0, 0, 1]), np.eye(3), atol=0)


def test_legacy_undoes_head_roll():
    head = axis_angle([0, 0, 1], 30.0)
    R = normalization_rotation_legacy(head, [0, 0, 1])
    # head x-axis lands in the normalized x/z plane, pointing along +x
    hx = R @ head[:, 0]
    assert abs(hx[1]) < 1e-12 and hx[0] > 0
    assert np.allclose(R, head.T, atol=1e-12)


def test_legacy_degenerate():
    head = axis_angle([0, 1, 0], -90.0)  # head x-axis now along camera z
    with pytest.raises(DegenerateDirection):
        normalization_rotation_legacy(head, [0, 0, 1])


# ---------------------------------------------------------------- scale / homography


def test_scale_identity_at_norm_distance():
    assert np.array_equal(scale_matrix([0, 0.36, 0.48], 0.6), np.eye(3))


def test_scale_ratio():
    assert np.allclose(scale_matrix([0, 0, 1.2], 0.6), np.diag([1, 1, 0.5]), atol=1e-16)


def test_scale_face_at_origin():
    with pytest.raises(FaceAtOrigin):
        scale_matrix([0, 0, 0], 0.6)


@given(faces)
def test_result_homography_definition(o):
    res = normalize_sample(o, GazeLabel.from_vector([0, 0, -1]), DMS, K_N)
    assert np.max(np.abs(res.H - K_N.K @ res.S @ res.R @ DMS.K_inv)) < 1e-12


def test_face_maps_to_virtual_principal_point(rng):
    for o in rng.uniform([-0.3, -0.3, 0.4], [0.3, 0.3, 1.2], size=(100, 3)):
        H = warp_homography(DMS, K_N, scale_matrix(o, 0.6), normalization_rotation(o))
        p = H @ np.append(project_point(DMS, o), 1.0)
        assert np.max(np.abs(p[:2] / p[2] - [K_N.cx, K_N.cy])) < 1e-9


# ---------------------------------------------------------------- warping


def test_identity_warp_is_exact(rng):
    img = rng.uniform(size=(20, 30))
    assert np.array_equal(warp_with_homography(img, np.eye(3), img.shape), img)


def test_integer_translation(rng):
    img = rng.uniform(size=(20, 30))
    H = np.array([[1.0, 0, 3], [0, 1, -2], [0, 0, 1]])
    out = warp_with_homography(img, H, img.shape)
    assert np.max(np.abs(out[0:18, 3:30] - img[2:20, 0:27])) < 1e-9
    assert not out[:, :3].any()


def test_singular_homography(rng):
    with pytest.raises(SingularHomography):
        warp_with_homography(rng.uniform(size=(4, 4)), np.zeros((3, 3)), (4, 4))


def test_warp_matches_scipy_bilinear(rng):
    img = rng.uniform(size=(48, 64))
    H = np.array([[0.9, 0.1, 2.0], [-0.05, 1.1, -1.0], [1e-3, -5e-4, 1.0]])
    out = warp_with_homography(img, H, (40, 50))
    v, u = np.mgrid[0:40, 0:50].astype(float)
    src = np.linalg.inv(H) @ np.stack([u.ravel(), v.ravel(), np.ones(u.size)])
    xs, ys = src[0] / src[2], src[1] / src[2]
    ref = map_coordinates(img, [ys, xs], order=1, mode="constant", cval=0.0)
    inside = (xs >= 0) & (xs <= 63) & (ys >= 0) & (ys <= 47)
    ref[~inside] = 0.0
    assert np.max(np.abs(out.ravel() - ref)) < 1e-12


def test_warped_face_dot_lands_on_principal_point(rng):
    for o in rng.uniform([-0.25, -0.25, 0.45], [0.25, 0.1, 1.0], size=(20, 3)):
        cam = crop_camera(o, 64, 274.0)
        # skip crops where the face falls off the raster
        if cam.cx in (0.0, 64 - 1e-6) or cam.cy in (0.0, 64 - 1e-6):
            continue
        dot = render_dot(cam, o, sigma_px=2.0)
        out = warp_image(dot, cam, K_N, scale_matrix(o, 0.6), normalization_rotation(o))
        assert np.max(np.abs(blob_centroid(out, 0.05) - [K_N.cx, K_N.cy])) < 0.5


def test_warped_dot_full_dms_view(rng):
    for o in rng.uniform([-0.3, -0.2, 0.5], [0.3, 0.2, 0.9], size=(5, 3)):
        dot = render_dot(DMS, o, sigma_px=8.0)
        out = warp_image(dot, DMS, K_N, scale_matrix(o, 0.6), normalization_rotation(o))
        assert np.max(np.abs(blob_centroid(out, 0.05) - [K_N.cx, K_N.cy])) < 0.5


# ---------------------------------------------------------------- gaze


def test_identity_transform_keeps_gaze():
    g = GazeLabel.from_vector([0.6, 0.0, -0.8])
    assert np.array_equal(transform_gaze(np.eye(3), g).direction, g.direction)


def test_gaze_round_trip(rng):
    for _ in range(100):
        R = random_rotation(rng)
        g = GazeLabel.from_vector(random_unit(rng))
        back = inverse_transform_gaze(R, transform_gaze(R, g))
        assert np.max(np.abs(back.direction - g.direction)) < 1e-12


def test_angular_error_invariant_under_rotation(rng):
    for _ in range(200):
        o = rng.uniform([-0.3, -0.3, 0.4], [0.3, 0.3, 1.2])
        R = normalization_rotation(o)
        a, b = random_unit(rng), random_unit(rng)
        assert abs(angular_error_deg(R @ a, R @ b) - angular_error_deg(a, b)) < 1e-9


def test_normalize_record_block(rng):
    rec = build_record([0.05, -0.1, 0.7], [0.4, 0.3, 0.1], "rear-view mirror", head_rotation=np.eye(3))
    cam = crop_camera(rec.face_center, 64, 274.0)
    img = rng.uniform(size=(64, 64))
    out, norm = normalize_record(rec, img, cam, K_N)
    assert out.shape == (64, 64)
    assert np.allclose(norm.g_n.direction, norm.R @ rec.gaze.direction, atol=1e-15)
    back = NormalizationResult.from_dict(norm.to_dict())
    assert np.array_equal(back.H, norm.H) and back.camera == norm.camera
    _, legacy = normalize_record(rec, img, cam, K_N, method="legacy")
    assert np.allclose(legacy.R @ (rec.face_center / np.linalg.norm(rec.face_center)), [0, 0, 1], atol=1e-12)


def test_unknown_method():
    with pytest.raises(ValueError):
        normalize_sample([0, 0, 1], GazeLabel.from_vector([0, 0, -1]), DMS, K_N, method="fancy")


@given(faces, st.floats(0.3, 1.0))
def test_apparent_scale_is_distance_independent(o, d_norm):
    # a small offset at the face, perpendicular to the view ray, has a fixed normalized size
    assume(np.hypot(o[1], o[2]) > 0.05)
    R, S = normalization_rotation(o), scale_matrix(o, d_norm)
    a, b = S @ R @ o, S @ R @ (o + 0.01 * R[0])
    # under S, the face always sits at depth d_norm in the virtual camera
    assert abs(a[2] - d_norm) < 1e-12
    assert abs(b[0] / b[2] - a[0] / a[2] - 0.01 / d_norm) < 1e-6
