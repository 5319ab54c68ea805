# %% [markdown]
# # Gaze normalization
#
# Normalization rotates a virtual camera so it looks straight at the face,
# then rescales so the face sits at a fixed distance. Here the rotation is
# built from the face position alone, with no head pose needed.

# %%
from pathlib import Path

import numpy as np

from ivgaze.annotate import Posture
from ivgaze.io import write_pgm
from ivgaze.metrics import angular_error_deg
from ivgaze.normalize import normalization_rotation, normalize_sample, scale_matrix, virtual_camera, warp_image
from ivgaze.synthcab import SyntheticSubject, blob_centroid, generate_cabin, render_face, sample_frames

out_dir = Path(__file__).parent / "_out"
out_dir.mkdir(exist_ok=True)

# %%
o = np.array([0.12, -0.08, 0.7])
R = normalization_rotation(o)
print("R @ unit(o) =", np.round(R @ (o / np.linalg.norm(o)), 12))
print("det R =", np.linalg.det(R))

# %% [markdown]
# ## Warping a rendered face
#
# The synthetic driver is rendered in the full DMS view and warped into the
# normalized camera. The brightest part of the face blob (rendered without
# eyes, which would pull the centroid) should land on the virtual principal
# point. The full render with eyes is saved for viewing.

# %%
scene = generate_cabin(3)
subject = SyntheticSubject("demo", Posture.FREE, np.array([0.0, -0.12, 0.65]), seed=9)
K_n = virtual_camera(274.0, 274.0, 64, 64)
for i, rec in enumerate(sample_frames(scene, subject, 4)):
    c = rec.face_center
    S, Rn = scale_matrix(c, 0.6), normalization_rotation(c)
    write_pgm(out_dir / f"normalized_{i}.pgm", warp_image(render_face(rec, scene.dms_camera), scene.dms_camera, K_n, S, Rn))
    warped = warp_image(render_face(rec, scene.dms_camera, eyes=False), scene.dms_camera, K_n, S, Rn)
    print(f"frame {i}: blob peak at {np.round(blob_centroid(warped, 0.9), 2)}, principal point ({K_n.cx}, {K_n.cy})")

# %% [markdown]
# ## Labels in the normalized space
#
# The label is rotated by R only; scaling does not change directions. Angular
# errors are the same in both spaces, so evaluation can happen in either.

# %%
norm = normalize_sample(rec.face_center, rec.gaze, scene.dms_camera, K_n)
other = np.array([0.1, 0.05, -1.0]) / np.linalg.norm([0.1, 0.05, -1.0])
print("error, camera space:    ", angular_error_deg(rec.gaze.direction, other))
print("error, normalized space:", angular_error_deg(norm.g_n.direction, norm.R @ other))
