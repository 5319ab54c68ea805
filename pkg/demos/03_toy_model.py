# %% [markdown]
# # Training the toy dual-stream model
#
# A small numpy transformer sees two views of each face: the original crop
# and the normalized one. It predicts gaze at four feature levels, fuses
# them, and classifies the gaze zone from visual features plus the points
# where the gaze ray crosses three planes through the camera origin.
#
# This run is shorter than the one in the acceptance suite (about 10 s).

# %%
import numpy as np

from ivgaze.metrics import angular_errors_deg
from ivgaze.model import GAZE_TERMS, PixelStats, batch_from_dataset, init_params, preset
from ivgaze.model.gazedptr import head_directions
from ivgaze.model.gradcheck import gradcheck
from ivgaze.model.train import TrainConfig, fit, predict
from ivgaze.synthcab import build_dataset, generate_cabin

cfg = preset("tiny")
ds = build_dataset(generate_cabin(0), 256, seed=0, size=cfg.image_size)
raw = batch_from_dataset(ds)
batch = PixelStats.from_batch(raw).apply(raw)
print(f"{len(batch)} samples, {init_params(cfg, 0).size} parameters")

# %% [markdown]
# ## Gradient check
#
# Analytic gradients against central differences on a few samples.

# %%
rep = gradcheck(batch.subset(slice(0, 3)), cfg, seed=0, n_params=100)
print(f"max relative error {rep.max_rel_error:.2e}, stopped set gradient {rep.stopgrad_max_abs_grad}")

# %%
P, curve = fit(batch, init_params(cfg, 0), cfg, TrainConfig(epochs=20, seed=0),
               log=lambda e, loss, err: print(f"epoch {e:2d}  loss {loss:.4f}  error {err:.2f} deg"))

# %% [markdown]
# ## Per-head errors
#
# The fused head should do at least as well as any single level.

# %%
outs = predict(batch, P, cfg)
for term in GAZE_TERMS:
    ref = batch.g_o if term.endswith("_o") else batch.g_n
    err = angular_errors_deg(np.concatenate([head_directions(o, term) for o in outs]), ref).mean()
    print(f"{term:<10} {err:6.2f} deg")
