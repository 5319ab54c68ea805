"""Central finite-difference verification of the hand-written backward pass."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .gazedptr import GazeBatch, ModelConfig, backward, forward, init_params, loss_total
from .params import ToyModelParams

# parameters whose only route to the zone losses runs through the tri-plane hits
STOPPED_PREFIXES = ("head_gaze.", "enc_fuse.", "tok_fuse", "pose_proj", "enc_n.", "tok_n", "emb_level_n", "pyr_n")


@dataclass
class GradcheckReport:
    preset: str
    seed: int
    h: float
    n_checked: int
    max_rel_error: float
    median_rel_error: float
    worst_param: str
    stopgrad_n_params: int
    stopgrad_max_abs_grad: float  # analytic zone-loss gradient on the stopped set; must be exactly 0
    stopgrad_fd_max_abs: float  # same set, finite differences with live hits; nonzero if the path exists
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance and self.stopgrad_max_abs_grad == 0.0

    def to_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps round-off on near-zero entries from dominating."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def finite_difference(loss_fn, P: ToyModelParams, indices, h: float = 1e-5) -> np.ndarray:
    out = np.empty(len(indices))
    for k, i in enumerate(indices):
        old = P.flat[i]
        P.flat[i] = old + h
        lp = loss_fn()
        P.flat[i] = old - h
        lm = loss_fn()
        P.flat[i] = old
        out[k] = (lp - lm) / (2 * h)
    return out


def stopped_indices(P: ToyModelParams) -> np.ndarray:
    idx = [np.arange(*P.span(n)) for n in P.names() if n.startswith(STOPPED_PREFIXES)]
    return np.concatenate(idx)


def gradcheck(
    batch: GazeBatch,
    cfg: ModelConfig,
    seed: int = 0,
    n_params: int = 200,
    h: float = 1e-5,
    P: ToyModelParams | None = None,
) -> GradcheckReport:
    P = init_params(cfg, seed) if P is None else P.copy()
    rng = np.random.default_rng(seed)

    out = forward(batch, P, cfg)
    G = backward(out, batch, P, cfg)
    hits = out.hits  # held fixed so the numeric loss sees the same stop-gradient as backward
    idx = np.sort(rng.choice(P.size, size=min(n_params, P.size), replace=False))
    num = finite_difference(lambda: loss_total(forward(batch, P, cfg, hits), batch, cfg), P, idx, h)
    rel = relative_error(G.flat[idx], num)
    worst = int(np.argmax(rel))

    # zone losses alone: the stopped set must get exactly zero analytic gradient,
    # yet perturbing it does move the zone loss through the live tri-plane input
    zcfg = replace(cfg, gaze_weight=0.0)
    zout = forward(batch, P, zcfg)
    zG = backward(zout, batch, P, zcfg)
    stop = stopped_indices(P)
    probe = np.sort(rng.choice(P.span("head_gaze.fc2.W")[1] - P.span("head_gaze.fc2.W")[0], size=4, replace=False))
    probe = probe + P.span("head_gaze.fc2.W")[0]
    fd_live = finite_difference(lambda: loss_total(forward(batch, P, zcfg), batch, zcfg), P, probe, h)

    return GradcheckReport(
        preset=cfg.preset,
        seed=int(seed),
        h=h,
        n_checked=len(idx),
        max_rel_error=float(rel.max()),
        median_rel_error=float(np.median(rel)),
        worst_param=P.owner_of(int(idx[worst])),
        stopgrad_n_params=len(stop),
        stopgrad_max_abs_grad=float(np.abs(zG.flat[stop]).max()),
        stopgrad_fd_max_abs=float(np.abs(fd_live).max()),
    )
