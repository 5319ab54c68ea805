"""SGD training loop, inference and checkpoints for the toy model."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError, DivergenceDetected, EmptySet
from ..metrics import angular_errors_deg
from .gazedptr import (
    ForwardOutputs,
    GazeBatch,
    ModelConfig,
    PixelStats,
    backward,
    forward,
    loss_total,
    param_layout,
)
from .params import ToyModelParams


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.005
    epochs: int = 40
    batch_size: int = 32
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.epochs < 0 or self.batch_size < 1 or not 0 <= self.momentum < 1:
            raise ValueError("invalid training configuration")


@dataclass
class TrainingCurve:
    loss: list = field(default_factory=list)  # full train-set loss after each epoch
    error_deg: list = field(default_factory=list)  # mean angular error of the fused head
    initial_loss: float = float("nan")
    initial_error_deg: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def _chunks(n: int, size: int):
    for a in range(0, n, size):
        yield slice(a, min(a + size, n))


def predict(batch: GazeBatch, P: ToyModelParams, cfg: ModelConfig, chunk: int = 128) -> list[ForwardOutputs]:
    """Forward passes over fixed-order chunks (results concatenate in input order)."""
    return [forward(batch.subset(s), P, cfg) for s in _chunks(len(batch), chunk)]


def evaluate_batch(batch: GazeBatch, P: ToyModelParams, cfg: ModelConfig, chunk: int = 128) -> tuple[float, float]:
    """Sample-weighted loss and mean fused-head angular error over a labelled batch."""
    total, errs = 0.0, []
    for s in _chunks(len(batch), chunk):
        sub = batch.subset(s)
        out = forward(sub, P, cfg)
        total += loss_total(out, sub, cfg) * len(sub)
        errs.append(angular_errors_deg(out.g_o, sub.g_o))
    return total / len(batch), float(np.concatenate(errs).mean())


def fit(batch: GazeBatch, P: ToyModelParams, cfg: ModelConfig, tcfg: TrainConfig = TrainConfig(), log=None):
    """Minibatch SGD (optional heavy-ball momentum); returns new params and the curve.

    The input params are not modified. Shuffling draws from ``tcfg.seed`` only,
    so repeated calls give bit-identical curves.
    """
    n = len(batch)
    if n == 0:
        raise EmptySet("training set is empty")
    P = P.copy()
    velocity = np.zeros_like(P.flat)
    rng = np.random.default_rng(tcfg.seed)
    curve = TrainingCurve()
    curve.initial_loss, curve.initial_error_deg = evaluate_batch(batch, P, cfg)
    for epoch in range(tcfg.epochs):
        order = rng.permutation(n)
        for s in _chunks(n, tcfg.batch_size):
            sub = batch.subset(order[s])
            out = forward(sub, P, cfg)
            loss = loss_total(out, sub, cfg)
            if not np.isfinite(loss):
                raise DivergenceDetected(f"non-finite loss in epoch {epoch}")
            G = backward(out, sub, P, cfg)
            velocity = tcfg.momentum * velocity + G.flat
            P.flat -= tcfg.lr * velocity
        loss, err = evaluate_batch(batch, P, cfg)
        if not np.isfinite(loss):
            raise DivergenceDetected(f"non-finite loss after epoch {epoch}")
        curve.loss.append(loss)
        curve.error_deg.append(err)
        if log is not None:
            log(epoch, loss, err)
    return P, curve


def save_checkpoint(path, P: ToyModelParams, cfg: ModelConfig, seed: int, stats: PixelStats | None = None) -> None:
    """``<path>.npy`` holds the flat vector, ``<path>.json`` the header and
    ``<path>.pixels.npy`` the input standardization, when there is one."""
    path = Path(path)
    np.save(path.with_suffix(".npy"), P.flat)
    if stats is not None:
        np.save(path.with_suffix(".pixels.npy"), stats.to_array())
    header = {
        "preset": cfg.preset,
        "seed": int(seed),
        "n_params": int(P.size),
        "dims": {"image_size": cfg.image_size, "d": cfg.d, "heads": cfg.heads, "hidden": cfg.hidden},
        "layers": {
            "stream": cfg.stream_layers,
            "fusion": cfg.fusion_layers,
            "positional": cfg.pos_layers,
            "zone": cfg.zone_layers,
        },
        "config": cfg.to_dict(),
        "pixel_stats": stats is not None,
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[ToyModelParams, ModelConfig, PixelStats | None, dict]:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    cfg = ModelConfig(**header["config"])
    flat = np.load(path.with_suffix(".npy"))
    layout = param_layout(cfg)
    try:
        P = ToyModelParams(layout, flat)
    except ValueError as exc:
        raise DataError(f"checkpoint does not match its header: {exc}") from exc
    if not np.all(np.isfinite(P.flat)):
        raise DataError("checkpoint contains non-finite parameters")
    stats = PixelStats.from_array(np.load(path.with_suffix(".pixels.npy"))) if header.get("pixel_stats") else None
    return P, cfg, stats, header
