"""Desk-scale dual-stream gaze pyramid transformer with a tri-plane zone head.

Data flow for one batch::

    image_s --avgpool(stride 4..32)--> linear --> f_l^s          (l = 1..4, s in {o, n})
    [tok_n, f^n + E_n]           --enc_n--> f_final^n
    [tok_o, tok_vis, f^o + E_o]  --enc_o--> f_final^o, f_visual
    [tok_f, f_final^n + P(R), f_final^o + P(I)] --enc_fuse--> f_gaze --MLP--> g^n
    hits(o, R^T g^n)  (no gradient)  --enc_pos--> f_pos
    [tok_z, f_pos, f_visual]     --enc_zone--> f_zone

Each of the 11 gaze features and 3 zone features has its own MLP head.
Gaze heads regress (yaw, pitch) in radians, in the space of their stream:
original-stream heads against ``g^o``, normalized-stream heads and the
fused head against ``g^n``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from ..annotate import ALL_ZONES, ZONE_INDEX, vec_from_yawpitch_rad, yawpitch_rad_from_vecs
from ..errors import LabelMissing, ShapeMismatch
from ..triplane import encode_hits, intersect_triplane_batch, positional_encoding
from . import layers as L
from .params import ToyModelParams

N_LEVELS = 4
N_ZONES = len(ALL_ZONES)
STREAMS = ("o", "n")
GAZE_TERMS = tuple(f"level{l}_{s}" for l in range(1, N_LEVELS + 1) for s in STREAMS) + ("final_o", "final_n", "gaze")
ZONE_TERMS = ("zone_pos", "zone_visual", "zone_fused")


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    d: int = 32
    heads: int = 2
    stream_layers: int = 2
    fusion_layers: int = 2
    pos_layers: int = 2
    zone_layers: int = 2
    mlp_ratio: int = 2
    head_hidden: int = 32
    triplane_bands: int = 8
    triplane_scale: float = 2.0
    triplane_forward_only: bool = False
    pose_bands: int = 4
    level_embed: bool = True
    gaze_weight: float = 1.0
    zone_weight: float = 1.0
    preset: str = "tiny"

    def __post_init__(self):
        if self.image_size % 32:
            raise ValueError("image size must be a multiple of 32 (four pooling levels)")
        if self.d % self.heads:
            raise ValueError("model width must be divisible by the head count")

    @property
    def hidden(self) -> int:
        return self.mlp_ratio * self.d

    def level_grid(self, level: int) -> int:
        return self.image_size // 2 ** (level + 1)

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "tiny": ModelConfig(),
    # full-scale layout: 224 px input, 128-d features, 6-layer transformers
    # (the ResNet18 level widths 64/128/256/512 are replaced by the pooling stub)
    "paper": ModelConfig(
        image_size=224, d=128, heads=8, stream_layers=6, fusion_layers=6, pos_layers=2,
        zone_layers=6, mlp_ratio=4, head_hidden=128, preset="paper",
    ),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}")
    return replace(PRESETS[name], **overrides)


def param_layout(cfg: ModelConfig) -> dict[str, tuple]:
    d, hid = cfg.d, cfg.hidden
    out: dict[str, tuple] = {}
    for s in STREAMS:
        for l in range(1, N_LEVELS + 1):
            out.update(L.linear_shapes(f"pyr_{s}{l}", cfg.level_grid(l) ** 2, d))
    out["tok_n"] = (1, d)
    out["tok_o"] = (2, d)  # f_final^o, f_visual
    out["tok_fuse"] = (1, d)
    out["tok_pos"] = (1, d)
    out["tok_zone"] = (1, d)
    out["emb_level_o"] = (N_LEVELS, d)
    out["emb_level_n"] = (N_LEVELS, d)
    out["emb_plane"] = (3, d)
    out["emb_zone_in"] = (2, d)
    out["pose_proj"] = (6 * cfg.pose_bands, d)
    out.update(L.linear_shapes("pos_in", 6 * cfg.triplane_bands + 1, d))
    out.update(L.encoder_shapes("enc_o", d, cfg.stream_layers, hid))
    out.update(L.encoder_shapes("enc_n", d, cfg.stream_layers, hid))
    out.update(L.encoder_shapes("enc_fuse", d, cfg.fusion_layers, hid))
    out.update(L.encoder_shapes("enc_pos", d, cfg.pos_layers, hid))
    out.update(L.encoder_shapes("enc_zone", d, cfg.zone_layers, hid))
    for term in GAZE_TERMS:
        out.update(L.mlp_shapes(f"head_{term}", d, cfg.head_hidden, 2))
    for term in ZONE_TERMS:
        out.update(L.mlp_shapes(f"head_{term}", d, cfg.head_hidden, N_ZONES))
    return out


def init_params(cfg: ModelConfig, seed: int = 0) -> ToyModelParams:
    rng = np.random.default_rng(seed)
    P = ToyModelParams(param_layout(cfg))
    for name in P.names():
        view = P[name]
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "W" or name == "pose_proj":
            bound = 1.0 / np.sqrt(view.shape[0])
            view[...] = rng.uniform(-bound, bound, size=view.shape)
        elif leaf == "gamma":
            view[...] = 1.0
        elif leaf in ("b", "beta"):
            view[...] = 0.0
        else:  # learnable tokens and embeddings
            view[...] = rng.normal(0.0, 0.02, size=view.shape)
    return P


@dataclass
class GazeBatch:
    img_o: np.ndarray  # (B, S, S) original face crops
    img_n: np.ndarray  # (B, S, S) normalized images
    R: np.ndarray  # (B, 3, 3) normalization rotations
    face_center: np.ndarray  # (B, 3) meters, DMS frame
    g_o: Optional[np.ndarray] = None  # (B, 3) gaze labels, original space
    zone: Optional[np.ndarray] = None  # (B,) zone indices

    def __len__(self):
        return len(self.img_o)

    @property
    def g_n(self) -> Optional[np.ndarray]:
        return None if self.g_o is None else np.einsum("bij,bj->bi", self.R, self.g_o)

    def subset(self, idx) -> GazeBatch:
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return GazeBatch(
            self.img_o[idx], self.img_n[idx], self.R[idx], self.face_center[idx], pick(self.g_o), pick(self.zone)
        )


@dataclass
class PixelStats:
    """Per-pixel input standardization fitted on a training set.

    Raw renders share a large common offset that makes plain SGD on the
    pooling projections badly conditioned; centring and scaling each pixel
    fixes that without touching the (linear) pyramid stub.
    """

    mean: np.ndarray  # (2, S, S): original stream, normalized stream
    std: np.ndarray

    @classmethod
    def from_batch(cls, batch: GazeBatch, floor: float = 0.05) -> PixelStats:
        imgs = (batch.img_o, batch.img_n)
        return cls(np.stack([x.mean(axis=0) for x in imgs]), np.stack([x.std(axis=0) + floor for x in imgs]))

    def apply(self, batch: GazeBatch) -> GazeBatch:
        if batch.img_o.shape[1:] != self.mean.shape[1:]:
            raise ShapeMismatch(f"stats for {self.mean.shape[1:]} images, batch has {batch.img_o.shape[1:]}")
        return replace(
            batch,
            img_o=(batch.img_o - self.mean[0]) / self.std[0],
            img_n=(batch.img_n - self.mean[1]) / self.std[1],
        )

    def to_array(self) -> np.ndarray:
        return np.stack([self.mean, self.std])

    @classmethod
    def from_array(cls, a: np.ndarray) -> PixelStats:
        return cls(a[0], a[1])


@dataclass
class ForwardOutputs:
    gaze: dict  # term -> (B, 2) predicted (yaw, pitch), radians
    zone_logits: dict  # term -> (B, N_ZONES)
    g_n: np.ndarray  # (B, 3) fused prediction, normalized space
    g_o: np.ndarray  # (B, 3) converted back with R^T
    hits: tuple  # (points (B,3,3), valid (B,3)) fed to the positional stream
    cache: dict = field(repr=False, default_factory=dict)

    def zone_probs(self, term: str = "zone_fused") -> np.ndarray:
        return np.exp(L.log_softmax(self.zone_logits[term]))


def _pool(img: np.ndarray, stride: int) -> np.ndarray:
    B, H, W = img.shape
    g = H // stride
    return img.reshape(B, g, stride, g, stride).mean(axis=(2, 4)).reshape(B, g * g)


def pyramid_features(img: np.ndarray, P: ToyModelParams, cfg: ModelConfig, stream: str):
    """Four level features ``(B, d)``: average-pooled grids at strides 4, 8, 16, 32."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[1:] != (cfg.image_size, cfg.image_size):
        raise ShapeMismatch(f"expected (B, {cfg.image_size}, {cfg.image_size}) images, got {img.shape}")
    feats, caches = [], []
    for l in range(1, N_LEVELS + 1):
        f, c = L.linear_forward(_pool(img, 2 ** (l + 1)), P, f"pyr_{stream}{l}")
        feats.append(f)
        caches.append(c)
    return feats, caches


def stream_aggregate(features, tokens, P, cfg: ModelConfig, name: str, level_emb: Optional[str] = None):
    """Run tokens followed by the level features through a stream encoder.

    Returns the encoder outputs at the token positions ``(B, n_tok, d)``.
    """
    B = features[0].shape[0]
    tok = np.broadcast_to(tokens, (B,) + tokens.shape)
    feats = np.stack(features, axis=1)
    if level_emb is not None:
        feats = feats + P[level_emb]
    seq = np.concatenate([tok, feats], axis=1)
    out, cache = L.encoder_forward(seq, P, name, _layers(cfg, name), cfg.heads)
    return out[:, : tokens.shape[0]], (cache, tokens.shape[0], seq.shape[1])


def _stream_backward(d_tok_out, agg_cache, P, G, tok_name, level_emb):
    cache, n_tok, T = agg_cache
    B, _, d = d_tok_out.shape
    dy = np.zeros((B, T, d))
    dy[:, :n_tok] = d_tok_out
    dseq = L.encoder_backward(dy, cache, P, G)
    G[tok_name] += dseq[:, :n_tok].sum(axis=0)
    dfeat = dseq[:, n_tok:]
    if level_emb is not None:
        G[level_emb] += dfeat.sum(axis=0)
    return dfeat


def _layers(cfg: ModelConfig, name: str) -> int:
    return {
        "enc_o": cfg.stream_layers,
        "enc_n": cfg.stream_layers,
        "enc_fuse": cfg.fusion_layers,
        "enc_pos": cfg.pos_layers,
        "enc_zone": cfg.zone_layers,
    }[name]


def pose_encoding(z_axes: np.ndarray, bands: int) -> np.ndarray:
    """Sinusoidal encoding of camera z-axes ``(B, 3)`` -> ``(B, 6 * bands)``."""
    return positional_encoding(z_axes[:, None, :], bands, scale=1.0)


def camera_z_axes(R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """z-axes of the camera poses: ``R C`` (normalized) and ``C = I`` (original).

    With ``R = [x; y; z]`` the virtual camera's z-axis is the third row.
    """
    B = len(R)
    return R[:, 2, :].copy(), np.tile([0.0, 0.0, 1.0], (B, 1))


def fuse_dual_stream(f_n_final, f_o_final, pose_n, pose_o, P, cfg: ModelConfig):
    """Fusion transformer over the two stream features with pose encodings added.

    ``pose_*`` are encoded z-axes ``(B, 6 * pose_bands)``.
    """
    pn = pose_n @ P["pose_proj"]
    po = pose_o @ P["pose_proj"]
    feats = [f_n_final + pn, f_o_final + po]
    out, cache = stream_aggregate(feats, P["tok_fuse"], P, cfg, "enc_fuse")
    return out[:, 0], (cache, pose_n, pose_o)


def forward(batch: GazeBatch, P: ToyModelParams, cfg: ModelConfig, frozen_hits=None) -> ForwardOutputs:
    """Full forward pass. ``frozen_hits`` replaces the tri-plane input (used by gradient checks)."""
    cache: dict = {}
    gaze, zone_logits = {}, {}
    feats = {}
    for s, img in (("o", batch.img_o), ("n", batch.img_n)):
        feats[s], cache[f"pyr_{s}"] = pyramid_features(img, P, cfg, s)
        for l in range(1, N_LEVELS + 1):
            term = f"level{l}_{s}"
            gaze[term], cache["head_" + term] = L.mlp_forward(feats[s][l - 1], P, "head_" + term)

    emb_n = "emb_level_n" if cfg.level_embed else None
    emb_o = "emb_level_o" if cfg.level_embed else None
    out_n, cache["agg_n"] = stream_aggregate(feats["n"], P["tok_n"], P, cfg, "enc_n", emb_n)
    out_o, cache["agg_o"] = stream_aggregate(feats["o"], P["tok_o"], P, cfg, "enc_o", emb_o)
    f_final_n, f_final_o, f_visual = out_n[:, 0], out_o[:, 0], out_o[:, 1]
    gaze["final_n"], cache["head_final_n"] = L.mlp_forward(f_final_n, P, "head_final_n")
    gaze["final_o"], cache["head_final_o"] = L.mlp_forward(f_final_o, P, "head_final_o")

    z_n, z_o = camera_z_axes(batch.R)
    pose_n = pose_encoding(z_n, cfg.pose_bands)
    pose_o = pose_encoding(z_o, cfg.pose_bands)
    f_gaze, cache["fuse"] = fuse_dual_stream(f_final_n, f_final_o, pose_n, pose_o, P, cfg)
    gaze["gaze"], cache["head_gaze"] = L.mlp_forward(f_gaze, P, "head_gaze")

    # tri-plane path: forward value only, no gradient flows back into the gaze branch
    g_n = vec_from_yawpitch_rad(gaze["gaze"][:, 0], gaze["gaze"][:, 1])
    g_o = np.einsum("bji,bj->bi", batch.R, g_n)
    if frozen_hits is None:
        points, valid, _ = intersect_triplane_batch(batch.face_center, g_o, cfg.triplane_forward_only)
    else:
        points, valid = frozen_hits
    enc = encode_hits(points, valid, cfg.triplane_bands, cfg.triplane_scale)
    tok_in, cache["pos_in"] = L.linear_forward(enc, P, "pos_in")
    tok_in = tok_in + P["emb_plane"]
    out_p, cache["agg_pos"] = stream_aggregate(list(tok_in.transpose(1, 0, 2)), P["tok_pos"], P, cfg, "enc_pos")
    f_pos = out_p[:, 0]

    zin = [f_pos + P["emb_zone_in"][0], f_visual + P["emb_zone_in"][1]]
    out_z, cache["agg_zone"] = stream_aggregate(zin, P["tok_zone"], P, cfg, "enc_zone")
    f_zone = out_z[:, 0]

    for term, f in (("zone_pos", f_pos), ("zone_visual", f_visual), ("zone_fused", f_zone)):
        zone_logits[term], cache["head_" + term] = L.mlp_forward(f, P, "head_" + term)

    return ForwardOutputs(gaze, zone_logits, g_n, g_o, (points, valid), cache)


def labels_for(batch: GazeBatch) -> dict:
    if batch.g_o is None or batch.zone is None:
        raise LabelMissing("batch carries no gaze or zone labels")
    yp_o = yawpitch_rad_from_vecs(batch.g_o)
    yp_n = yawpitch_rad_from_vecs(batch.g_n)
    targets = {}
    for term in GAZE_TERMS:
        targets[term] = yp_o if term.endswith("_o") else yp_n
    return {"gaze": targets, "zone": np.asarray(batch.zone, dtype=int)}


def loss_terms(outputs: ForwardOutputs, batch: GazeBatch) -> tuple[dict, dict]:
    """Per-term losses and their gradients w.r.t. the head outputs."""
    lab = labels_for(batch)
    values, grads = {}, {}
    for term in GAZE_TERMS:
        values[term], grads[term] = L.l1_loss(outputs.gaze[term], lab["gaze"][term])
    for term in ZONE_TERMS:
        values[term], grads[term] = L.cross_entropy(outputs.zone_logits[term], lab["zone"])
    return values, grads


def loss_total(outputs: ForwardOutputs, batch: GazeBatch, cfg: ModelConfig) -> float:
    values, _ = loss_terms(outputs, batch)
    l1 = sum(values[t] for t in GAZE_TERMS)
    l2 = sum(values[t] for t in ZONE_TERMS)
    return cfg.gaze_weight * l1 + cfg.zone_weight * l2


def backward(outputs: ForwardOutputs, batch: GazeBatch, P: ToyModelParams, cfg: ModelConfig) -> ToyModelParams:
    """Exact reverse-mode gradient of ``loss_total`` (tri-plane input treated as constant)."""
    G = P.zeros_like()
    c = outputs.cache
    _, dhead = loss_terms(outputs, batch)
    for t in GAZE_TERMS:
        dhead[t] = dhead[t] * cfg.gaze_weight
    for t in ZONE_TERMS:
        dhead[t] = dhead[t] * cfg.zone_weight

    # zone heads and the zone transformer
    df_pos = L.mlp_backward(dhead["zone_pos"], c["head_zone_pos"], P, G)
    df_visual = L.mlp_backward(dhead["zone_visual"], c["head_zone_visual"], P, G)
    df_zone = L.mlp_backward(dhead["zone_fused"], c["head_zone_fused"], P, G)
    dz = _stream_backward(df_zone[:, None], c["agg_zone"], P, G, "tok_zone", None)
    G["emb_zone_in"] += dz.sum(axis=0)
    df_pos = df_pos + dz[:, 0]
    df_visual = df_visual + dz[:, 1]

    # positional stream; stops at the encoded hits
    dtok = _stream_backward(df_pos[:, None], c["agg_pos"], P, G, "tok_pos", None)
    G["emb_plane"] += dtok.sum(axis=0)
    L.linear_backward(dtok, c["pos_in"], P, G, need_dx=False)

    # fused gaze head and fusion transformer
    df_gaze = L.mlp_backward(dhead["gaze"], c["head_gaze"], P, G)
    fuse_cache, pose_n, pose_o = c["fuse"]
    dfu = _stream_backward(df_gaze[:, None], fuse_cache, P, G, "tok_fuse", None)
    G["pose_proj"] += pose_n.T @ dfu[:, 0] + pose_o.T @ dfu[:, 1]
    df_final_n = dfu[:, 0] + L.mlp_backward(dhead["final_n"], c["head_final_n"], P, G)
    df_final_o = dfu[:, 1] + L.mlp_backward(dhead["final_o"], c["head_final_o"], P, G)

    emb = {s: (f"emb_level_{s}" if cfg.level_embed else None) for s in STREAMS}
    dfeat = {
        "n": _stream_backward(df_final_n[:, None], c["agg_n"], P, G, "tok_n", emb["n"]),
        "o": _stream_backward(np.stack([df_final_o, df_visual], axis=1), c["agg_o"], P, G, "tok_o", emb["o"]),
    }
    for s in STREAMS:
        for l in range(1, N_LEVELS + 1):
            term = f"level{l}_{s}"
            df = dfeat[s][:, l - 1] + L.mlp_backward(dhead[term], c["head_" + term], P, G)
            L.linear_backward(df, c[f"pyr_{s}"][l - 1], P, G, need_dx=False)
    return G


def loss_and_grad(batch: GazeBatch, P: ToyModelParams, cfg: ModelConfig):
    out = forward(batch, P, cfg)
    return loss_total(out, batch, cfg), backward(out, batch, P, cfg), out


def predict_zones(outputs: ForwardOutputs, term: str = "zone_fused") -> list[str]:
    return [ALL_ZONES[i] for i in np.argmax(outputs.zone_logits[term], axis=1)]


def head_directions(outputs: ForwardOutputs, term: str) -> np.ndarray:
    """Unit gaze vectors predicted by one head, in that head's own space."""
    yp = outputs.gaze[term]
    return vec_from_yawpitch_rad(yp[:, 0], yp[:, 1])


def batch_from_dataset(ds) -> GazeBatch:
    """Wrap a synthetic dataset (records plus both image stacks) as a labelled batch."""
    g_o = np.array([r.gaze.direction for r in ds.records])
    zone = np.array([ZONE_INDEX[r.zone] for r in ds.records])
    fc = np.array([r.face_center for r in ds.records])
    return GazeBatch(ds.images_o, ds.images_n, ds.R, fc, g_o, zone)
