"""Single-file pipeline configuration.

Structure (unknown keys, types, ranges) is checked against the shipped JSON
schema; cross-field rules that a schema cannot express are checked here.
``to_dict`` always writes the full effective configuration, so a saved file
reloads to exactly the same settings.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from .calib import BoardSpec
from .errors import ConfigError, IVGazeError
from .geom import PinholeCamera
from .model.gazedptr import PRESETS, ModelConfig
from .model.train import TrainConfig
from .normalize import virtual_camera
from .synthcab import LayoutConfig

_DMS = {"fx": 1000.0, "fy": 1000.0, "cx": 640.0, "cy": 400.0, "width": 1280, "height": 800}
# RealSense D435 colour stream at 1280x720
_DEPTH = {"fx": 910.0, "fy": 910.0, "cx": 640.0, "cy": 360.0, "width": 1280, "height": 720}
# keys of ModelConfig that live in other sections
_MODEL_DERIVED = ("image_size", "triplane_bands", "triplane_scale", "triplane_forward_only")


@lru_cache(maxsize=1)
def config_schema() -> dict:
    text = resources.files("ivgaze").joinpath("schemas/pipeline_config.schema.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class CamerasConfig:
    dms: dict = field(default_factory=lambda: dict(_DMS))
    depth: dict = field(default_factory=lambda: dict(_DEPTH))

    def dms_camera(self) -> PinholeCamera:
        return PinholeCamera.from_dict(self.dms)

    def depth_camera(self) -> PinholeCamera:
        return PinholeCamera.from_dict(self.depth)


@dataclass(frozen=True)
class CalibrationConfig:
    rows: int = 6
    cols: int = 9
    square_size: float = 0.04
    thickness: float = 0.003
    mirror: bool = False

    def board(self) -> BoardSpec:
        return BoardSpec(self.rows, self.cols, self.square_size, self.thickness)


@dataclass(frozen=True)
class NormalizationConfig:
    d_norm: float = 0.6
    virtual_fx: float = 960.0 * 64 / 224
    virtual_fy: float = 960.0 * 64 / 224
    out_width: int = 64
    out_height: int = 64
    method: str = "ours"

    def camera(self) -> PinholeCamera:
        return virtual_camera(self.virtual_fx, self.virtual_fy, self.out_width, self.out_height)


@dataclass(frozen=True)
class TriplaneConfig:
    bands: int = 8
    scale: float = 2.0
    forward_only: bool = False


@dataclass(frozen=True)
class MetricsConfig:
    ap_thresholds: tuple = (2.0, 4.0, 6.0, 8.0)
    bin_edges: tuple = (0.0, 20.0, 40.0, 60.0, 90.0)


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 512
    n_subjects: int = 6
    targets_per_zone: int = 6
    none_targets: int = 4
    n_boards: int = 1
    corner_noise_px: float = 0.0
    board_distance: tuple = (0.5, 1.5)
    depth_distance: tuple = (0.5, 1.0)


def _model_defaults(preset: str) -> dict:
    d = PRESETS[preset].to_dict()
    for k in _MODEL_DERIVED:
        d.pop(k)
    return d


def _normalization_defaults(preset: str) -> NormalizationConfig:
    size = PRESETS[preset].image_size
    f = 960.0 * size / 224
    return NormalizationConfig(virtual_fx=f, virtual_fy=f, out_width=size, out_height=size)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    cameras: CamerasConfig = field(default_factory=CamerasConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    normalization: NormalizationConfig = field(default_factory=NormalizationConfig)
    triplane: TriplaneConfig = field(default_factory=TriplaneConfig)
    model: dict = field(default_factory=lambda: _model_defaults("tiny"))
    training: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    # ------------------------------------------------------------ build

    @classmethod
    def from_dict(cls, data: dict, preset: Optional[str] = None) -> PipelineConfig:
        """Validate and fill defaults. ``preset`` overrides ``model.preset``."""
        try:
            jsonschema.validate(data, config_schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config error at {where}: {exc.message}") from None
        model_in = dict(data.get("model", {}))
        name = preset or model_in.get("preset", "tiny")
        model_in["preset"] = name
        model = {**_model_defaults(name), **model_in}

        def section(cls_, key, base=None):
            base = base if base is not None else cls_()
            return replace(base, **_tuples(data.get(key, {})))

        cfg = cls(
            seed=int(data.get("seed", 0)),
            cameras=section(CamerasConfig, "cameras"),
            calibration=section(CalibrationConfig, "calibration"),
            normalization=section(NormalizationConfig, "normalization", _normalization_defaults(name)),
            triplane=section(TriplaneConfig, "triplane"),
            model=model,
            training=_build(TrainConfig, data.get("training", {})),
            metrics=section(MetricsConfig, "metrics"),
            synth=section(SynthConfig, "synth"),
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, preset: Optional[str] = None) -> PipelineConfig:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        return cls.from_dict(data, preset)

    @classmethod
    def default(cls, preset: str = "tiny") -> PipelineConfig:
        return cls.from_dict({}, preset)

    # ------------------------------------------------------------ checks

    def validate(self) -> None:
        try:
            self.cameras.dms_camera()
            self.cameras.depth_camera()
            self.calibration.board()
            self.normalization.camera()
            self.model_config()
        except (ValueError, TypeError, IVGazeError) as exc:
            raise ConfigError(str(exc)) from None
        n = self.normalization
        if n.out_width != n.out_height:
            raise ConfigError("normalized images must be square (they are the model input)")
        if list(self.metrics.bin_edges) != sorted(set(self.metrics.bin_edges)):
            raise ConfigError("metrics.bin_edges must be strictly increasing")
        for lo, hi in (self.synth.board_distance, self.synth.depth_distance):
            if lo > hi:
                raise ConfigError("synth distance ranges must be ordered")

    # ------------------------------------------------------------ views

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            image_size=self.normalization.out_width,
            triplane_bands=self.triplane.bands,
            triplane_scale=self.triplane.scale,
            triplane_forward_only=self.triplane.forward_only,
            **self.model,
        )

    def train_config(self) -> TrainConfig:
        return replace(self.training, seed=self.seed)

    def layout(self) -> LayoutConfig:
        s = self.synth
        return LayoutConfig(
            targets_per_zone=s.targets_per_zone,
            none_targets=s.none_targets,
            dms_camera=dict(self.cameras.dms),
            depth_camera=dict(self.cameras.depth),
            board=asdict(self.calibration.board()),
            board_distance=tuple(s.board_distance),
            depth_distance=tuple(s.depth_distance),
            n_boards=s.n_boards,
            mirror=self.calibration.mirror,
        )

    def to_dict(self) -> dict:
        out = {"seed": self.seed, "model": dict(self.model)}
        for key in ("cameras", "calibration", "normalization", "triplane", "training", "metrics", "synth"):
            out[key] = _lists(asdict(getattr(self, key)))
        out["training"].pop("seed")  # the run seed is top-level
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_seed(self, seed: Optional[int]) -> PipelineConfig:
        return self if seed is None else replace(self, seed=int(seed))


def _build(cls_, values: dict):
    try:
        return cls_(**{**{f.name: getattr(cls_(), f.name) for f in fields(cls_)}, **values})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def _lists(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
