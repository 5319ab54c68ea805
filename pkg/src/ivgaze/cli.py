"""Command-line pipeline driver: ``ivgaze <subcommand> [--config C] [--seed S] [--out DIR] [--preset P]``.

Every subcommand writes its artifacts under ``--out`` plus a ``run.json``
holding the effective configuration and seed. Failures print one JSON
object on stderr and exit with 2 (config), 3 (data) or 4 (numerical).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .annotate import ALL_ZONES, ZONE_INDEX, GazeLabel, Posture, SampleRecord, build_record, read_jsonl, write_jsonl
from .calib import CornerObservations, CrossCameraCalibration, calibrate, transfer_point
from .config import PipelineConfig
from .errors import ConfigError, DataError, IVGazeError, NumericalError
from .io import read_pgm, write_pgm
from .geom import PinholeCamera
from .metrics import EvalReport, angular_errors_deg, bins_svg, evaluate, format_table
from .model import GAZE_TERMS, ZONE_TERMS, GazeBatch, PixelStats, batch_from_dataset, init_params
from .model.gazedptr import head_directions
from .model.gradcheck import gradcheck
from .model.train import fit, load_checkpoint, predict, save_checkpoint
from .normalize import NormalizationResult, normalize_record
from .synthcab import (
    build_dataset,
    crop_camera,
    default_subjects,
    generate_cabin,
    render_face,
    sample_frames,
    simulate_chessboard,
)

log = logging.getLogger("ivgaze")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"usage error: {message}")


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None


def _read_jsonl_dicts(path) -> list[dict]:
    try:
        lines = Path(path).read_text().splitlines()
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    out = []
    for lineno, line in enumerate(lines, 1):
        if line.strip():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


def _write_jsonl_dicts(path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _rel(path: Path, start: Path) -> str:
    return Path(os.path.relpath(path.resolve(), start.resolve())).as_posix()


def _run_log(out: Path, command: str, cfg: PipelineConfig, **extra) -> None:
    _dump(out / "run.json", {"command": command, "seed": cfg.seed, "version": __version__, "config": cfg.to_dict(), **extra})


# ---------------------------------------------------------------- simulate


def cmd_simulate(args, cfg: PipelineConfig, out: Path) -> dict:
    scene = generate_cabin(cfg.seed, cfg.layout())
    _dump(out / "scene.json", scene.to_dict())
    sim = simulate_chessboard(
        scene, cfg.synth.corner_noise_px, np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    )
    sim.dms_obs.to_jsonl(out / "corners_dms.jsonl")
    sim.depth_obs.to_jsonl(out / "corners_depth.jsonl")
    _write_jsonl_dicts(out / "targets_depth.jsonl", scene.targets_in_depth_frame())

    n, k = cfg.synth.n_samples, cfg.synth.n_subjects
    size, focal = cfg.normalization.out_width, cfg.normalization.virtual_fx
    per = [n // k + (1 if i < n % k else 0) for i in range(k)]
    records = []
    for subj, m in zip(default_subjects(k, cfg.seed), per):
        if m:
            records.extend(sample_frames(scene, subj, m))
    (out / "crops").mkdir(exist_ok=True)
    faces = []
    for i, rec in enumerate(records):
        cam = crop_camera(rec.face_center, size, focal)
        name = f"crops/{i:06d}.pgm"
        write_pgm(out / name, render_face(rec, cam))
        rec.image = {"camera": cam.to_dict(), "original": name}
        faces.append(
            {
                "subject_id": rec.subject_id,
                "camera_id": rec.camera_id,
                "target_id": rec.target_id,
                "face_center": rec.face_center.tolist(),
                "landmarks": [p.tolist() for p in rec.landmarks],
                "posture": rec.posture.value,
                "head_rotation": rec.head_rotation.tolist(),
                "image": rec.image,
            }
        )
    _write_jsonl_dicts(out / "faces.jsonl", faces)
    write_jsonl(out / "records.jsonl", records)
    return {"samples": len(records), "targets": len(scene.all_targets())}


# ---------------------------------------------------------------- calibrate


def cmd_calibrate(args, cfg: PipelineConfig, out: Path) -> dict:
    dms = CornerObservations.from_jsonl(_need(args.dms_corners, "--dms-corners"))
    depth = CornerObservations.from_jsonl(_need(args.depth_corners, "--depth-corners"))
    calib = calibrate(
        dms, depth, cfg.cameras.dms_camera(), cfg.cameras.depth_camera(), cfg.calibration.board(), cfg.calibration.mirror
    )
    _dump(out / "calibration.json", calib.to_dict())
    return {"residual_px": calib.residual_px}


# ---------------------------------------------------------------- annotate


def cmd_annotate(args, cfg: PipelineConfig, out: Path) -> dict:
    targets_path = Path(_need(args.targets, "--targets"))
    faces_path = Path(_need(args.faces, "--faces"))
    calib = CrossCameraCalibration.from_dict(_load_json(args.calibration)) if args.calibration else None
    targets = {}
    for row in _read_jsonl_dicts(targets_path):
        try:
            if "position" in row:
                p = np.asarray(row["position"], dtype=np.float64)
            else:
                if calib is None:
                    raise ConfigError("depth-frame targets need --calibration")
                p = transfer_point(calib, np.asarray(row["p_depth"], dtype=np.float64))
            targets[row["target_id"]] = (row["zone"], p)
        except KeyError as exc:
            raise DataError(f"{targets_path}: target row missing {exc}") from None
    records = []
    for row in _read_jsonl_dicts(faces_path):
        try:
            zone, t = targets[row["target_id"]]
            image = row.get("image")
            if image and "original" in image:
                image = {**image, "original": _rel(faces_path.parent / image["original"], out)}
            records.append(
                build_record(
                    row["face_center"], t, zone, row.get("landmarks", []), Posture(row.get("posture", "free")),
                    subject_id=row["subject_id"], camera_id=row.get("camera_id", "dms"), target_id=row["target_id"],
                    image=image, head_rotation=row.get("head_rotation"),
                )
            )
        except KeyError as exc:
            raise DataError(f"{faces_path}: unknown target or missing field {exc}") from None
    write_jsonl(out / "records.jsonl", records)
    return {"records": len(records)}


# ---------------------------------------------------------------- normalize


def cmd_normalize(args, cfg: PipelineConfig, out: Path) -> dict:
    rec_path = Path(_need(args.records, "--records"))
    records = read_jsonl(rec_path)
    nc = cfg.normalization
    K_n = nc.camera()
    (out / "normalized").mkdir(exist_ok=True)
    for i, rec in enumerate(records):
        if not rec.image or "original" not in rec.image or "camera" not in rec.image:
            raise DataError(f"record {i} has no original raster and camera")
        src = rec_path.parent / rec.image["original"]
        img_n, norm = normalize_record(
            rec, read_pgm(src), PinholeCamera.from_dict(rec.image["camera"]), K_n, nc.d_norm, nc.method
        )
        name = f"normalized/{i:06d}.pgm"
        write_pgm(out / name, img_n)
        rec.image = {**rec.image, "original": _rel(src, out), "normalized": name}
        rec.normalization = norm.to_dict()
    write_jsonl(out / "records.jsonl", records)
    return {"records": len(records), "method": nc.method}


# ---------------------------------------------------------------- train / eval


def load_batch(records_path) -> tuple[list[SampleRecord], GazeBatch]:
    """Labelled model batch from a normalized JSONL dataset (rasters relative to the file)."""
    records_path = Path(records_path)
    records = read_jsonl(records_path)
    if not records:
        raise DataError(f"{records_path}: no records")
    imgs_o, imgs_n, Rs = [], [], []
    for i, rec in enumerate(records):
        if not rec.image or "normalized" not in rec.image or rec.normalization is None:
            raise DataError(f"record {i} is not normalized; run the normalize stage first")
        imgs_o.append(read_pgm(records_path.parent / rec.image["original"]))
        imgs_n.append(read_pgm(records_path.parent / rec.image["normalized"]))
        Rs.append(NormalizationResult.from_dict(rec.normalization).R)
    batch = GazeBatch(
        np.stack(imgs_o),
        np.stack(imgs_n),
        np.stack(Rs),
        np.array([r.face_center for r in records]),
        np.array([r.gaze.direction for r in records]),
        np.array([ZONE_INDEX[r.zone] for r in records]),
    )
    return records, batch


def cmd_train(args, cfg: PipelineConfig, out: Path) -> dict:
    _, batch = load_batch(_need(args.data, "--data"))
    mcfg = cfg.model_config()
    if batch.img_o.shape[1:] != (mcfg.image_size, mcfg.image_size):
        raise DataError(f"dataset rasters are {batch.img_o.shape[1:]}, model expects {mcfg.image_size}")
    stats = PixelStats.from_batch(batch)
    P, curve = fit(
        stats.apply(batch), init_params(mcfg, cfg.seed), mcfg, cfg.train_config(),
        log=lambda e, loss, err: log.info("epoch %d loss %.5f error %.3f deg", e, loss, err),
    )
    save_checkpoint(out / "checkpoint", P, mcfg, cfg.seed, stats)
    _dump(out / "curve.json", curve.to_dict())
    return {"final_loss": curve.loss[-1] if curve.loss else curve.initial_loss,
            "final_error_deg": curve.error_deg[-1] if curve.error_deg else curve.initial_error_deg}


def model_report(records, batch: GazeBatch, ckpt, cfg: PipelineConfig) -> EvalReport:
    P, mcfg, stats, _ = load_checkpoint(ckpt)
    if stats is not None:
        batch = stats.apply(batch)
    outs = predict(batch, P, mcfg)
    g_pred = np.concatenate([o.g_o for o in outs])
    zones = [ALL_ZONES[i] for o in outs for i in np.argmax(o.zone_logits["zone_fused"], axis=1)]
    report = evaluate(
        g_pred, batch.g_o, zones, [r.zone for r in records], cfg.metrics.ap_thresholds, cfg.metrics.bin_edges
    )
    heads = {}
    for term in GAZE_TERMS:
        ref = batch.g_o if term.endswith("_o") else batch.g_n
        heads[term] = float(angular_errors_deg(np.concatenate([head_directions(o, term) for o in outs]), ref).mean())
    acc = {}
    for term in ZONE_TERMS:
        pred = np.concatenate([np.argmax(o.zone_logits[term], axis=1) for o in outs])
        acc[term] = float(np.mean(pred == batch.zone))
    report.extra = {"head_error_deg": heads, "zone_accuracy": acc}
    return report


def predictions_report(records, path, cfg: PipelineConfig) -> EvalReport:
    rows = _read_jsonl_dicts(path)
    if len(rows) != len(records):
        raise DataError(f"{len(rows)} predictions for {len(records)} records")
    try:
        g = np.array([GazeLabel.from_vector(r["gaze"]).direction for r in rows])
        zones = [r["zone"] for r in rows] if all("zone" in r for r in rows) else None
    except KeyError as exc:
        raise DataError(f"prediction row missing {exc}") from None
    truth = np.array([r.gaze.direction for r in records])
    return evaluate(
        g, truth, zones, [r.zone for r in records] if zones else None, cfg.metrics.ap_thresholds, cfg.metrics.bin_edges
    )


def cmd_eval(args, cfg: PipelineConfig, out: Path) -> dict:
    data = _need(args.data, "--data")
    if args.predictions:
        report = predictions_report(read_jsonl(data), args.predictions, cfg)
    else:
        records, batch = load_batch(data)
        report = model_report(records, batch, _need(args.checkpoint, "--checkpoint"), cfg)
    (out / "eval.json").write_text(report.to_json() + "\n")
    (out / "eval_bins.svg").write_text(bins_svg(report))
    print(format_table(report))
    return {"mean_angular_error": report.mean_angular_error, "ap": report.ap}


def cmd_report(args, cfg: PipelineConfig, out: Path) -> dict:
    report = EvalReport.from_dict(_load_json(_need(args.report, "--report")))
    table = format_table(report)
    (out / "report.txt").write_text(table + "\n")
    (out / "report_bins.svg").write_text(bins_svg(report))
    print(table)
    return {}


# ---------------------------------------------------------------- gradcheck


def cmd_gradcheck(args, cfg: PipelineConfig, out: Path) -> dict:
    mcfg = cfg.model_config()
    ds = build_dataset(
        generate_cabin(cfg.seed), args.batch, cfg.seed, mcfg.image_size, cfg.normalization.virtual_fx,
        cfg.normalization.d_norm, n_subjects=min(args.batch, 3),
    )
    batch = batch_from_dataset(ds)
    report = gradcheck(PixelStats.from_batch(batch).apply(batch), mcfg, cfg.seed, n_params=args.n_params)
    _dump(out / "gradcheck.json", report.to_dict())
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    if not report.passed:
        raise NumericalError(f"gradient check failed: max relative error {report.max_rel_error:.3g}")
    return {"max_rel_error": report.max_rel_error}


# ---------------------------------------------------------------- driver


def _need(value, flag: str):
    if value is None:
        raise ConfigError(f"missing required flag {flag}")
    return value


COMMANDS = {
    "simulate": (cmd_simulate, "emit a synthetic cabin scene, chessboard corners, faces, records and crops"),
    "calibrate": (cmd_calibrate, "estimate the depth-to-DMS transform from two corner files"),
    "annotate": (cmd_annotate, "gaze records from targets and face centers"),
    "normalize": (cmd_normalize, "normalized rasters and updated records"),
    "train": (cmd_train, "train the toy model; writes a checkpoint and the training curve"),
    "eval": (cmd_eval, "evaluate a checkpoint (or a predictions file) on a dataset"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of the model gradient"),
    "report": (cmd_report, "table and SVG chart from an evaluation report"),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", default=".", help="output directory (created if needed)")
    common.add_argument("--preset", choices=["tiny", "paper"], help="model preset")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="ivgaze", description="In-vehicle gaze estimation pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = {name: sub.add_parser(name, parents=[common], help=text) for name, (_, text) in COMMANDS.items()}
    p["calibrate"].add_argument("--dms-corners")
    p["calibrate"].add_argument("--depth-corners")
    p["annotate"].add_argument("--targets", help="JSONL of {target_id, zone, position | p_depth}")
    p["annotate"].add_argument("--faces", help="JSONL of frames with face_center and target_id")
    p["annotate"].add_argument("--calibration", help="calibration JSON for depth-frame targets")
    p["normalize"].add_argument("--records")
    for name in ("train", "eval"):
        p[name].add_argument("--data", help="normalized records JSONL")
    p["eval"].add_argument("--checkpoint", help="checkpoint path without suffix")
    p["eval"].add_argument("--predictions", help="JSONL of {gaze: [x, y, z], zone} in record order")
    p["gradcheck"].add_argument("--n-params", type=int, default=200)
    p["gradcheck"].add_argument("--batch", type=int, default=4)
    p["report"].add_argument("--report", help="eval.json")
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        cfg = PipelineConfig.load(args.config, args.preset) if args.config else PipelineConfig.default(args.preset or "tiny")
        cfg = cfg.with_seed(args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        fn, _ = COMMANDS[args.command]
        summary = fn(args, cfg, out)
        _run_log(out, args.command, cfg, summary=summary)
        return 0
    except IVGazeError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
    except OSError as exc:
        err = {"error": "DataError", "message": str(exc), "exit_code": DataError.exit_code}
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    return err["exit_code"]


def main() -> None:
    sys.exit(run())
