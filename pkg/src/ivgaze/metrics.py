"""Angular error, AP@k, gaze-zone precision/recall and range binning."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .annotate import ALL_ZONES, NONE_ZONE, ZONE_INDEX, ZONES
from .errors import EmptySet, LengthMismatch, MalformedReport, NotUnit, UnknownZone

AP_THRESHOLDS = (2.0, 4.0, 6.0, 8.0)
DEFAULT_BIN_EDGES = (0.0, 20.0, 40.0, 60.0, 90.0)
FRONTAL = np.array([0.0, 0.0, -1.0])


def _units(g, tol=1e-9) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if np.any(np.abs(np.linalg.norm(g, axis=-1) - 1.0) > tol):
        raise NotUnit("gaze vectors must be unit length")
    return g


def angular_errors_deg(g1, g2) -> np.ndarray:
    """Row-wise angle between unit vectors, degrees."""
    g1, g2 = _units(g1), _units(g2)
    return np.degrees(np.arccos(np.clip(np.sum(g1 * g2, axis=-1), -1.0, 1.0)))


def angular_error_deg(g1, g2) -> float:
    return float(angular_errors_deg(g1, g2))


def average_precision_at(errors: Sequence[float], k: float) -> float:
    """Fraction of errors strictly below ``k`` degrees."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise EmptySet("no errors to evaluate")
    if k <= 0:
        raise ValueError("threshold must be positive")
    return float(np.count_nonzero(e < k)) / e.size


def _zone_ids(zones) -> np.ndarray:
    try:
        return np.array([ZONE_INDEX[z] for z in zones], dtype=int)
    except KeyError as exc:
        raise UnknownZone(f"unknown zone {exc.args[0]!r}") from None


@dataclass
class ZoneReport:
    confusion: list  # [truth][pred], ordered as ALL_ZONES
    precision: dict  # zone -> value or None when undefined
    recall: dict
    macro_precision: float
    macro_recall: float
    accuracy: float


def zone_metrics(pred: Sequence[str], truth: Sequence[str]) -> ZoneReport:
    """Per-class precision/recall; macro averages skip the None class.

    A class with no predictions (precision) or no truth samples (recall) gets
    ``None`` for that quantity when it is also absent from the other list,
    and ``0.0`` otherwise; ``None`` entries do not enter the macro average.
    """
    if len(pred) != len(truth):
        raise LengthMismatch("prediction and truth lists differ in length")
    p, t = _zone_ids(pred), _zone_ids(truth)
    n = len(ALL_ZONES)
    C = np.zeros((n, n), dtype=int)
    np.add.at(C, (t, p), 1)
    precision, recall = {}, {}
    for i, z in enumerate(ALL_ZONES):
        tp = C[i, i]
        n_pred = C[:, i].sum()
        n_true = C[i, :].sum()
        if n_pred == 0 and n_true == 0:
            precision[z] = recall[z] = None
            continue
        precision[z] = float(tp / n_pred) if n_pred else 0.0
        recall[z] = float(tp / n_true) if n_true else 0.0

    def macro(d):
        vals = [d[z] for z in ZONES if d[z] is not None]
        return float(np.mean(vals)) if vals else 0.0

    acc = float(np.trace(C) / len(t)) if len(t) else 0.0
    return ZoneReport(C.tolist(), precision, recall, macro(precision), macro(recall), acc)


@dataclass
class RangeBins:
    edges: list
    counts: list  # len(edges) - 1 regular bins, then one overflow bin
    mean_errors: list  # None for empty bins


def range_bins(dirs, errors=None, edges: Sequence[float] = DEFAULT_BIN_EDGES, frontal=FRONTAL) -> RangeBins:
    """Bin samples by angle to the frontal direction, half-open ``[e_i, e_i+1)``.

    Angles at or beyond the last edge go to a trailing overflow bin.
    """
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing")
    dirs = np.atleast_2d(_units(dirs))
    f = np.asarray(frontal, dtype=np.float64)
    # atan2 keeps angles that sit on an edge on the edge; arccos drifts by ~1e-14
    ang = np.degrees(np.arctan2(np.linalg.norm(np.cross(dirs, f), axis=-1), dirs @ f))
    near = np.abs(ang[:, None] - edges[None, :]) < 1e-9
    ang = np.where(near.any(axis=1), edges[np.argmax(near, axis=1)], ang)
    idx = np.searchsorted(edges, ang, side="right") - 1
    idx = np.where(ang >= edges[-1], len(edges) - 1, idx)
    idx = np.where(ang < edges[0], len(edges) - 1, idx)
    nbins = len(edges)
    counts = np.bincount(idx, minlength=nbins)
    means = []
    err = None if errors is None else np.asarray(errors, dtype=np.float64)
    for b in range(nbins):
        if err is None or counts[b] == 0:
            means.append(None)
        else:
            means.append(float(np.mean(err[idx == b])))
    return RangeBins(edges.tolist(), counts.tolist(), means)


@dataclass
class EvalReport:
    n: int
    mean_angular_error: float
    ap: dict  # "2" -> fraction
    zones: Optional[ZoneReport] = None
    gaze_bins: Optional[RangeBins] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> EvalReport:
        try:
            zones = ZoneReport(**d["zones"]) if d.get("zones") else None
            bins = RangeBins(**d["gaze_bins"]) if d.get("gaze_bins") else None
            rep = cls(int(d["n"]), float(d["mean_angular_error"]), dict(d["ap"]), zones, bins, dict(d.get("extra", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedReport(f"malformed evaluation report: {exc}") from None
        if bins is not None and len(bins.counts) != len(bins.edges):
            raise MalformedReport("bin counts do not match the bin edges")
        return rep


def evaluate(
    pred_dirs,
    true_dirs,
    pred_zones: Optional[Sequence[str]] = None,
    true_zones: Optional[Sequence[str]] = None,
    thresholds: Sequence[float] = AP_THRESHOLDS,
    bin_edges: Sequence[float] = DEFAULT_BIN_EDGES,
) -> EvalReport:
    true_dirs = np.atleast_2d(np.asarray(true_dirs, dtype=np.float64))
    errs = angular_errors_deg(np.atleast_2d(pred_dirs), true_dirs)
    if errs.size == 0:
        raise EmptySet("nothing to evaluate")
    ap = {f"{k:g}": average_precision_at(errs, k) for k in thresholds}
    zones = zone_metrics(pred_zones, true_zones) if pred_zones is not None else None
    return EvalReport(
        n=int(errs.size),
        mean_angular_error=float(np.mean(errs)),
        ap=ap,
        zones=zones,
        gaze_bins=range_bins(true_dirs, errs, bin_edges),
    )


def format_table(report: EvalReport) -> str:
    lines = [f"samples: {report.n}", f"mean angular error: {report.mean_angular_error:.3f} deg"]
    for k, v in report.ap.items():
        lines.append(f"AP <{k} deg: {100 * v:.1f}%")
    if report.gaze_bins is not None:
        b = report.gaze_bins
        lines.append("gaze range    count  mean error")
        labels = [f"{b.edges[i]:g}-{b.edges[i + 1]:g}" for i in range(len(b.edges) - 1)] + [f">={b.edges[-1]:g}"]
        for lab, c, m in zip(labels, b.counts, b.mean_errors):
            lines.append(f"{lab:<12}{c:>7}  {'-' if m is None else f'{m:.3f}'}")
    if report.zones is not None:
        z = report.zones
        lines.append(f"zone accuracy: {100 * z.accuracy:.1f}%")
        lines.append(f"zone macro precision (w/o None): {100 * z.macro_precision:.1f}%")
        lines.append(f"zone macro recall (w/o None): {100 * z.macro_recall:.1f}%")
        for name in ALL_ZONES:
            p, r = z.precision[name], z.recall[name]
            fmt = lambda x: "-" if x is None else f"{100 * x:.1f}%"  # noqa: E731
            tag = " (excluded)" if name == NONE_ZONE else ""
            lines.append(f"  {name:<24} P {fmt(p):>7}  R {fmt(r):>7}{tag}")
    return "\n".join(lines)


def bins_svg(report: EvalReport, width: int = 420, height: int = 260) -> str:
    """Bar chart of mean error per gaze range; byte-stable for a fixed report."""
    if report.gaze_bins is None:
        raise MalformedReport("report has no range bins")
    b = report.gaze_bins
    labels = [f"{b.edges[i]:g}-{b.edges[i + 1]:g}" for i in range(len(b.edges) - 1)] + [f">{b.edges[-1]:g}"]
    vals = [0.0 if m is None else m for m in b.mean_errors]
    top = max(vals + [1e-9])
    margin, base = 40, height - 40
    slot = (width - 2 * margin) / len(vals)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="13">mean angular error by gaze range</text>',
        f'<line x1="{margin}" y1="{base}" x2="{width - margin}" y2="{base}" stroke="black"/>',
    ]
    for i, (lab, v) in enumerate(zip(labels, vals)):
        h = (base - 40) * v / top
        x = margin + i * slot + 0.15 * slot
        out.append(
            f'<rect x="{x:.2f}" y="{base - h:.2f}" width="{0.7 * slot:.2f}" height="{h:.2f}" fill="#4a78b5"/>'
        )
        out.append(f'<text x="{x + 0.35 * slot:.2f}" y="{base - h - 4:.2f}" text-anchor="middle" font-size="10">{v:.2f}</text>')
        out.append(f'<text x="{x + 0.35 * slot:.2f}" y="{base + 14}" text-anchor="middle" font-size="10">{lab}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
