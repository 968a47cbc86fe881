"""Evaluation: error decomposition, detection labels, and report math.

Position error splits into along-needle and across-needle components in
the ground-truth needle frame.  Orientation RMS folds out 180-degree
flips (reported separately as flip_rate).  All rates are fractions of
the relevant frame counts; the report is a pure function of the per-frame
records, so it can be recomputed from a written trace byte-for-byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import heading, normalize_angle

__all__ = [
    "CORRECT", "INCORRECT", "NO_DETECTION",
    "MetricsReport",
    "classify_detection",
    "compute_metrics",
    "decompose_error",
    "default_tolerance_mm",
    "metrics_from_trace",
    "read_trace_csv",
]

CORRECT = "correct"
INCORRECT = "incorrect"
NO_DETECTION = "no_detection"


def decompose_error(est_center, gt_center, gt_theta):
    """Center error in the ground-truth needle frame: (along, across).

    along = e . h, across = e . (S h) with h the ground-truth heading and
    S the +90 degree rotation, so "across" is positive to the left of the
    needle.
    """
    e = np.asarray(est_center, dtype=float) - np.asarray(gt_center, dtype=float)
    h = heading(gt_theta)
    along = float(e @ h)
    across = float(e @ np.array([-h[1], h[0]]))
    return along, across


def default_tolerance_mm(spec):
    """Center-error tolerance separating correct from incorrect detections."""
    return 1.1 * spec.half_length_mm


def classify_detection(result, gt_center, tolerance_mm):
    """Label one frame: correct, incorrect, or no_detection."""
    if not result.detected:
        return NO_DETECTION
    err = float(np.linalg.norm(
        np.asarray(result.center_mm, float) - np.asarray(gt_center, float)))
    return CORRECT if err <= tolerance_mm else INCORRECT


@dataclass(frozen=True)
class MetricsReport:
    """Aggregate per-trial metrics.

    RMS position/orientation stats cover detected frames only (orientation
    after flip folding); rates are fractions (detected frames for
    flip_rate, all frames otherwise).  ``tip_tracking_rms_mm`` is NaN for
    offline corpora with no control loop.
    """

    rms_along_mm: float
    rms_across_mm: float
    rms_orientation_deg: float
    flip_rate: float
    no_detection_rate: float
    incorrect_detection_rate: float
    tip_tracking_rms_mm: float
    frame_count: int

    def to_json(self):
        data = {k: (None if isinstance(v, float) and math.isnan(v) else v)
                for k, v in asdict(self).items()}
        return json.dumps(data, indent=2, sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, text):
        data = {k: (math.nan if v is None else v)
                for k, v in json.loads(text).items()}
        return cls(**data)


def _wrap(angles):
    out = (np.asarray(angles, dtype=float) + math.pi) % (2.0 * math.pi) - math.pi
    return np.where(out >= math.pi, out - 2.0 * math.pi, out)


def _rms(values):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return float("nan")
    return float(np.sqrt(np.mean(values * values)))


def compute_metrics(gt_centers, gt_thetas, est_centers, est_thetas, *,
                    tolerance_mm, tip_errors=None):
    """Build a MetricsReport from aligned per-frame arrays.

    NoDetection frames carry NaN estimates.  ``tolerance_mm`` is the
    correct/incorrect boundary on center error.
    """
    gt_centers = np.asarray(gt_centers, dtype=float)
    gt_thetas = np.asarray(gt_thetas, dtype=float)
    est_centers = np.asarray(est_centers, dtype=float)
    est_thetas = np.asarray(est_thetas, dtype=float)
    n = len(gt_thetas)
    if n == 0:
        raise ValueError("no frames to evaluate")
    detected = np.isfinite(est_thetas) & np.all(np.isfinite(est_centers), axis=1)
    n_det = int(detected.sum())

    e = est_centers[detected] - gt_centers[detected]
    h = np.stack([np.cos(gt_thetas[detected]), np.sin(gt_thetas[detected])], axis=1)
    along = (e * h).sum(axis=1)
    across = e[:, 0] * (-h[:, 1]) + e[:, 1] * h[:, 0]

    err_norm = np.hypot(e[:, 0], e[:, 1])
    incorrect = int((err_norm > tolerance_mm).sum())

    diff = _wrap(est_thetas[detected] - gt_thetas[detected])
    flipped = np.abs(diff) > math.pi / 2
    folded = np.where(flipped, _wrap(diff + math.pi), diff)

    return MetricsReport(
        rms_along_mm=_rms(along),
        rms_across_mm=_rms(across),
        rms_orientation_deg=math.degrees(_rms(folded)),
        flip_rate=float(flipped.sum()) / n_det if n_det else 0.0,
        no_detection_rate=float(n - n_det) / n,
        incorrect_detection_rate=float(incorrect) / n,
        tip_tracking_rms_mm=_rms(tip_errors) if tip_errors is not None
        else float("nan"),
        frame_count=n,
    )


def read_trace_csv(path):
    """Parse a closed-loop trace CSV back into per-frame arrays."""
    from .simulate import TRACE_COLUMNS
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0].split(",") != list(TRACE_COLUMNS):
        raise ValueError(f"{path}: unexpected trace header")
    cols = {name: [] for name in TRACE_COLUMNS}
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(TRACE_COLUMNS):
            raise ValueError(f"{path}: malformed row {ln!r}")
        for name, value in zip(TRACE_COLUMNS, parts):
            cols[name].append(value)
    out = {}
    for name, values in cols.items():
        if name == "detect_tag":
            out[name] = np.array(values)
        elif name == "flip_corrected":
            out[name] = np.array([v == "1" for v in values])
        else:
            out[name] = np.array([float(v) for v in values])
    return out


def metrics_from_trace(path, tolerance_mm):
    """Recompute the metrics report from a written trace CSV."""
    cols = read_trace_csv(path)
    gt_centers = np.stack([cols["gt_x_mm"], cols["gt_y_mm"]], axis=1)
    est_centers = np.stack([cols["est_x_mm"], cols["est_y_mm"]], axis=1)
    return compute_metrics(gt_centers, cols["gt_theta_rad"], est_centers,
                           cols["est_theta_rad"], tolerance_mm=tolerance_mm,
                           tip_errors=cols["tip_err_mm"])
