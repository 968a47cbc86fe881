"""Needle localization from binary segmentation masks.

Pipeline per frame: debias -> density clustering -> RANSAC line fit ->
cluster assembly -> endpoint extraction -> error correction using the
four classification bits.  A per-pixel bias map (EMA of false-positive
observations) suppresses persistent spurious blobs such as reflections.

Pixel work happens in image coordinates; results are reported in the
world frame (mm, y up).  The only orientation subtlety is the y flip:
a line at pixel angle a is at world angle -a.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import DBSCAN

from .geometry import (angular_distance, heading, mm_to_px, normalize_angle,
                       px_to_mm)

__all__ = [
    "CalibrationError",
    "ClassificationBits",
    "LineFit",
    "LocalizationResult",
    "NeedleTracker",
    "PipelineParams",
    "VIS_BOTH", "VIS_NEITHER", "VIS_TAIL", "VIS_TIP",
    "assemble_needle",
    "bits_for_angle",
    "cluster",
    "correct",
    "debias",
    "detected_region",
    "extract_endpoints",
    "fit_line",
    "line_angle_world",
    "localize",
    "preprocess",
    "preprocessed_calibration",
    "update_bias",
]

WORKING_SIZE = 512

VIS_BOTH = "both"
VIS_TIP = "tip_only"
VIS_TAIL = "tail_only"
VIS_NEITHER = "neither"


class CalibrationError(ValueError):
    """Raised when a frame cannot hold the calibrated dish crop."""


@dataclass(frozen=True)
class ClassificationBits:
    """Per-frame semantic bits accompanying the segmentation mask.

    angle_up:   the heading has a +y (world up) component.
    angle_left: the heading has a -x component.
    tip_visible / tail_visible: the endpoint survives in the mask.
    """

    angle_up: bool
    angle_left: bool
    tip_visible: bool
    tail_visible: bool


def bits_for_angle(theta_rad):
    """Angle bits (angle_up, angle_left) implied by a world heading."""
    return math.sin(theta_rad) > 0.0, math.cos(theta_rad) < 0.0


@dataclass(frozen=True)
class PipelineParams:
    """Tunables of the localization pipeline (pixel units at 512x512)."""

    needle_width_px: float = 4.0
    bias_alpha: float = 0.1
    bias_threshold: float = 0.1
    dbscan_eps_px: float | None = None       # default: needle_width_px + 1
    dbscan_min_pts: int = 4
    ransac_iters: int = 200
    ransac_inlier_px: float | None = None    # default: needle_width_px/2 + 0.5
    merge_factor: float = 1.1
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.needle_width_px > 0):
            raise ValueError(f"needle_width_px must be > 0, got {self.needle_width_px}")
        if not (0.0 < self.bias_alpha <= 1.0):
            raise ValueError(f"bias_alpha must be in (0, 1], got {self.bias_alpha}")
        if not (0.0 < self.bias_threshold < 1.0):
            raise ValueError(
                f"bias_threshold must be in (0, 1), got {self.bias_threshold}")
        if self.dbscan_min_pts < 1:
            raise ValueError(f"dbscan_min_pts must be >= 1, got {self.dbscan_min_pts}")
        if self.ransac_iters < 1:
            raise ValueError(f"ransac_iters must be >= 1, got {self.ransac_iters}")
        if not (self.merge_factor > 0):
            raise ValueError(f"merge_factor must be > 0, got {self.merge_factor}")

    @property
    def n_min(self):
        """Minimum pixel support: square of the needle width in pixels."""
        return int(round(self.needle_width_px)) ** 2

    @property
    def eps_px(self):
        return self.needle_width_px + 1.0 if self.dbscan_eps_px is None \
            else self.dbscan_eps_px

    @property
    def inlier_tol_px(self):
        return self.needle_width_px / 2.0 + 0.5 if self.ransac_inlier_px is None \
            else self.ransac_inlier_px


@dataclass(frozen=True, eq=False)
class LocalizationResult:
    """Tagged outcome of one frame: a detection or NoDetection."""

    detected: bool
    center_mm: np.ndarray | None = None
    theta_rad: float | None = None
    endpoints_px: np.ndarray | None = None
    visibility: str | None = None
    flip_corrected: bool = False

    @property
    def tag(self):
        return "detected" if self.detected else "no_detection"

    @classmethod
    def no_detection(cls):
        return cls(detected=False)

    @classmethod
    def found(cls, center_mm, theta_rad, endpoints_px, visibility,
              flip_corrected=False):
        return cls(detected=True, center_mm=np.asarray(center_mm, dtype=float),
                   theta_rad=float(theta_rad),
                   endpoints_px=np.asarray(endpoints_px, dtype=float),
                   visibility=visibility, flip_corrected=flip_corrected)


# ---------------------------------------------------------------------------
# preprocessing

def preprocess(frame, cal):
    """Camera frame -> 512x512 working image.

    Crops a 1024x1024 window centered on the dish, zeroes everything
    outside the dish circle, then box-downsamples by 2.  The dish circle
    must fit inside the frame.
    """
    frame = np.asarray(frame, dtype=float)
    if frame.ndim != 2:
        raise ValueError(f"expected a 2-d frame, got shape {frame.shape}")
    crop = 2 * WORKING_SIZE
    cx, cy = int(round(cal.center_px[0])), int(round(cal.center_px[1]))
    ox, oy = cx - crop // 2, cy - crop // 2
    h, w = frame.shape
    if ox < 0 or oy < 0 or ox + crop > w or oy + crop > h:
        raise CalibrationError(
            f"dish crop ({crop}x{crop} at origin ({ox}, {oy})) exceeds the "
            f"{w}x{h} frame")
    if cal.radius_px > crop / 2:
        raise CalibrationError(
            f"dish radius {cal.radius_px} px exceeds the crop half-size {crop / 2}")
    window = frame[oy:oy + crop, ox:ox + crop]
    ys, xs = np.mgrid[0:crop, 0:crop]
    circle = ((xs - (cal.center_px[0] - ox)) ** 2
              + (ys - (cal.center_px[1] - oy)) ** 2) <= cal.radius_px ** 2
    masked = np.where(circle, window, 0.0)
    return masked.reshape(WORKING_SIZE, 2, WORKING_SIZE, 2).mean(axis=(1, 3))


def preprocessed_calibration(cal):
    """Calibration of the image produced by :func:`preprocess`."""
    from .geometry import DishCalibration
    half = WORKING_SIZE / 2.0
    return DishCalibration(center_px=(half, half),
                           radius_px=cal.radius_px / 2.0,
                           radius_mm=cal.radius_mm)


# ---------------------------------------------------------------------------
# bias map

def debias(mask, bias, threshold):
    """Remove pixels whose accumulated false-positive bias exceeds threshold."""
    mask = np.asarray(mask, dtype=bool)
    if bias.shape != mask.shape:
        raise ValueError(
            f"bias shape {bias.shape} does not match mask shape {mask.shape}")
    return mask & (bias <= threshold)


def update_bias(bias, mask, region, alpha):
    """EMA update of the bias map from one frame.

    ``region`` is the detected-needle region (already dilated); pixels set
    in ``mask`` but outside it count as false positives.  ``region=None``
    means NoDetection: the bias is left untouched (the frame teaches us
    nothing about what is spurious).
    """
    if region is None:
        return bias
    fp = (np.asarray(mask, dtype=bool) & ~region).astype(float)
    return (1.0 - alpha) * bias + alpha * fp


def detected_region(result, spec, cal, shape, width_px):
    """Capsule around the estimated needle, dilated by one needle width."""
    region = np.zeros(shape, dtype=bool)
    if not result.detected:
        return region
    h = heading(result.theta_rad)
    half = spec.half_length_mm
    a = mm_to_px(result.center_mm - half * h, cal)
    b = mm_to_px(result.center_mm + half * h, cal)
    radius = 1.5 * width_px  # mask half-width plus one width of dilation
    x0 = max(0, int(math.floor(min(a[0], b[0]) - radius - 1)))
    x1 = min(shape[1] - 1, int(math.ceil(max(a[0], b[0]) + radius + 1)))
    y0 = max(0, int(math.floor(min(a[1], b[1]) - radius - 1)))
    y1 = min(shape[0] - 1, int(math.ceil(max(a[1], b[1]) + radius + 1)))
    if x0 > x1 or y0 > y1:
        return region
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    ab = b - a
    len2 = float(ab @ ab)
    px, py = xs - a[0], ys - a[1]
    if len2 > 0:
        t = np.clip((px * ab[0] + py * ab[1]) / len2, 0.0, 1.0)
    else:
        t = 0.0
    dx = px - t * ab[0]
    dy = py - t * ab[1]
    region[y0:y1 + 1, x0:x1 + 1] = dx * dx + dy * dy <= radius * radius
    return region


# ---------------------------------------------------------------------------
# clustering and line fitting

def cluster(mask, params):
    """Group mask pixels into clusters, largest first.

    DBSCAN noise points and clusters below ``n_min`` pixels are discarded.
    Returns a list of (k, 2) float arrays of pixel (x, y) coordinates.
    """
    mask = np.asarray(mask, dtype=bool)
    pts = np.argwhere(mask)[:, ::-1].astype(float)  # (y, x) -> (x, y)
    if len(pts) == 0:
        return []
    labels = DBSCAN(eps=params.eps_px, min_samples=params.dbscan_min_pts).fit_predict(pts)
    clusters = []
    for label in range(labels.max() + 1):
        members = pts[labels == label]
        if len(members) >= params.n_min:
            clusters.append(members)
    clusters.sort(key=len, reverse=True)
    return clusters


@dataclass(frozen=True, eq=False)
class LineFit:
    """RANSAC line: pixel-frame angle in [-pi/2, pi/2) and the inlier mask."""

    theta_px: float
    inlier_mask: np.ndarray


def _principal_angle(pts):
    """Least-squares line direction of a point set, in [-pi/2, pi/2)."""
    q = pts - pts.mean(axis=0)
    sxx = float(q[:, 0] @ q[:, 0])
    syy = float(q[:, 1] @ q[:, 1])
    sxy = float(q[:, 0] @ q[:, 1])
    theta = 0.5 * math.atan2(2.0 * sxy, sxx - syy)
    if theta >= math.pi / 2:
        theta -= math.pi
    return theta


def fit_line(points, params, rng):
    """Two-point RANSAC over the pixel set; None when support is too thin.

    The winning sample is the one with the most inliers within
    ``inlier_tol_px`` perpendicular distance; its direction is refit by
    least squares over the inliers.  Fewer than ``n_min`` inliers is a
    NoFit.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n < 2 or n < params.n_min:
        return None
    iters = params.ransac_iters
    i1 = rng.integers(0, n, size=iters)
    i2 = rng.integers(0, n - 1, size=iters)
    i2 = np.where(i2 >= i1, i2 + 1, i2)
    p1, p2 = pts[i1], pts[i2]
    d = p2 - p1
    norms = np.hypot(d[:, 0], d[:, 1])
    keep = norms > 0  # coincident pixels never happen, but stay safe
    if not np.any(keep):
        return None
    u = np.zeros_like(d)
    u[keep] = d[keep] / norms[keep, None]
    rel = pts[None, :, :] - p1[:, None, :]
    dist = np.abs(rel[:, :, 0] * u[:, None, 1] - rel[:, :, 1] * u[:, None, 0])
    dist[~keep] = np.inf
    counts = (dist <= params.inlier_tol_px).sum(axis=1)
    best = int(np.argmax(counts))
    if counts[best] < params.n_min:
        return None
    inliers = dist[best] <= params.inlier_tol_px
    return LineFit(theta_px=_principal_angle(pts[inliers]), inlier_mask=inliers)


def line_angle_world(theta_px):
    """Pixel-frame line angle -> world-frame line angle, both in [-pi/2, pi/2)."""
    theta = -float(theta_px)  # image y runs down
    if theta >= math.pi / 2:
        theta -= math.pi
    return theta


def assemble_needle(clusters, needle_length_px, merge_factor=1.1):
    """Merge clusters into the needle point set (largest cluster seeds it).

    A cluster joins when the largest pairwise distance between it and the
    current needle set stays below ``merge_factor * needle_length_px``,
    i.e. when the union could still be one needle.
    """
    if not clusters:
        raise ValueError("assemble_needle needs at least one cluster")
    needle = clusters[0]
    for extra in clusters[1:]:
        if len(extra) == 0:
            continue
        diff = extra[:, None, :] - needle[None, :, :]
        d_max = math.sqrt(float((diff * diff).sum(axis=2).max()))
        if d_max < merge_factor * needle_length_px:
            needle = np.vstack([needle, extra])
    return needle


def extract_endpoints(points, theta_px):
    """Extreme points of the set along the fitted line direction."""
    pts = np.asarray(points, dtype=float)
    if len(pts) == 0:
        raise ValueError("extract_endpoints needs a non-empty point set")
    u = np.array([math.cos(theta_px), math.sin(theta_px)])
    proj = pts @ u
    return pts[int(np.argmin(proj))].copy(), pts[int(np.argmax(proj))].copy()


# ---------------------------------------------------------------------------
# error correction

def correct(endpoints_px, theta_line_rad, bits, prev, spec, cal):
    """Resolve the heading ambiguity and reconstruct the center.

    1. Pick between theta and theta+pi using angle_left when the line is
       closer to horizontal than vertical, angle_up otherwise.
    2. Reconstruct the center from endpoint visibility: midpoint when both
       endpoints survive, half a needle in from the surviving endpoint
       when only one does, flagged midpoint when neither does.
    3. If the previous detection disagrees by more than pi/2, flip by pi
       and mark the frame flip-corrected.
    """
    e1_mm = px_to_mm(np.asarray(endpoints_px[0], dtype=float), cal)
    e2_mm = px_to_mm(np.asarray(endpoints_px[1], dtype=float), cal)
    th = float(theta_line_rad)
    if abs(math.cos(th)) >= abs(math.sin(th)):
        points_left = math.cos(th) < 0.0
        add_pi = points_left != bits.angle_left
    else:
        points_up = math.sin(th) > 0.0
        add_pi = points_up != bits.angle_up
    theta = normalize_angle(th + math.pi) if add_pi else normalize_angle(th)
    h = heading(theta)
    if float((e2_mm - e1_mm) @ h) >= 0.0:
        tip_end, tail_end = e2_mm, e1_mm
    else:
        tip_end, tail_end = e1_mm, e2_mm
    half = spec.half_length_mm
    if bits.tip_visible and bits.tail_visible:
        center, vis = 0.5 * (e1_mm + e2_mm), VIS_BOTH
    elif bits.tip_visible:
        center, vis = tip_end - half * h, VIS_TIP
    elif bits.tail_visible:
        center, vis = tail_end + half * h, VIS_TAIL
    else:
        center, vis = 0.5 * (e1_mm + e2_mm), VIS_NEITHER
    flip_corrected = False
    if prev is not None and prev.detected:
        if angular_distance(theta, prev.theta_rad) > math.pi / 2:
            theta = normalize_angle(theta + math.pi)
            flip_corrected = True
    return LocalizationResult.found(
        center, theta, np.stack([endpoints_px[0], endpoints_px[1]]),
        vis, flip_corrected)


# ---------------------------------------------------------------------------
# full pipeline

def localize(mask, bits, bias, prev, params, spec, cal, rng=None):
    """Run the full per-frame pipeline.

    Returns ``(result, new_bias)``.  The bias map is only updated on a
    detection (false positives are measured against the detected needle
    region on the raw, pre-debias mask); NoDetection leaves it untouched.
    """
    mask = np.asarray(mask, dtype=bool)
    if bias is None:
        bias = np.zeros(mask.shape, dtype=float)
    if rng is None:
        rng = np.random.default_rng(params.rng_seed)
    usable = debias(mask, bias, params.bias_threshold)
    clusters = cluster(usable, params)
    if not clusters:
        return LocalizationResult.no_detection(), bias
    pts = np.vstack(clusters)
    fit = fit_line(pts, params, rng)
    if fit is None:
        return LocalizationResult.no_detection(), bias
    kept, offset = [], 0
    for members in clusters:
        sel = fit.inlier_mask[offset:offset + len(members)]
        offset += len(members)
        if sel.any():
            kept.append(members[sel])
    kept.sort(key=len, reverse=True)
    needle_length_px = spec.length_mm * cal.px_per_mm
    needle_pts = assemble_needle(kept, needle_length_px, params.merge_factor)
    e1, e2 = extract_endpoints(needle_pts, fit.theta_px)
    result = correct((e1, e2), line_angle_world(fit.theta_px), bits, prev,
                     spec, cal)
    region = detected_region(result, spec, cal, mask.shape,
                             params.needle_width_px)
    new_bias = update_bias(bias, mask, region, params.bias_alpha)
    return result, new_bias


class NeedleTracker:
    """Stateful frame-to-frame wrapper: bias map, previous pose, RNG.

    ``use_prev=False`` treats frames as independent (no flip mitigation
    from the previous pose), which is the right mode for shuffled or
    random-pose corpora.
    """

    def __init__(self, params, spec, cal, mask_shape=(WORKING_SIZE, WORKING_SIZE),
                 use_prev=True, seed=None):
        self.params = params
        self.spec = spec
        self.cal = cal
        self.use_prev = use_prev
        self.bias = np.zeros(mask_shape, dtype=float)
        self.prev = None
        self._rng = np.random.default_rng(
            params.rng_seed if seed is None else seed)

    def process(self, mask, bits):
        result, self.bias = localize(
            mask, bits, self.bias, self.prev if self.use_prev else None,
            self.params, self.spec, self.cal, self._rng)
        if result.detected and self.use_prev:
            self.prev = result
        return result

    def reset(self):
        self.bias = np.zeros_like(self.bias)
        self.prev = None
