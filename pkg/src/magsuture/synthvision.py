"""Synthetic mask generation: renders poses into binary masks and injects
the failure modes the localization pipeline has to survive.

Difficulty presets A-D mirror increasingly hostile scenes: clean, heavy
blood speckle (pixel noise plus blob dropout), a tissue occluder, and
both combined.  Occluders change the geometric visibility truth; noise
and artifacts only touch pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import heading, mm_to_px, px_to_mm, tail_of, tip_of
from .localization import ClassificationBits, bits_for_angle

__all__ = [
    "ArtifactBar",
    "Box",
    "Disc",
    "Ellipse",
    "FrameTruth",
    "SceneConfig",
    "SceneGenerator",
    "apply_noise_and_artifacts",
    "apply_occluders",
    "oracle_bits",
    "render_artifacts",
    "render_mask",
]


# ---------------------------------------------------------------------------
# occluder shapes (world mm)

@dataclass(frozen=True, eq=False)
class Disc:
    center_mm: tuple
    radius_mm: float

    def contains(self, points_mm):
        p = np.asarray(points_mm, dtype=float) - np.asarray(self.center_mm, float)
        return (p * p).sum(axis=-1) <= self.radius_mm ** 2


@dataclass(frozen=True, eq=False)
class Ellipse:
    center_mm: tuple
    semi_axes_mm: tuple
    angle_rad: float = 0.0

    def contains(self, points_mm):
        p = np.asarray(points_mm, dtype=float) - np.asarray(self.center_mm, float)
        c, s = math.cos(self.angle_rad), math.sin(self.angle_rad)
        u = p[..., 0] * c + p[..., 1] * s
        v = -p[..., 0] * s + p[..., 1] * c
        a, b = self.semi_axes_mm
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0

    @property
    def area_mm2(self):
        return math.pi * self.semi_axes_mm[0] * self.semi_axes_mm[1]


@dataclass(frozen=True, eq=False)
class Box:
    center_mm: tuple
    half_size_mm: tuple
    angle_rad: float = 0.0

    def contains(self, points_mm):
        p = np.asarray(points_mm, dtype=float) - np.asarray(self.center_mm, float)
        c, s = math.cos(self.angle_rad), math.sin(self.angle_rad)
        u = p[..., 0] * c + p[..., 1] * s
        v = -p[..., 0] * s + p[..., 1] * c
        hx, hy = self.half_size_mm
        return (np.abs(u) <= hx) & (np.abs(v) <= hy)


@dataclass(frozen=True, eq=False)
class ArtifactBar:
    """A needle-like spurious bar, fixed in place for a whole trial."""

    center_mm: tuple
    angle_rad: float
    length_px: float
    width_px: float


@dataclass(frozen=True, eq=False)
class FrameTruth:
    """Ground truth attached to one synthetic frame."""

    pose: object
    tip_visible: bool
    tail_visible: bool
    occluded_fraction: float


@dataclass(frozen=True, eq=False)
class SceneConfig:
    """Scene difficulty description.

    ``fp_rate``/``fn_rate`` are iid per-pixel speckle rates;
    ``fn_blob_count``/``fn_blob_radius_px`` model blood pooling as
    per-frame random discs that wipe out mask pixels underneath.
    ``bit_error_rates`` flips (angle_up, angle_left, tip, tail)
    independently.
    """

    category: str = "custom"
    occluders: tuple = ()
    artifacts: tuple = ()
    fp_rate: float = 0.0
    fn_rate: float = 0.0
    fn_blob_count: int = 0
    fn_blob_radius_px: float = 0.0
    bit_error_rates: tuple = (0.0, 0.0, 0.0, 0.0)
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("fp_rate", "fn_rate"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if len(self.bit_error_rates) != 4:
            raise ValueError("bit_error_rates needs 4 entries")
        if self.fn_blob_count < 0:
            raise ValueError("fn_blob_count must be >= 0")

    @classmethod
    def preset(cls, category, rng_seed=0):
        """Difficulty presets A (clean), B (blood), C (tissue), D (both)."""
        cat = str(category).upper()
        tissue = Ellipse(center_mm=(6.0, 2.0), semi_axes_mm=(28.0, 16.0),
                         angle_rad=0.6)
        if cat == "A":
            return cls(category="A", rng_seed=rng_seed)
        if cat == "B":
            return cls(category="B", fp_rate=0.01, fn_rate=0.15,
                       fn_blob_count=3, fn_blob_radius_px=115.0,
                       rng_seed=rng_seed)
        if cat == "C":
            return cls(category="C", occluders=(tissue,),
                       bit_error_rates=(0.03, 0.03, 0.03, 0.03),
                       rng_seed=rng_seed)
        if cat == "D":
            return cls(category="D", occluders=(tissue,), fp_rate=0.01,
                       fn_rate=0.15, fn_blob_count=3,
                       fn_blob_radius_px=115.0,
                       bit_error_rates=(0.05, 0.05, 0.05, 0.05),
                       rng_seed=rng_seed)
        raise ValueError(f"unknown scene category {category!r}")


# ---------------------------------------------------------------------------
# rasterization

def _rect_mask(shape, center_px, u_px, half_len_px, half_wid_px, cal=None):
    """Rasterize a rotated rectangle; pixels outside the dish are dropped.

    Returns (mask, clipped) where ``clipped`` reports the rectangle
    poking out of the image bounds.
    """
    h_img, w_img = shape
    mask = np.zeros(shape, dtype=bool)
    n_px = np.array([-u_px[1], u_px[0]])
    corners = [center_px + sa * half_len_px * u_px + sb * half_wid_px * n_px
               for sa in (-1, 1) for sb in (-1, 1)]
    clipped = any(not (0 <= c[0] <= w_img - 1 and 0 <= c[1] <= h_img - 1)
                  for c in corners)
    reach = half_len_px + half_wid_px + 1.0
    x0 = max(0, int(math.floor(center_px[0] - reach)))
    x1 = min(w_img - 1, int(math.ceil(center_px[0] + reach)))
    y0 = max(0, int(math.floor(center_px[1] - reach)))
    y1 = min(h_img - 1, int(math.ceil(center_px[1] + reach)))
    if x0 > x1 or y0 > y1:
        return mask, clipped
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    rx, ry = xs - center_px[0], ys - center_px[1]
    along = rx * u_px[0] + ry * u_px[1]
    across = rx * n_px[0] + ry * n_px[1]
    inside = (np.abs(along) <= half_len_px) & (np.abs(across) <= half_wid_px)
    if cal is not None:
        inside &= ((xs - cal.center_px[0]) ** 2
                   + (ys - cal.center_px[1]) ** 2) <= cal.radius_px ** 2
    mask[y0:y1 + 1, x0:x1 + 1] = inside
    return mask, clipped


def render_mask(pose, spec, cal, shape=(512, 512)):
    """Ideal binary mask of the needle: an axis-aligned-width rectangle.

    No anti-aliasing: a pixel is set iff its center lies inside the
    rectangle (and inside the dish circle).  Returns (mask, clipped).
    """
    center_px = mm_to_px(pose.center_mm, cal)
    h = heading(pose.theta_rad)
    u_px = np.array([h[0], -h[1]])  # world -> image y flip
    s = cal.px_per_mm
    return _rect_mask(shape, center_px, u_px,
                      spec.half_length_mm * s, spec.width_mm * s / 2.0,
                      cal=cal)


def render_artifacts(artifacts, cal, shape=(512, 512)):
    """Static spurious-bar mask, OR of all configured bars."""
    total = np.zeros(shape, dtype=bool)
    for bar in artifacts:
        center_px = mm_to_px(np.asarray(bar.center_mm, float), cal)
        u_px = np.array([math.cos(bar.angle_rad), -math.sin(bar.angle_rad)])
        m, _ = _rect_mask(shape, center_px, u_px,
                          bar.length_px / 2.0, bar.width_px / 2.0, cal=cal)
        total |= m
    return total


def apply_occluders(mask, pose, occluders, spec, cal):
    """Zero out needle pixels under occluders; recompute visibility truth.

    An endpoint counts as visible when it lies inside the image and the
    dish and under no occluder.
    """
    mask = np.asarray(mask, dtype=bool)
    before = int(mask.sum())
    out = mask.copy()
    if occluders and before:
        idx = np.argwhere(out)
        pts_mm = px_to_mm(idx[:, ::-1].astype(float), cal)
        covered = np.zeros(len(idx), dtype=bool)
        for occ in occluders:
            covered |= occ.contains(pts_mm)
        out[idx[covered, 0], idx[covered, 1]] = False
    after = int(out.sum())

    def endpoint_visible(p_mm):
        p_px = mm_to_px(p_mm, cal)
        h_img, w_img = mask.shape
        if not (0 <= p_px[0] <= w_img - 1 and 0 <= p_px[1] <= h_img - 1):
            return False
        if np.linalg.norm(p_mm) > cal.radius_mm:
            return False
        return not any(bool(occ.contains(p_mm[None, :])[0]) for occ in occluders)

    tip_vis = endpoint_visible(tip_of(pose, spec))
    tail_vis = endpoint_visible(tail_of(pose, spec))
    frac = 0.0 if before == 0 else 1.0 - after / before
    return out, FrameTruth(pose=pose, tip_visible=tip_vis,
                           tail_visible=tail_vis, occluded_fraction=frac)


def _dish_interior_indices(shape, cal):
    ys, xs = np.mgrid[0:shape[0], 0:shape[1]]
    inside = ((xs - cal.center_px[0]) ** 2
              + (ys - cal.center_px[1]) ** 2) <= cal.radius_px ** 2
    return np.argwhere(inside)


def apply_noise_and_artifacts(mask, scene, cal, rng, artifact_mask=None,
                              interior_idx=None):
    """Inject trial artifacts and per-frame noise, in a fixed RNG order.

    Order: OR the static artifact bars, wipe blob regions, drop needle
    pixels iid at ``fn_rate``, then set background pixels inside the dish
    iid at ``fp_rate``.
    """
    out = np.asarray(mask, dtype=bool).copy()
    if artifact_mask is None and scene.artifacts:
        artifact_mask = render_artifacts(scene.artifacts, cal, mask.shape)
    if artifact_mask is not None:
        out |= artifact_mask
    if scene.fn_blob_count > 0:
        k = scene.fn_blob_count
        angles = rng.uniform(0.0, 2.0 * math.pi, size=k)
        radii = cal.radius_px * np.sqrt(rng.uniform(0.0, 1.0, size=k))
        centers = np.stack([cal.center_px[0] + radii * np.cos(angles),
                            cal.center_px[1] + radii * np.sin(angles)], axis=1)
        idx = np.argwhere(out)
        if len(idx):
            pts = idx[:, ::-1].astype(float)
            d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            hit = (d2 <= scene.fn_blob_radius_px ** 2).any(axis=1)
            out[idx[hit, 0], idx[hit, 1]] = False
    if scene.fn_rate > 0.0:
        idx = np.argwhere(out)
        if len(idx):
            drop = rng.random(len(idx)) < scene.fn_rate
            out[idx[drop, 0], idx[drop, 1]] = False
    if scene.fp_rate > 0.0:
        if interior_idx is None:
            interior_idx = _dish_interior_indices(mask.shape, cal)
        add = rng.random(len(interior_idx)) < scene.fp_rate
        out[interior_idx[add, 0], interior_idx[add, 1]] = True
    return out


def oracle_bits(truth, scene, rng):
    """Classification bits from geometric truth, with injected bit errors."""
    up, left = bits_for_angle(truth.pose.theta_rad)
    values = [up, left, truth.tip_visible, truth.tail_visible]
    flips = rng.random(4) < np.asarray(scene.bit_error_rates, dtype=float)
    final = [bool(v) ^ bool(f) for v, f in zip(values, flips)]
    return ClassificationBits(*final)


class SceneGenerator:
    """Produces (mask, bits, truth) frames for a trial.

    Frame RNG is keyed by (scene seed, frame index), so a frame's content
    does not depend on how many frames were generated before it.
    """

    def __init__(self, scene, spec, cal, shape=(512, 512)):
        self.scene = scene
        self.spec = spec
        self.cal = cal
        self.shape = shape
        self._artifact_mask = (render_artifacts(scene.artifacts, cal, shape)
                               if scene.artifacts else None)
        self._interior_idx = (_dish_interior_indices(shape, cal)
                              if scene.fp_rate > 0.0 else None)

    def frame(self, pose, index):
        rng = np.random.default_rng([int(self.scene.rng_seed) & 0x7FFFFFFF,
                                     int(index)])
        mask, _clipped = render_mask(pose, self.spec, self.cal, self.shape)
        mask, truth = apply_occluders(mask, pose, self.scene.occluders,
                                      self.spec, self.cal)
        mask = apply_noise_and_artifacts(mask, self.scene, self.cal, rng,
                                         self._artifact_mask,
                                         self._interior_idx)
        bits = oracle_bits(truth, self.scene, rng)
        return mask, bits, truth
