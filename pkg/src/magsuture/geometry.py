"""Planar geometry, canonical units, and the shared needle/dish records.

Conventions used throughout the package:

* World frame: origin at the dish center, x to the right, y up, millimeters.
* Image frame: x to the right, y down, pixels.  ``px_to_mm``/``mm_to_px``
  are the only places where the two frames meet.
* Angles are radians in [-pi, pi); 0 points along +x and positive angles
  turn counterclockwise in the world frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ROT90",
    "DishCalibration",
    "DragCoefficients",
    "NeedleSpec",
    "NeedleState",
    "angular_distance",
    "camera_calibration",
    "heading",
    "mm_to_px",
    "normalize_angle",
    "px_to_mm",
    "tail_of",
    "tip_of",
    "working_calibration",
]

TWO_PI = 2.0 * math.pi

# +90 degree rotation.  Fixes the sign convention of torques and of the
# across-needle error component; everything that needs a perpendicular
# goes through this matrix.
ROT90 = np.array([[0.0, -1.0], [1.0, 0.0]])
ROT90.setflags(write=False)

# Image y runs down, world y runs up.
_YFLIP = np.array([1.0, -1.0])
_YFLIP.setflags(write=False)


def _readonly_vec2(value, name):
    arr = np.array(value, dtype=float).reshape(2)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {value!r}")
    arr.setflags(write=False)
    return arr


def normalize_angle(theta):
    """Wrap an angle (radians) onto the branch [-pi, pi)."""
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    wrapped = (theta + math.pi) % TWO_PI - math.pi
    if wrapped >= math.pi:  # rounding at the branch cut
        wrapped -= TWO_PI
    return wrapped


def angular_distance(a, b):
    """Absolute angular separation of two angles, in [0, pi]."""
    return abs(normalize_angle(float(a) - float(b)))


def heading(theta_rad):
    """Unit vector pointing from the needle center toward the tip."""
    return np.array([math.cos(theta_rad), math.sin(theta_rad)])


@dataclass(frozen=True)
class NeedleSpec:
    """Physical needle description (straightened 22-gauge stock by default)."""

    length_mm: float = 23.5
    width_mm: float = 0.7176
    magnetic_moment: float = 1.0

    def __post_init__(self):
        if not (self.length_mm > 0):
            raise ValueError(f"length_mm must be > 0, got {self.length_mm}")
        if not (self.width_mm > 0):
            raise ValueError(f"width_mm must be > 0, got {self.width_mm}")
        if not (self.magnetic_moment > 0):
            raise ValueError(
                f"magnetic_moment must be > 0, got {self.magnetic_moment}")

    @property
    def half_length_mm(self):
        return 0.5 * self.length_mm


@dataclass(frozen=True, eq=False)
class NeedleState:
    """Needle pose in the world frame: center position and heading angle."""

    center_mm: np.ndarray
    theta_rad: float

    def __post_init__(self):
        object.__setattr__(
            self, "center_mm", _readonly_vec2(self.center_mm, "center_mm"))
        object.__setattr__(self, "theta_rad", normalize_angle(self.theta_rad))

    @property
    def heading(self):
        return heading(self.theta_rad)


def tip_of(state, spec):
    """World position of the needle tip (the +heading end)."""
    return state.center_mm + spec.half_length_mm * state.heading


def tail_of(state, spec):
    """World position of the needle tail (the -heading end)."""
    return state.center_mm - spec.half_length_mm * state.heading


@dataclass(frozen=True)
class DragCoefficients:
    """First-order drag: translation c_t and rotation c_r."""

    c_t: float = 1.0
    c_r: float = 1.0

    def __post_init__(self):
        if not (self.c_t > 0 and self.c_r > 0):
            raise ValueError(
                f"drag coefficients must be > 0, got c_t={self.c_t}, c_r={self.c_r}")


@dataclass(frozen=True, eq=False)
class DishCalibration:
    """Maps between image pixels and world millimeters.

    ``center_px`` is the dish center in the image, ``radius_px`` the dish
    radius in pixels, ``radius_mm`` the physical dish radius.
    """

    center_px: np.ndarray
    radius_px: float
    radius_mm: float = 42.5

    def __post_init__(self):
        object.__setattr__(
            self, "center_px", _readonly_vec2(self.center_px, "center_px"))
        if not (self.radius_px > 0):
            raise ValueError(f"radius_px must be > 0, got {self.radius_px}")
        if not (self.radius_mm > 0):
            raise ValueError(f"radius_mm must be > 0, got {self.radius_mm}")

    @property
    def px_per_mm(self):
        return self.radius_px / self.radius_mm


def px_to_mm(p_px, cal):
    """Image pixel coordinates -> world millimeters.  Accepts (..., 2)."""
    p = np.asarray(p_px, dtype=float)
    return (p - cal.center_px) / cal.px_per_mm * _YFLIP


def mm_to_px(p_mm, cal):
    """World millimeters -> image pixel coordinates.  Accepts (..., 2)."""
    p = np.asarray(p_mm, dtype=float)
    return p * _YFLIP * cal.px_per_mm + cal.center_px


def working_calibration(image_size_px=512, radius_mm=42.5):
    """Calibration for the square working-resolution image (dish fills it)."""
    half = image_size_px / 2.0
    return DishCalibration(
        center_px=(half, half), radius_px=half, radius_mm=radius_mm)


def camera_calibration(center_px=(640.0, 512.0), radius_px=512.0, radius_mm=42.5):
    """Calibration for the full 1280x1024 camera frame."""
    return DishCalibration(
        center_px=center_px, radius_px=radius_px, radius_mm=radius_mm)
