"""Reference paths and the tip-space PD steering law.

The controller works entirely on the needle *tip*: a piecewise-linear
reference is traced at constant speed, a PD law produces a commanded tip
velocity, and an exact kinematic map turns that into the body commands
(forward speed v, spin rate w) that the current allocator realizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import heading, tip_of

__all__ = [
    "ReferencePath",
    "TipController",
    "path_eval",
    "pd_tip_command",
    "running_suture_path",
    "tip_cmd_to_body",
]


@dataclass(frozen=True, eq=False)
class ReferencePath:
    """Piecewise-linear path traced at constant speed ``v_des_mm_s``.

    Knot times follow from the segment lengths: t_0 = 0 and
    t_i = t_{i-1} + |q_i - q_{i-1}| / v_des.
    """

    waypoints: np.ndarray
    v_des_mm_s: float = 0.2

    def __post_init__(self):
        wps = np.array(self.waypoints, dtype=float)
        if wps.ndim != 2 or wps.shape[1] != 2 or wps.shape[0] < 2:
            raise ValueError(
                f"waypoints must be an (m, 2) array with m >= 2, got shape {wps.shape}")
        if not np.all(np.isfinite(wps)):
            raise ValueError("waypoints must be finite")
        if not (self.v_des_mm_s > 0):
            raise ValueError(f"v_des_mm_s must be > 0, got {self.v_des_mm_s}")
        seg = np.diff(wps, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lengths == 0.0):
            i = int(np.argwhere(lengths == 0.0)[0, 0])
            raise ValueError(f"waypoints {i} and {i + 1} are identical")
        wps.setflags(write=False)
        object.__setattr__(self, "waypoints", wps)
        times = np.concatenate(([0.0], np.cumsum(lengths) / self.v_des_mm_s))
        times.setflags(write=False)
        object.__setattr__(self, "_times", times)
        object.__setattr__(self, "_lengths", lengths)

    @property
    def knot_times(self):
        return self._times

    @property
    def duration_s(self):
        return float(self._times[-1])

    @property
    def length_mm(self):
        return float(self._lengths.sum())


def path_eval(path, t):
    """Reference position and velocity at time ``t``.

    Past the final knot the position clamps to the last waypoint and the
    velocity is zero.  Negative times are a domain error.
    """
    t = float(t)
    if t < 0.0:
        raise ValueError(f"path time must be >= 0, got {t}")
    times = path.knot_times
    wps = path.waypoints
    if t >= times[-1]:
        return wps[-1].copy(), np.zeros(2)
    i = int(np.searchsorted(times, t, side="right"))  # segment index, >= 1
    t0, t1 = times[i - 1], times[i]
    q0, q1 = wps[i - 1], wps[i]
    s = (t - t0) / (t1 - t0)
    u = (q1 - q0) / np.linalg.norm(q1 - q0)
    return q0 + s * (q1 - q0), path.v_des_mm_s * u


def running_suture_path(tissue_center=(0.0, 0.0), tissue_thickness_mm=5.0,
                        passes=3, pitch_mm=8.0, margin_mm=5.0,
                        v_des_mm_s=0.2, dish_radius_mm=42.5,
                        needle_length_mm=23.5):
    """Zig-zag running-suture reference crossing a vertical tissue strip.

    Each pass crosses the strip horizontally, entering/exiting ``margin_mm``
    beyond the tissue boundary; successive passes are ``pitch_mm`` apart and
    alternate direction.  All waypoints must stay inside the dish with
    half a needle length of clearance.
    """
    if passes < 1:
        raise ValueError(f"passes must be >= 1, got {passes}")
    if not (tissue_thickness_mm > 0):
        raise ValueError(f"tissue_thickness_mm must be > 0, got {tissue_thickness_mm}")
    if not (pitch_mm > 0):
        raise ValueError(f"pitch_mm must be > 0, got {pitch_mm}")
    if margin_mm < 0:
        raise ValueError(f"margin_mm must be >= 0, got {margin_mm}")
    cx, cy = float(tissue_center[0]), float(tissue_center[1])
    x_half = tissue_thickness_mm / 2.0 + margin_mm
    y0 = cy - pitch_mm * (passes - 1) / 2.0
    waypoints = []
    for p in range(passes):
        y = y0 + p * pitch_mm
        left, right = (cx - x_half, y), (cx + x_half, y)
        waypoints.extend([left, right] if p % 2 == 0 else [right, left])
    limit = dish_radius_mm - needle_length_mm / 2.0
    for i, (x, y) in enumerate(waypoints):
        if math.hypot(x, y) > limit:
            raise ValueError(
                f"waypoint {i} at ({x}, {y}) leaves the safe region "
                f"(|p| <= {limit} mm)")
    return ReferencePath(waypoints=np.array(waypoints), v_des_mm_s=v_des_mm_s)


def pd_tip_command(r_tip, t, path, gain=0.5):
    """Commanded tip velocity: gain * (r_des - r_tip) + r_des_dot."""
    if not (gain > 0):
        raise ValueError(f"gain must be > 0, got {gain}")
    r_des, r_dot = path_eval(path, t)
    return gain * (r_des - np.asarray(r_tip, dtype=float)) + r_dot


def tip_cmd_to_body(theta, tip_cmd, spec):
    """Map a commanded tip velocity to body commands (v, w).

    [v; w] = [[cos th, sin th], [-sin th / (l/2), cos th / (l/2)]] @ tip_cmd
    which inverts the rigid-body tip kinematics exactly.
    """
    c, s = math.cos(theta), math.sin(theta)
    half = spec.half_length_mm
    vx, vy = float(tip_cmd[0]), float(tip_cmd[1])
    v = c * vx + s * vy
    w = (-s * vx + c * vy) / half
    return v, w


def body_to_tip_velocity(state, v, w, spec):
    """Forward tip kinematics: tip velocity produced by body commands."""
    h = heading(state.theta_rad)
    perp = np.array([-h[1], h[0]])
    return v * h + w * spec.half_length_mm * perp


@dataclass(frozen=True)
class TipController:
    """PD tip-tracking controller with proportional gain ``gain``."""

    gain: float = 0.5

    def command(self, state, t, path, spec):
        """Body commands (v, w) steering the tip toward the reference."""
        tip = tip_of(state, spec)
        cmd = pd_tip_command(tip, t, path, self.gain)
        return tip_cmd_to_body(state.theta_rad, cmd, spec)
