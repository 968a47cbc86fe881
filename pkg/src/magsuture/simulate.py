"""Explicit-Euler plant simulation and the closed tracking loop.

The plant is first order and nonholonomic: the center translates only
along the heading and the heading spins at the commanded rate.  The loop
runs sense -> control -> allocate -> integrate at a fixed period; sensing
is either perfect (ground truth) or a vision source whose estimate can
drop out (NoDetection), in which case the previous currents are held or
zeroed depending on configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .control import path_eval
from .geometry import (DishCalibration, DragCoefficients, NeedleSpec,
                       NeedleState, heading, normalize_angle, tip_of,
                       working_calibration)
from .magnetics import CoilArray, allocate_currents, motion_gain

__all__ = [
    "CoulombFriction",
    "SimConfig",
    "SimTrace",
    "StepResult",
    "TRACE_COLUMNS",
    "TraceRow",
    "run_closed_loop",
    "step",
]

HOLD = "hold"
ZERO = "zero"

TRACE_COLUMNS = (
    "t_s", "gt_x_mm", "gt_y_mm", "gt_theta_rad",
    "est_x_mm", "est_y_mm", "est_theta_rad",
    "detect_tag", "flip_corrected", "v_cmd", "w_cmd",
    "I1", "I2", "I3", "I4", "tip_err_mm",
)


@dataclass(frozen=True)
class CoulombFriction:
    """Dry-friction model: stiction cutoff plus a kinetic drag multiplier.

    Commanded forward speeds below ``v_static_threshold_mm_s`` produce no
    displacement; moving speeds are divided by ``drag_scale``.
    """

    v_static_threshold_mm_s: float = 0.05
    drag_scale: float = 1.0

    def __post_init__(self):
        if self.v_static_threshold_mm_s < 0:
            raise ValueError("v_static_threshold_mm_s must be >= 0")
        if not (self.drag_scale >= 1.0):
            raise ValueError(f"drag_scale must be >= 1, got {self.drag_scale}")


@dataclass(frozen=True, eq=False)
class SimConfig:
    """Everything the plant integrator and the closed loop need."""

    spec: NeedleSpec = field(default_factory=NeedleSpec)
    coils: CoilArray = field(default_factory=CoilArray.default)
    drag: DragCoefficients = field(default_factory=DragCoefficients)
    dish: DishCalibration = field(default_factory=working_calibration)
    dt_s: float = 0.05
    duration_s: float | None = None
    friction: CoulombFriction | None = None
    i_max_amp: float = 10.0
    allocation_damping: float = 1e-8
    on_no_detection: str = HOLD
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.dt_s > 0):
            raise ValueError(f"dt_s must be > 0, got {self.dt_s}")
        if self.duration_s is not None and not (self.duration_s > 0):
            raise ValueError(f"duration_s must be > 0, got {self.duration_s}")
        if self.on_no_detection not in (HOLD, ZERO):
            raise ValueError(
                f"on_no_detection must be '{HOLD}' or '{ZERO}', "
                f"got {self.on_no_detection!r}")


@dataclass(frozen=True, eq=False)
class StepResult:
    """One integration step: next state plus realized speeds and wall flag."""

    state: NeedleState
    v_mm_s: float
    w_rad_s: float
    wall_contact: bool


def step(state, currents, cfg):
    """Advance the plant one explicit-Euler step under the given currents."""
    center = state.center_mm
    if np.linalg.norm(center) > cfg.dish.radius_mm:
        raise ValueError(
            f"needle center {center.tolist()} lies outside the dish "
            f"(radius {cfg.dish.radius_mm} mm)")
    g = motion_gain(center, state.theta_rad, cfg.coils, cfg.spec, cfg.drag)
    v, w = g @ np.asarray(currents, dtype=float).reshape(len(cfg.coils))
    v, w = float(v), float(w)
    if cfg.friction is not None:
        if abs(v) < cfg.friction.v_static_threshold_mm_s:
            v = 0.0
        else:
            v = v / cfg.friction.drag_scale
    new_center = center + heading(state.theta_rad) * (v * cfg.dt_s)
    new_theta = normalize_angle(state.theta_rad + w * cfg.dt_s)
    wall = False
    limit = cfg.dish.radius_mm - cfg.spec.half_length_mm
    norm = float(np.linalg.norm(new_center))
    if norm > limit:
        new_center = new_center * (limit / norm)
        wall = True
    return StepResult(state=NeedleState(new_center, new_theta),
                      v_mm_s=v, w_rad_s=w, wall_contact=wall)


@dataclass(frozen=True, eq=False)
class TraceRow:
    """One control period of the closed loop."""

    t_s: float
    gt_center_mm: np.ndarray
    gt_theta_rad: float
    est_center_mm: np.ndarray | None
    est_theta_rad: float | None
    detected: bool
    flip_corrected: bool
    v_cmd: float
    w_cmd: float
    currents: np.ndarray
    tip_err_mm: float


def _fmt(x):
    return repr(float(x))


@dataclass(eq=False)
class SimTrace:
    """Closed-loop log; serializes to the fixed-schema CSV."""

    rows: list
    error: str | None = None

    def to_csv_text(self):
        lines = [",".join(TRACE_COLUMNS)]
        for r in self.rows:
            ex, ey, eth = "nan", "nan", "nan"
            if r.est_center_mm is not None:
                ex, ey = _fmt(r.est_center_mm[0]), _fmt(r.est_center_mm[1])
                eth = _fmt(r.est_theta_rad)
            lines.append(",".join([
                _fmt(r.t_s), _fmt(r.gt_center_mm[0]), _fmt(r.gt_center_mm[1]),
                _fmt(r.gt_theta_rad), ex, ey, eth,
                "detected" if r.detected else "no_detection",
                "1" if r.flip_corrected else "0",
                _fmt(r.v_cmd), _fmt(r.w_cmd),
                _fmt(r.currents[0]), _fmt(r.currents[1]),
                _fmt(r.currents[2]), _fmt(r.currents[3]),
                _fmt(r.tip_err_mm),
            ]))
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", encoding="ascii", newline="") as fh:
            fh.write(self.to_csv_text())


def initial_state_on_path(path, spec):
    """Pose with the tip on the first waypoint, aligned with segment one."""
    q0, q1 = path.waypoints[0], path.waypoints[1]
    u = (q1 - q0) / np.linalg.norm(q1 - q0)
    center = q0 - spec.half_length_mm * u
    return NeedleState(center, math.atan2(u[1], u[0]))


def run_closed_loop(cfg, controller, path, vision=None, initial_state=None):
    """Run the tracking loop and return the trace.

    ``vision`` is any object with ``observe(state, frame_index)`` returning
    a localization result (``detected``/``center_mm``/``theta_rad``/
    ``flip_corrected``); ``None`` means perfect sensing.  A controller or
    vision exception truncates the run; the partial trace is still
    returned with the error recorded.
    """
    state = initial_state if initial_state is not None \
        else initial_state_on_path(path, cfg.spec)
    duration = cfg.duration_s if cfg.duration_s is not None else path.duration_s
    n_steps = max(1, int(round(duration / cfg.dt_s)))
    held = np.zeros(len(cfg.coils))
    rows = []
    error = None
    for i in range(n_steps):
        t = i * cfg.dt_s
        try:
            if vision is None:
                est_center, est_theta = state.center_mm, state.theta_rad
                detected, flip = True, False
            else:
                obs = vision.observe(state, i)
                detected, flip = obs.detected, obs.flip_corrected
                est_center = obs.center_mm if detected else None
                est_theta = obs.theta_rad if detected else None
            if detected:
                est_state = NeedleState(est_center, est_theta)
                v_cmd, w_cmd = controller.command(est_state, t, path, cfg.spec)
                alloc = allocate_currents(
                    est_state.center_mm, est_state.theta_rad, v_cmd, w_cmd,
                    cfg.coils, cfg.spec, cfg.drag, i_max=cfg.i_max_amp,
                    damping=cfg.allocation_damping)
                currents = alloc.currents
                held = currents
            else:
                v_cmd = w_cmd = float("nan")
                currents = held if cfg.on_no_detection == HOLD \
                    else np.zeros(len(cfg.coils))
        except Exception as exc:  # noqa: BLE001 - truncate, keep partial trace
            error = f"loop failed at step {i}: {exc}"
            break
        r_des, _ = path_eval(path, t)
        tip_err = float(np.linalg.norm(tip_of(state, cfg.spec) - r_des))
        rows.append(TraceRow(
            t_s=t, gt_center_mm=state.center_mm, gt_theta_rad=state.theta_rad,
            est_center_mm=None if est_center is None else np.asarray(est_center, float),
            est_theta_rad=None if est_theta is None else float(est_theta),
            detected=detected, flip_corrected=bool(flip),
            v_cmd=float(v_cmd), w_cmd=float(w_cmd),
            currents=np.asarray(currents, dtype=float),
            tip_err_mm=tip_err))
        state = step(state, currents, cfg).state
    return SimTrace(rows=rows, error=error)
