"""Experiment harness: config assembly, closed-loop runs, scene corpora,
and offline evaluation.

``run_experiment`` writes three files into the output directory: the
fixed-schema trace CSV, a metrics JSON, and the fully resolved config
(every effective key, including defaults and the seed), which is enough
to reproduce the run bit for bit.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import config as cfgmod
from .config import ConfigError
from .control import ReferencePath, TipController, running_suture_path
from .geometry import (DishCalibration, DragCoefficients, NeedleSpec,
                       NeedleState, working_calibration)
from .localization import NeedleTracker, PipelineParams
from .magnetics import CoilArray
from .metrics import compute_metrics, default_tolerance_mm
from .pgm import read_pgm, write_pgm
from .simulate import SimConfig, CoulombFriction, run_closed_loop
from .synthvision import ArtifactBar, SceneConfig, SceneGenerator

__all__ = [
    "ExperimentConfig",
    "SyntheticVision",
    "TRUTH_COLUMNS",
    "build_experiment",
    "eval_offline",
    "gen_scene",
    "read_truth_csv",
    "run_experiment",
]

PERFECT = "perfect"
SYNTHETIC = "synthetic"

TRUTH_COLUMNS = ("frame", "gt_x_mm", "gt_y_mm", "gt_theta_rad",
                 "angle_up", "angle_left", "tip_visible", "tail_visible")


class _Resolver:
    """Typed config reads that remember every effective value."""

    def __init__(self, raw):
        self.raw = dict(raw)
        self.resolved = {}
        self.consumed = set()

    def _record(self, key, value):
        self.consumed.add(key)
        if value is None:
            return value  # optional key left unset: omit from the dump
        if isinstance(value, bool):
            self.resolved[key] = "true" if value else "false"
        elif isinstance(value, float):
            self.resolved[key] = repr(value)
        else:
            self.resolved[key] = str(value)
        return value

    def flt(self, key, default):
        return self._record(key, cfgmod.get_float(self.raw, key, default))

    def num(self, key, default):
        return self._record(key, cfgmod.get_int(self.raw, key, default))

    def boolean(self, key, default):
        return self._record(key, cfgmod.get_bool(self.raw, key, default))

    def text(self, key, default):
        return self._record(key, cfgmod.get_str(self.raw, key, default))

    def pairs(self, key, default):
        value = cfgmod.get_pairs(self.raw, key, default)
        self.consumed.add(key)
        if value is not None:
            self.resolved[key] = "; ".join(
                f"{x:g},{y:g}" for x, y in np.atleast_2d(value))
        return value

    def reject_unknown(self):
        unknown = sorted(set(self.raw) - self.consumed)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")


@dataclass(eq=False)
class ExperimentConfig:
    """Fully built experiment: plant, controller, path, scene, pipeline."""

    sim: SimConfig
    controller: TipController
    path: ReferencePath
    scene: SceneConfig
    pipeline: PipelineParams
    vision: str
    seed: int
    frames: int
    tolerance_mm: float
    use_prev: bool
    initial_state: NeedleState | None
    out_dir: str | None
    resolved: dict


def build_experiment(raw, seed_override=None, out_override=None):
    """Assemble an ExperimentConfig from a parsed config mapping."""
    r = _Resolver(raw)
    seed = r.num("seed", 0)
    if seed_override is not None:
        seed = seed_override
        r.resolved["seed"] = str(seed)
    out_dir = r.text("out_dir", None)
    if out_override is not None:
        out_dir = str(out_override)
        r.resolved["out_dir"] = out_dir
    frames = r.num("frames", 200)

    spec = NeedleSpec(
        length_mm=r.flt("needle.length_mm", 23.5),
        width_mm=r.flt("needle.width_mm", 0.7176),
        magnetic_moment=r.flt("needle.magnetic_moment", 1.0))
    drag = DragCoefficients(c_t=r.flt("drag.c_t", 1.0),
                            c_r=r.flt("drag.c_r", 1.0))
    coils = CoilArray.default(
        radius_mm=r.flt("coils.radius_mm", 88.0),
        magnet_constant=r.flt("coils.magnet_constant", 1.0))
    dish = working_calibration(
        image_size_px=r.num("dish.image_size_px", 512),
        radius_mm=r.flt("dish.radius_mm", 42.5))
    coils.check_outside_dish(dish.radius_mm)

    friction_kind = r.text("sim.friction", "none").lower()
    if friction_kind == "none":
        friction = None
        r.flt("sim.friction.v_static_threshold_mm_s", 0.05)
        r.flt("sim.friction.drag_scale", 1.0)
    elif friction_kind == "coulomb":
        friction = CoulombFriction(
            v_static_threshold_mm_s=r.flt("sim.friction.v_static_threshold_mm_s", 0.05),
            drag_scale=r.flt("sim.friction.drag_scale", 1.0))
    else:
        raise ConfigError(f"sim.friction must be none|coulomb, got {friction_kind!r}")

    duration = r.flt("sim.duration_s", 0.0)
    sim = SimConfig(
        spec=spec, coils=coils, drag=drag, dish=dish,
        dt_s=r.flt("sim.dt_s", 0.05),
        duration_s=None if duration <= 0 else duration,
        friction=friction,
        i_max_amp=r.flt("sim.i_max_amp", 10.0),
        allocation_damping=r.flt("sim.allocation_damping", 1e-8),
        on_no_detection=r.text("sim.on_no_detection", "hold"),
        rng_seed=seed)

    v_des = r.flt("path.v_des_mm_s", 0.2)
    path_type = r.text("path.type", "suture").lower()
    if path_type == "suture":
        center = r.pairs("path.suture.center", np.array([[0.0, 0.0]]))
        path = running_suture_path(
            tissue_center=np.atleast_2d(center)[0],
            tissue_thickness_mm=r.flt("path.suture.thickness_mm", 5.0),
            passes=r.num("path.suture.passes", 3),
            pitch_mm=r.flt("path.suture.pitch_mm", 8.0),
            margin_mm=r.flt("path.suture.margin_mm", 5.0),
            v_des_mm_s=v_des, dish_radius_mm=dish.radius_mm,
            needle_length_mm=spec.length_mm)
    elif path_type == "waypoints":
        wps = r.pairs("path.waypoints", None)
        if wps is None:
            raise ConfigError("path.type=waypoints requires path.waypoints")
        path = ReferencePath(waypoints=wps, v_des_mm_s=v_des)
    else:
        raise ConfigError(f"path.type must be suture|waypoints, got {path_type!r}")

    vision = r.text("vision", PERFECT).lower()
    if vision not in (PERFECT, SYNTHETIC):
        raise ConfigError(f"vision must be perfect|synthetic, got {vision!r}")

    scene_seed = r.num("scene.seed", seed)
    category = r.text("scene.category", "A")
    scene = SceneConfig.preset(category, rng_seed=scene_seed)
    overrides = {}
    fp = r.flt("scene.fp_rate", None)
    fn = r.flt("scene.fn_rate", None)
    blobs = r.num("scene.fn_blob_count", None)
    blob_r = r.flt("scene.fn_blob_radius_px", None)
    bit_err = r.flt("scene.bit_error_rate", None)
    if fp is not None:
        overrides["fp_rate"] = fp
    if fn is not None:
        overrides["fn_rate"] = fn
    if blobs is not None:
        overrides["fn_blob_count"] = blobs
    if blob_r is not None:
        overrides["fn_blob_radius_px"] = blob_r
    if bit_err is not None:
        overrides["bit_error_rates"] = (bit_err,) * 4
    art_center = r.pairs("scene.artifact.center", None)
    if art_center is not None:
        bar = ArtifactBar(
            center_mm=tuple(np.atleast_2d(art_center)[0]),
            angle_rad=r.flt("scene.artifact.angle_rad", 0.0),
            length_px=r.flt("scene.artifact.length_px", 80.0),
            width_px=r.flt("scene.artifact.width_px", 4.0))
        overrides["artifacts"] = scene.artifacts + (bar,)
    else:
        r.flt("scene.artifact.angle_rad", 0.0)
        r.flt("scene.artifact.length_px", 80.0)
        r.flt("scene.artifact.width_px", 4.0)
    if overrides:
        from dataclasses import replace
        scene = replace(scene, **overrides)

    pipeline = PipelineParams(
        needle_width_px=r.flt("pipeline.needle_width_px", 4.0),
        bias_alpha=r.flt("pipeline.bias_alpha", 0.1),
        bias_threshold=r.flt("pipeline.bias_threshold", 0.1),
        dbscan_eps_px=r.flt("pipeline.dbscan_eps_px", None),
        dbscan_min_pts=r.num("pipeline.dbscan_min_pts", 4),
        ransac_iters=r.num("pipeline.ransac_iters", 200),
        ransac_inlier_px=r.flt("pipeline.ransac_inlier_px", None),
        merge_factor=r.flt("pipeline.merge_factor", 1.1),
        rng_seed=r.num("pipeline.seed", seed))

    controller = TipController(gain=r.flt("control.gain", 0.5))
    tolerance = r.flt("eval.tolerance_mm", default_tolerance_mm(spec))
    use_prev = r.boolean("eval.use_prev", False)

    init_x = r.flt("sim.initial.x_mm", None)
    init_y = r.flt("sim.initial.y_mm", None)
    init_th = r.flt("sim.initial.theta_rad", None)
    initial_state = None
    if init_x is not None or init_y is not None or init_th is not None:
        if init_x is None or init_y is None or init_th is None:
            raise ConfigError(
                "sim.initial.{x_mm,y_mm,theta_rad} must be given together")
        initial_state = NeedleState((init_x, init_y), init_th)

    r.reject_unknown()
    return ExperimentConfig(
        sim=sim, controller=controller, path=path, scene=scene,
        pipeline=pipeline, vision=vision, seed=seed, frames=frames,
        tolerance_mm=tolerance, use_prev=use_prev,
        initial_state=initial_state, out_dir=out_dir, resolved=r.resolved)


class SyntheticVision:
    """Closes the loop through mask rendering and the localization pipeline."""

    def __init__(self, scene, pipeline, spec, cal, shape=(512, 512)):
        self.generator = SceneGenerator(scene, spec, cal, shape)
        self.tracker = NeedleTracker(pipeline, spec, cal, mask_shape=shape,
                                     use_prev=True)

    def observe(self, state, frame_index):
        mask, bits, _truth = self.generator.frame(state, frame_index)
        return self.tracker.process(mask, bits)


def _trace_metrics(trace, tolerance_mm):
    gt_c = np.array([row.gt_center_mm for row in trace.rows])
    gt_t = np.array([row.gt_theta_rad for row in trace.rows])
    est_c = np.array([
        row.est_center_mm if row.est_center_mm is not None
        else (math.nan, math.nan) for row in trace.rows])
    est_t = np.array([
        row.est_theta_rad if row.est_theta_rad is not None else math.nan
        for row in trace.rows])
    tip = np.array([row.tip_err_mm for row in trace.rows])
    return compute_metrics(gt_c, gt_t, est_c, est_t,
                           tolerance_mm=tolerance_mm, tip_errors=tip)


def run_experiment(exp, out_dir):
    """Run the closed loop and write trace.csv/metrics.json/config.resolved.

    Returns (trace, report).
    """
    os.makedirs(out_dir, exist_ok=True)
    vision = None
    if exp.vision == SYNTHETIC:
        vision = SyntheticVision(exp.scene, exp.pipeline, exp.sim.spec,
                                 exp.sim.dish)
    trace = run_closed_loop(exp.sim, exp.controller, exp.path, vision=vision,
                            initial_state=exp.initial_state)
    trace.write_csv(os.path.join(out_dir, "trace.csv"))
    report = _trace_metrics(trace, exp.tolerance_mm)
    with open(os.path.join(out_dir, "metrics.json"), "w", encoding="ascii") as fh:
        fh.write(report.to_json() + "\n")
    with open(os.path.join(out_dir, "config.resolved"), "w",
              encoding="utf-8") as fh:
        fh.write(cfgmod.format_config(exp.resolved))
    if trace.error:
        with open(os.path.join(out_dir, "run_error.txt"), "w",
                  encoding="utf-8") as fh:
            fh.write(trace.error + "\n")
    return trace, report


def _fmt(x):
    return repr(float(x))


def gen_scene(exp, out_dir):
    """Emit a mask corpus: frame_%05d.pgm + truth.csv + resolved config.

    Poses are sampled uniformly over the safe region (needle fully inside
    the dish with 2 mm margin) with uniform headings.
    """
    os.makedirs(out_dir, exist_ok=True)
    spec, dish = exp.sim.spec, exp.sim.dish
    gen = SceneGenerator(exp.scene, spec, dish)
    rng = np.random.default_rng(exp.seed)
    safe = dish.radius_mm - spec.half_length_mm - 2.0
    if safe <= 0:
        raise ValueError("needle does not fit in the dish with margin")
    lines = [",".join(TRUTH_COLUMNS)]
    for i in range(exp.frames):
        radius = safe * math.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2.0 * math.pi)
        theta = rng.uniform(-math.pi, math.pi)
        pose = NeedleState((radius * math.cos(phi), radius * math.sin(phi)),
                           theta)
        mask, bits, _truth = gen.frame(pose, i)
        write_pgm(os.path.join(out_dir, f"frame_{i:05d}.pgm"), mask)
        lines.append(",".join([
            str(i), _fmt(pose.center_mm[0]), _fmt(pose.center_mm[1]),
            _fmt(pose.theta_rad),
            "1" if bits.angle_up else "0", "1" if bits.angle_left else "0",
            "1" if bits.tip_visible else "0", "1" if bits.tail_visible else "0",
        ]))
    with open(os.path.join(out_dir, "truth.csv"), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(out_dir, "config.resolved"), "w",
              encoding="utf-8") as fh:
        fh.write(cfgmod.format_config(exp.resolved))
    return exp.frames


def read_truth_csv(path):
    """Read a scene truth.csv into a list of per-frame records."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise ValueError(f"cannot read truth file {path}: {exc}") from exc
    if not lines or lines[0].split(",") != list(TRUTH_COLUMNS):
        raise ValueError(f"{path}: unexpected truth header")
    records = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(TRUTH_COLUMNS):
            raise ValueError(f"{path}: malformed truth row {ln!r}")
        records.append({
            "frame": int(parts[0]),
            "center": np.array([float(parts[1]), float(parts[2])]),
            "theta": float(parts[3]),
            "bits": tuple(p == "1" for p in parts[4:8]),
        })
    if not records:
        raise ValueError(f"{path}: no frames listed")
    return records


def eval_offline(mask_dir, pipeline, spec, cal, truth_csv=None,
                 tolerance_mm=None, use_prev=False):
    """Run the pipeline over a stored mask corpus and score it.

    Returns (report, estimates) where estimates is a list of per-frame
    (frame, result) pairs.  Missing or mismatched frames fail loudly with
    the first offending index.
    """
    from .localization import ClassificationBits
    if truth_csv is None:
        truth_csv = os.path.join(mask_dir, "truth.csv")
    records = read_truth_csv(truth_csv)
    if tolerance_mm is None:
        tolerance_mm = default_tolerance_mm(spec)
    tracker = NeedleTracker(pipeline, spec, cal, use_prev=use_prev)
    gt_c, gt_t, est_c, est_t = [], [], [], []
    estimates = []
    for rec in records:
        path = os.path.join(mask_dir, f"frame_{rec['frame']:05d}.pgm")
        if not os.path.exists(path):
            raise ValueError(f"missing mask for frame {rec['frame']}: {path}")
        mask = read_pgm(path)
        if mask.shape != tracker.bias.shape:
            raise ValueError(
                f"frame {rec['frame']}: mask shape {mask.shape} does not "
                f"match pipeline shape {tracker.bias.shape}")
        bits = ClassificationBits(*rec["bits"])
        result = tracker.process(mask, bits)
        estimates.append((rec["frame"], result))
        gt_c.append(rec["center"])
        gt_t.append(rec["theta"])
        if result.detected:
            est_c.append(result.center_mm)
            est_t.append(result.theta_rad)
        else:
            est_c.append(np.array([math.nan, math.nan]))
            est_t.append(math.nan)
    report = compute_metrics(np.array(gt_c), np.array(gt_t), np.array(est_c),
                             np.array(est_t), tolerance_mm=tolerance_mm)
    return report, estimates
