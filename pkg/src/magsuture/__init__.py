"""Closed-loop simulation and estimation toolkit for a magnetically
actuated suture needle moving in a fluid-filled dish.

The package covers the full loop: coil field/wrench models and current
allocation, a planar nonholonomic plant, tip-space path tracking, a
binary-mask localization pipeline with flip disambiguation and bias
mapping, a synthetic scene generator for stress-testing that pipeline,
and an experiment harness with a CLI.
"""

from .config import ConfigError, format_config, parse_config, parse_config_file
from .control import (ReferencePath, TipController, body_to_tip_velocity,
                      path_eval, pd_tip_command, running_suture_path,
                      tip_cmd_to_body)
from .experiment import (ExperimentConfig, SyntheticVision, build_experiment,
                         eval_offline, gen_scene, run_experiment)
from .geometry import (DishCalibration, DragCoefficients, NeedleSpec,
                       NeedleState, angular_distance, heading, mm_to_px,
                       normalize_angle, px_to_mm, tail_of, tip_of,
                       working_calibration)
from .localization import (ClassificationBits, LocalizationResult,
                           NeedleTracker, PipelineParams, localize)
from .magnetics import (AllocationResult, Coil, CoilArray, SingularityError,
                        Wrench2D, allocate_currents, field_per_amp,
                        motion_gain, wrench)
from .metrics import (MetricsReport, compute_metrics, decompose_error,
                      default_tolerance_mm, metrics_from_trace)
from .pgm import read_pgm, write_pgm
from .simulate import (CoulombFriction, SimConfig, SimTrace, TRACE_COLUMNS,
                       run_closed_loop, step)
from .synthvision import (ArtifactBar, Box, Disc, Ellipse, SceneConfig,
                          SceneGenerator)

__version__ = "0.1.0"

__all__ = [
    "AllocationResult", "ArtifactBar", "Box", "ClassificationBits", "Coil",
    "CoilArray", "ConfigError", "CoulombFriction", "DishCalibration", "Disc",
    "DragCoefficients", "Ellipse", "ExperimentConfig", "LocalizationResult",
    "MetricsReport", "NeedleSpec", "NeedleState", "NeedleTracker",
    "PipelineParams", "ReferencePath", "SceneConfig", "SceneGenerator",
    "SimConfig", "SimTrace", "SingularityError", "SyntheticVision",
    "TRACE_COLUMNS", "TipController", "Wrench2D", "allocate_currents",
    "angular_distance", "body_to_tip_velocity", "build_experiment",
    "compute_metrics", "decompose_error", "default_tolerance_mm",
    "eval_offline", "field_per_amp", "format_config", "gen_scene", "heading",
    "localize", "metrics_from_trace", "mm_to_px", "motion_gain",
    "normalize_angle", "parse_config", "parse_config_file", "path_eval",
    "pd_tip_command", "px_to_mm", "read_pgm", "run_closed_loop",
    "run_experiment", "running_suture_path", "step", "tail_of",
    "tip_cmd_to_body", "tip_of", "working_calibration", "wrench",
    "write_pgm",
]
