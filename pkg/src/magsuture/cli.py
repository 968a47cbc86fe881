"""Command-line front end.

Subcommands:

* ``simulate``  -- closed-loop run, writes trace.csv / metrics.json
* ``gen-scene`` -- synthetic mask corpus with ground truth
* ``localize``  -- single-frame localization on a stored mask
* ``eval``      -- offline pipeline evaluation over a corpus

All subcommands accept ``--config`` (flat key=value file); ``--seed`` and
``--out`` override the corresponding config entries.  Errors exit nonzero
after printing a single ``error: ...`` line.
"""

from __future__ import annotations

import argparse
import sys

from .config import parse_config_file
from .experiment import build_experiment, eval_offline, gen_scene, run_experiment
from .localization import ClassificationBits
from .pgm import read_pgm

__all__ = ["main", "entry"]


def _load(args):
    raw = parse_config_file(args.config) if args.config else {}
    return build_experiment(raw, seed_override=args.seed,
                            out_override=getattr(args, "out", None))


def _cmd_simulate(args):
    exp = _load(args)
    out_dir = exp.out_dir or "out"
    trace, report = run_experiment(exp, out_dir)
    print(f"wrote {out_dir}/trace.csv ({len(trace.rows)} steps)")
    print(f"wrote {out_dir}/metrics.json")
    print(f"tip tracking rms: {report.tip_tracking_rms_mm:.4f} mm")
    print(f"no-detection rate: {report.no_detection_rate:.4f}")
    if trace.error:
        print(f"error: run truncated: {trace.error}", file=sys.stderr)
        return 1
    return 0


def _cmd_gen_scene(args):
    exp = _load(args)
    out_dir = exp.out_dir or "out"
    n = gen_scene(exp, out_dir)
    print(f"wrote {n} frames to {out_dir} (truth.csv alongside)")
    return 0


def _parse_bits(text):
    parts = text.split(",")
    if len(parts) != 4 or any(p not in ("0", "1") for p in parts):
        raise ValueError(
            "--bits expects four comma-separated 0/1 flags: "
            "angle_up,angle_left,tip_visible,tail_visible")
    return ClassificationBits(*(p == "1" for p in parts))


def _cmd_localize(args):
    exp = _load(args)
    mask = read_pgm(args.mask)
    from .localization import NeedleTracker
    tracker = NeedleTracker(exp.pipeline, exp.sim.spec, exp.sim.dish,
                            mask_shape=mask.shape, use_prev=False)
    result = tracker.process(mask, _parse_bits(args.bits))
    if result.detected:
        x, y = result.center_mm
        print(f"detected center_mm={x:.4f},{y:.4f} "
              f"theta_rad={result.theta_rad:.6f} "
              f"visibility={result.visibility} "
              f"flip_corrected={int(result.flip_corrected)}")
    else:
        print("no_detection")
    return 0


def _cmd_eval(args):
    exp = _load(args)
    report, estimates = eval_offline(
        args.masks, exp.pipeline, exp.sim.spec, exp.sim.dish,
        truth_csv=args.truth, tolerance_mm=exp.tolerance_mm,
        use_prev=exp.use_prev or args.use_prev)
    print(report.to_json())
    detected = sum(1 for _, r in estimates if r.detected)
    print(f"frames: {len(estimates)}  detected: {detected}",
          file=sys.stderr)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="magsuture",
        description="Magnetic suture-needle simulation and estimation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run the closed loop")
    p_gen = sub.add_parser("gen-scene", help="generate a mask corpus")
    p_loc = sub.add_parser("localize", help="localize one stored mask")
    p_eval = sub.add_parser("eval", help="evaluate the pipeline offline")

    for p in (p_sim, p_gen, p_loc, p_eval):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    for p in (p_sim, p_gen):
        p.add_argument("--out", default=None,
                       help="override the output directory")

    p_loc.add_argument("--mask", required=True, help="PGM mask file")
    p_loc.add_argument("--bits", default="0,0,1,1",
                       help="angle_up,angle_left,tip_visible,tail_visible "
                            "as 0/1 flags (default 0,0,1,1)")

    p_eval.add_argument("--masks", required=True,
                        help="directory of frame_%%05d.pgm files")
    p_eval.add_argument("--truth", default=None,
                        help="truth csv (default <masks>/truth.csv)")
    p_eval.add_argument("--use-prev", action="store_true",
                        help="carry temporal flip continuity across frames")

    args = parser.parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "gen-scene": _cmd_gen_scene,
        "localize": _cmd_localize,
        "eval": _cmd_eval,
    }
    try:
        return handlers[args.command](args)
    except Exception as exc:  # surfaced as a single diagnostic line
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
