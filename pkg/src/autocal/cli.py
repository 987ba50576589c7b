"""Command-line entry point: scene calibration, the two frame-count
experiments, and offline replay of recorded sessions."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import yaml

from . import report
from .config import SceneConfig, load_scene_config
from .errors import ConfigError, LogVersionMismatch
from .experiments import (
    EyehandExperiment,
    InternalExperiment,
    run_eyehand_experiments,
    run_internal_experiments,
)
from .orchestrator import SessionSettings, run_session
from .session_log import compare_replay, read_session_log, replay_session, write_session_log

log = logging.getLogger("autocal")

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_PARTIAL = 2


def _configure_logging() -> None:
    level = os.environ.get("AUTOCAL_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_config(path) -> SceneConfig:
    return load_scene_config(path)


def _session_settings(config: SceneConfig, seed: int | None) -> SessionSettings:
    from .geometry import RansacParams
    effective_seed = config.seed if seed is None else seed
    return SessionSettings(
        stages=config.planner.stages,
        base_depth=config.planner.base_depth,
        overlap=config.planner.overlap,
        ransac=RansacParams(seed=effective_seed),
    )


def cmd_calibrate(args) -> int:
    config = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = config.seed if args.seed is None else args.seed
    scene = config.build_scene(seed=seed)
    settings = _session_settings(config, seed)
    result = run_session(scene, settings)

    write_session_log(out / "session.jsonl", result, seed, config.raw)
    for camera_id, outcome in result.outcomes.items():
        if outcome.calibration is not None:
            with open(out / f"{camera_id}_result.yaml", "w", encoding="utf-8") as fh:
                yaml.safe_dump(outcome.calibration.to_dict(), fh, sort_keys=True)
            pred = outcome.calibration.prediction
            pred_txt = (f"prediction rms {pred['rms'] * 100.0:.3f} cm"
                        if pred else "no holdout prediction")
            print(f"{camera_id}: calibrated ({pred_txt}, "
                  f"{outcome.calibration.elapsed_s:.0f} s simulated)")
        else:
            print(f"{camera_id}: ABORTED in {outcome.aborted_phase}: "
                  f"{outcome.aborted_cause}")
    report.save_calibration_figure(result.outcomes, out / "summary.png")
    print(f"session log: {out / 'session.jsonl'}")
    return EXIT_OK if result.all_ok else EXIT_PARTIAL


def _load_internal_schedule(path) -> list[InternalExperiment]:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    return [InternalExperiment(exp=int(d["exp"]),
                               combined_frames=int(d["combined_frames"]),
                               overlap=bool(d["overlap"]), tilting=bool(d["tilting"]))
            for d in data]


def _load_eyehand_schedule(path) -> list[EyehandExperiment]:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    return [EyehandExperiment(exp=int(d["exp"]),
                              frames=tuple(int(v) for v in d["frames"]),
                              overlap=bool(d["overlap"]))
            for d in data]


def cmd_exp_internal(args) -> int:
    config = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schedule = _load_internal_schedule(args.schedule) if args.schedule else None
    rows = run_internal_experiments(config, schedule=schedule, seed=args.seed)
    csv_path = out / "exp_internal.csv"
    report.write_csv(csv_path, report.INTERNAL_COLUMNS, rows,
                     header_comment="time_s is simulated (0.1 m/s Cartesian + 2 s settle per pose)")
    report.save_internal_figure(rows, out / "exp_internal.png")
    print(f"wrote {csv_path} and {out / 'exp_internal.png'}")
    return EXIT_OK


def cmd_exp_eyehand(args) -> int:
    config = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schedule = _load_eyehand_schedule(args.schedule) if args.schedule else None
    rows = run_eyehand_experiments(config, schedule=schedule, seed=args.seed)
    csv_path = out / "exp_eyehand.csv"
    report.write_csv(csv_path, report.EYEHAND_COLUMNS, rows,
                     header_comment="time_s is simulated (0.1 m/s Cartesian + 2 s settle per pose)")
    report.save_eyehand_figure(rows, out / "exp_eyehand.png")
    print(f"wrote {csv_path} and {out / 'exp_eyehand.png'}")
    return EXIT_OK


def cmd_replay(args) -> int:
    config = _load_config(args.config)
    session_log = read_session_log(args.log, config.raw)
    settings = _session_settings(config, session_log.header["seed"])
    outcomes = replay_session(session_log, config.nominal_rigs(), config.board,
                              settings)
    status = EXIT_OK
    for camera_id, outcome in sorted(outcomes.items()):
        for warning in outcome.warnings:
            print(f"{camera_id}: warning: {warning}", file=sys.stderr)
        if outcome.calibration is None:
            print(f"{camera_id}: partial replay "
                  f"({len(outcome.partial)} stage(s) recomputed)")
            status = EXIT_PARTIAL
            continue
        diffs = compare_replay(outcome)
        if diffs:
            print(f"{camera_id}: REPLAY MISMATCH ({len(diffs)} fields):")
            for diff in diffs[:10]:
                print(f"  {diff}")
            status = EXIT_PARTIAL
        else:
            print(f"{camera_id}: replay matches the recorded results")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for camera_id, outcome in outcomes.items():
            if outcome.calibration is not None:
                with open(out / f"{camera_id}_replayed.yaml", "w") as fh:
                    yaml.safe_dump(outcome.calibration.to_dict(), fh, sort_keys=True)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autocal",
        description="Automatic robot-to-camera calibration toolkit (simulated)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_cal = sub.add_parser("calibrate", help="run the full calibration session")
    p_cal.add_argument("--config", required=True, help="scene config YAML")
    p_cal.add_argument("--out", required=True, help="output directory")
    p_cal.add_argument("--seed", type=int, default=None, help="override config seed")
    p_cal.set_defaults(func=cmd_calibrate)

    p_int = sub.add_parser("exp-internal",
                           help="internal-calibration accuracy vs. frame count")
    p_int.add_argument("--config", required=True)
    p_int.add_argument("--out", required=True)
    p_int.add_argument("--seed", type=int, default=None)
    p_int.add_argument("--schedule", default=None,
                       help="YAML schedule overriding the default 9 experiments")
    p_int.set_defaults(func=cmd_exp_internal)

    p_eye = sub.add_parser("exp-eyehand",
                           help="Eye-to-Hand accuracy vs. frame count")
    p_eye.add_argument("--config", required=True)
    p_eye.add_argument("--out", required=True)
    p_eye.add_argument("--seed", type=int, default=None)
    p_eye.add_argument("--schedule", default=None,
                       help="YAML schedule overriding the default 5 experiments")
    p_eye.set_defaults(func=cmd_exp_eyehand)

    p_rep = sub.add_parser("replay", help="recompute calibrations from a session log")
    p_rep.add_argument("--config", required=True)
    p_rep.add_argument("--log", required=True, help="session.jsonl from calibrate")
    p_rep.add_argument("--out", default=None)
    p_rep.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except LogVersionMismatch as exc:
        print(f"log error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
