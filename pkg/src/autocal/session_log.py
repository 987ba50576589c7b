"""Line-delimited session log: one JSON record per bus event, with an
integrity-checked header, plus the offline replay that recomputes every
calibration from the logged observations."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .camera import SensorRig
from .errors import LogVersionMismatch
from .geometry import RigidTransform
from .orchestrator import (
    BusMessage,
    CameraCalibration,
    CameraDataBundle,
    SessionResult,
    SessionSettings,
    step_bootstrap,
    step_final_eth,
    step_internal,
    step_offset_final,
    step_offset_guidance,
)
from .target import BoardObservation, CheckerboardSpec

LOG_VERSION = 1


def _integrity(version: int, seed: int, config_digest: str) -> str:
    blob = json.dumps({"version": version, "seed": seed,
                       "config_digest": config_digest},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def config_digest(config_dict: dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _encode_payload(kind: str, payload) -> object:
    if kind == "observation":
        return {
            "observation": payload["observation"].to_dict(),
            "flange_pose": payload["flange_pose"].matrix().tolist(),
            "pose_id": payload["pose_id"],
            "phase": payload["phase"],
            "active": payload["active"],
        }
    return payload


def _decode_payload(kind: str, payload):
    if kind == "observation":
        return {
            "observation": BoardObservation.from_dict(payload["observation"]),
            "flange_pose": RigidTransform.from_matrix(np.asarray(payload["flange_pose"])),
            "pose_id": payload["pose_id"],
            "phase": payload["phase"],
            "active": payload["active"],
        }
    return payload


def write_session_log(path, result: SessionResult, seed: int,
                      config: dict) -> None:
    digest = config_digest(config)
    header = {
        "kind": "header",
        "version": LOG_VERSION,
        "seed": int(seed),
        "config_digest": digest,
        "integrity": _integrity(LOG_VERSION, int(seed), digest),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for msg in result.bus.records:
            record = {
                "timestamp": msg.timestamp,
                "topic": msg.topic,
                "kind": msg.kind,
                "payload": _encode_payload(msg.kind, msg.payload),
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


@dataclass
class SessionLog:
    header: dict
    records: list[BusMessage]
    truncated: bool = False


def read_session_log(path, config: Optional[dict] = None) -> SessionLog:
    """Parse a session log, validating the header integrity hash (and, when a
    config is given, that the log belongs to it). A trailing partial line marks
    the log as truncated instead of failing."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise LogVersionMismatch("empty session log")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise LogVersionMismatch(f"unreadable log header: {exc}") from exc
    if header.get("kind") != "header" or header.get("version") != LOG_VERSION:
        raise LogVersionMismatch(f"unsupported log version {header.get('version')!r}")
    expected = _integrity(header["version"], header["seed"], header["config_digest"])
    if header.get("integrity") != expected:
        raise LogVersionMismatch("log header failed the integrity check "
                                 "(seed or config fields were modified)")
    if config is not None and config_digest(config) != header["config_digest"]:
        raise LogVersionMismatch("log does not belong to the given config")

    records: list[BusMessage] = []
    truncated = False
    for line in lines[1:]:
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError:
            truncated = True
            break
        records.append(BusMessage(
            topic=raw["topic"], kind=raw["kind"], timestamp=int(raw["timestamp"]),
            payload=_decode_payload(raw["kind"], raw["payload"]),
        ))
    return SessionLog(header=header, records=records, truncated=truncated)


@dataclass
class ReplayOutcome:
    camera_id: str
    calibration: Optional[CameraCalibration]
    partial: dict
    warnings: list[str]
    logged_result: Optional[dict]


def _bundles_from_records(records) -> dict[str, CameraDataBundle]:
    bundles: dict[str, CameraDataBundle] = {}
    for msg in records:
        if msg.kind != "observation" or not msg.payload["active"]:
            continue
        obs: BoardObservation = msg.payload["observation"]
        bundle = bundles.setdefault(obs.camera_id, CameraDataBundle())
        entry = (msg.payload["pose_id"], msg.payload["flange_pose"], obs)
        phase = msg.payload["phase"]
        if phase == "initial_eth":
            bundle.bootstrap.append(entry)
        elif phase == "offset_est":
            bundle.tilt_runs.append(entry)
        elif phase == "moving":
            bundle.loop_frames.append(entry)
        elif phase == "repeat_eth":
            bundle.repeat_frames.append(entry)
    return bundles


def replay_session(log: SessionLog, nominal_rigs: dict[str, SensorRig],
                   spec: CheckerboardSpec,
                   settings: SessionSettings) -> dict[str, ReplayOutcome]:
    """Recompute every camera's calibration from the logged observations.

    Runs the same pure reduction steps the live session used; a truncated or
    partially-aborted log yields partial results with warnings instead of an
    error.
    """
    bundles = _bundles_from_records(log.records)
    logged_results = {msg.payload["camera_id"]: msg.payload
                      for msg in log.records if msg.kind == "result"}
    outcomes: dict[str, ReplayOutcome] = {}
    for camera_id, bundle in bundles.items():
        nominal = nominal_rigs.get(camera_id)
        warnings: list[str] = []
        partial: dict = {}
        calibration = None
        if nominal is None:
            warnings.append(f"no nominal rig configured for camera {camera_id!r}")
            outcomes[camera_id] = ReplayOutcome(camera_id, None, partial, warnings,
                                                logged_results.get(camera_id))
            continue
        if log.truncated:
            warnings.append("log was truncated; results may be partial")
        try:
            t0 = step_bootstrap(bundle.bootstrap, nominal, spec, settings.ransac)
            partial["bootstrap_eye_to_hand"] = t0
            guidance = step_offset_guidance(bundle.tilt_runs, nominal, t0, spec)
            partial["guidance_offset"] = guidance.offset
            internal = step_internal(
                bundle.loop_frames, spec,
                (nominal.color.width, nominal.color.height),
                (nominal.ir.width, nominal.ir.height))
            partial["internal"] = internal
            offset_final = step_offset_final(bundle.tilt_runs, bundle.loop_frames,
                                             internal.rig, guidance.offset, spec,
                                             settings.ransac)
            partial["mount_offset"] = offset_final.offset
            eth, prediction = step_final_eth(bundle.repeat_frames, internal.rig,
                                             offset_final.offset, spec,
                                             settings.ransac, settings.holdout_every)
            calibration = CameraCalibration(
                camera_id=camera_id,
                color=internal.color,
                ir=internal.ir,
                stereo=internal.stereo,
                depth_model=internal.depth_model,
                mount_offset=offset_final.offset,
                eye_to_hand=eth,
                prediction=prediction,
                frame_counts=internal.frame_counts,
                elapsed_s=0.0,
            )
        except Exception as exc:  # partial logs surface as warnings, not crashes
            warnings.append(f"replay stopped at an incomplete stage: {exc}")
        outcomes[camera_id] = ReplayOutcome(camera_id, calibration, partial,
                                            warnings, logged_results.get(camera_id))
    return outcomes


def compare_replay(outcome: ReplayOutcome, tol: float = 1e-12) -> list[str]:
    """Differences between a replayed calibration and the logged result beyond
    tol; empty when the replay reproduces the original."""
    if outcome.calibration is None or outcome.logged_result is None:
        return []
    diffs = []
    recomputed = outcome.calibration.to_dict()
    logged = outcome.logged_result

    def walk(path, a, b):
        if isinstance(a, dict) and isinstance(b, dict):
            for key in a:
                if key in ("elapsed_s", "phase_trace"):
                    continue
                if key not in b:
                    diffs.append(f"{path}.{key}: missing in log")
                    continue
                walk(f"{path}.{key}", a[key], b[key])
        elif isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
            if len(a) != len(b):
                diffs.append(f"{path}: length {len(a)} vs {len(b)}")
                return
            for i, (x, y) in enumerate(zip(a, b)):
                walk(f"{path}[{i}]", x, y)
        elif isinstance(a, (int, float)) and isinstance(b, (int, float)):
            if abs(float(a) - float(b)) > tol:
                diffs.append(f"{path}: {a!r} vs {b!r}")
        elif a != b:
            diffs.append(f"{path}: {a!r} vs {b!r}")

    walk("result", recomputed, logged)
    return diffs
