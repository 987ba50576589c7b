"""Shared scene builders for simulator, orchestrator and acceptance tests."""

import copy

from autocal.config import SceneConfig, parse_scene_config

ZERO_NOISE = {
    "pixel_sigma_px": 0.0,
    "depth_sigma_base_m": 0.0,
    "depth_sigma_slope_m_per_m2": 0.0,
    "outlier_rate": 0.0,
    "detect_tilt_limit_deg": 40.0,
    "detect_min_depth_m": 0.5,
    "detect_max_depth_m": 4.5,
}


def one_camera_config_dict(seed=0, zero_noise=True, stages=2, base_depth=0.75):
    cfg = {
        "seed": seed,
        "board": {"squares_cols": 7, "squares_rows": 5, "square_size_m": 0.030,
                  "marker_square": [0, 0]},
        "robot": {"reach_max_m": 0.85, "reach_min_m": 0.15,
                  "repeatability_sigma_m": 0.0 if zero_noise else 1.0e-4},
        "planner": {"stages": stages, "base_depth_m": base_depth, "overlap": 0.0},
        "cameras": [
            {"id": "cam1", "preset": "kinect_v2",
             "pose": {"position_m": [1.05, 0.0, 0.80],
                      "look_at_m": [0.0, 0.0, 0.45]}},
        ],
    }
    if zero_noise:
        cfg["cameras"][0]["noise"] = dict(ZERO_NOISE)
    return cfg


def three_camera_config_dict(seed=0, zero_noise=False, stages=3, base_depth=0.75):
    """Two Kinect-V2-style sensors at +-45 degrees plus one V1 facing the robot."""
    cfg = {
        "seed": seed,
        "board": {"squares_cols": 7, "squares_rows": 5, "square_size_m": 0.030,
                  "marker_square": [0, 0]},
        "robot": {"reach_max_m": 0.85, "reach_min_m": 0.15,
                  "repeatability_sigma_m": 0.0 if zero_noise else 1.0e-4},
        "planner": {"stages": stages, "base_depth_m": base_depth, "overlap": 0.0},
        "cameras": [
            {"id": "cam1", "preset": "kinect_v2",
             "pose": {"position_m": [0.78, 0.78, 0.85],
                      "look_at_m": [0.0, 0.0, 0.45]}},
            {"id": "cam2", "preset": "kinect_v2",
             "pose": {"position_m": [0.78, -0.78, 0.85],
                      "look_at_m": [0.0, 0.0, 0.45]}},
            {"id": "cam3", "preset": "kinect_v1",
             "pose": {"position_m": [1.15, 0.0, 0.70],
                      "look_at_m": [0.0, 0.0, 0.45]}},
        ],
    }
    if zero_noise:
        for cam in cfg["cameras"]:
            noise = dict(ZERO_NOISE)
            if cam["preset"] == "kinect_v1":
                noise["detect_min_depth_m"] = 0.4
                noise["detect_tilt_limit_deg"] = 35.0
            cam["noise"] = noise
    return cfg


def build_config(cfg_dict) -> SceneConfig:
    return parse_scene_config(copy.deepcopy(cfg_dict))
