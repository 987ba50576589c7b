"""Automatic robot-to-camera calibration toolkit.

Intrinsic camera calibration from a robot-held checkerboard, Eye-to-Hand
extrinsic calibration with RANSAC-robustified 3D registration, end-effector
mount-offset estimation, staged trajectory planning, and a ground-truth RGB-D
simulator to validate the whole pipeline end to end.
"""

from .camera import DepthModel, Intrinsics, Pixel, SensorRig
from .geometry import PointSet3, RansacParams, RigidTransform
from .handeye import CorrespondenceSet, EyeToHandResult, MountOffset
from .orchestrator import SessionResult, SessionSettings, run_session
from .planner import MotionPlan, MotionTarget, TiltLimits
from .sim import NoiseParams, RobotModel, SimCamera, SimScene
from .target import BoardObservation, CheckerboardSpec, DepthWindowStack
from .zhang import IntrinsicCalibrationResult, PlanarView

__version__ = "0.1.0"

__all__ = [
    "BoardObservation",
    "CheckerboardSpec",
    "CorrespondenceSet",
    "DepthModel",
    "DepthWindowStack",
    "EyeToHandResult",
    "IntrinsicCalibrationResult",
    "Intrinsics",
    "MotionPlan",
    "MotionTarget",
    "MountOffset",
    "NoiseParams",
    "Pixel",
    "PlanarView",
    "PointSet3",
    "RansacParams",
    "RigidTransform",
    "RobotModel",
    "SensorRig",
    "SessionResult",
    "SessionSettings",
    "SimCamera",
    "SimScene",
    "TiltLimits",
    "run_session",
    "__version__",
]
