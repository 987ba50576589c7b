"""Checkerboard geometry, corner ordering with marker-based orientation
disambiguation, and robust per-corner depth extraction."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import MarkerAmbiguous, NoValidDepth
from .geometry import PointSet3

# Depth samples outside this range are sensor artifacts (Table-I-style limits
# of both Kinect generations) and are dropped before the median.
DEPTH_VALID_RANGE = (0.4, 4.5)


@dataclass(frozen=True)
class CheckerboardSpec:
    """Physical checkerboard: full squares grid plus the hollow marker square.

    The interior corner grid is (squares_cols-1) x (squares_rows-1); corner 0
    is the interior corner adjacent to the marker square, which must be one of
    the four corner squares of the board.
    """

    squares_cols: int = 7
    squares_rows: int = 5
    square_size: float = 0.030
    marker_square: tuple[int, int] = (0, 0)

    def __post_init__(self) -> None:
        if self.squares_cols < 3 or self.squares_rows < 3:
            raise ValueError("board must have at least 3x3 squares")
        if self.square_size <= 0.0:
            raise ValueError("square_size must be positive")
        mc, mr = self.marker_square
        if mc not in (0, self.squares_cols - 1) or mr not in (0, self.squares_rows - 1):
            raise ValueError("marker_square must be one of the four corner squares")
        object.__setattr__(self, "marker_square", (int(mc), int(mr)))

    @property
    def corner_cols(self) -> int:
        return self.squares_cols - 1

    @property
    def corner_rows(self) -> int:
        return self.squares_rows - 1

    @property
    def corner_count(self) -> int:
        return self.corner_cols * self.corner_rows

    def board_center(self) -> np.ndarray:
        """Center of the physical board in the board (corner-0) frame."""
        return np.array([(self.squares_cols - 2) * self.square_size / 2.0,
                         (self.squares_rows - 2) * self.square_size / 2.0,
                         0.0])

    def outer_corners(self) -> np.ndarray:
        """The 4 outer corners of the physical board, board frame, z=0."""
        s = self.square_size
        x0, x1 = -s, (self.squares_cols - 1) * s
        y0, y1 = -s, (self.squares_rows - 1) * s
        return np.array([[x0, y0, 0.0], [x1, y0, 0.0], [x1, y1, 0.0], [x0, y1, 0.0]])

    def to_dict(self) -> dict:
        return {
            "squares_cols": self.squares_cols,
            "squares_rows": self.squares_rows,
            "square_size_m": self.square_size,
            "marker_square": list(self.marker_square),
        }

    @staticmethod
    def from_dict(d: dict) -> "CheckerboardSpec":
        return CheckerboardSpec(
            squares_cols=int(d["squares_cols"]),
            squares_rows=int(d["squares_rows"]),
            square_size=float(d["square_size_m"]),
            marker_square=tuple(d.get("marker_square", (0, 0))),
        )


def corner_grid(spec: CheckerboardSpec) -> PointSet3:
    """Interior corners in the board frame: row-major, spacing square_size,
    corner 0 at the origin (the marker-adjacent corner), z = 0."""
    cols, rows = spec.corner_cols, spec.corner_rows
    c, r = np.meshgrid(np.arange(cols), np.arange(rows))
    pts = np.zeros((rows * cols, 3))
    pts[:, 0] = c.ravel() * spec.square_size
    pts[:, 1] = r.ravel() * spec.square_size
    return PointSet3(pts, tuple(range(rows * cols)))


@dataclass(frozen=True)
class BoardObservation:
    """One detection of the board by one sensor.

    corners_px are color-image pixels; corners_ir_px / corners_depth are the
    IR-frame detections (absent when the IR camera missed the board). Invalid
    per-corner depths are NaN. marker_corner is the detector-reported index of
    the marker-adjacent corner in the current ordering.
    """

    camera_id: str
    timestamp: int
    corners_px: Optional[np.ndarray]
    corners_ir_px: Optional[np.ndarray] = None
    corners_depth: Optional[np.ndarray] = None
    marker_corner: Optional[int] = None
    orientation_resolved: bool = False

    def __post_init__(self) -> None:
        for name in ("corners_px", "corners_ir_px", "corners_depth"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, dtype=float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        if self.corners_depth is not None and self.corners_ir_px is not None:
            if len(self.corners_depth) != len(self.corners_ir_px):
                raise ValueError("corners_depth must align with corners_ir_px")

    @property
    def corner_count(self) -> int:
        if self.corners_px is not None:
            return len(self.corners_px)
        if self.corners_ir_px is not None:
            return len(self.corners_ir_px)
        return 0

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()
        return {
            "camera_id": self.camera_id,
            "timestamp": int(self.timestamp),
            "corners_px": arr(self.corners_px),
            "corners_ir_px": arr(self.corners_ir_px),
            "corners_depth": arr(self.corners_depth),
            "marker_corner": None if self.marker_corner is None else int(self.marker_corner),
            "orientation_resolved": bool(self.orientation_resolved),
        }

    @staticmethod
    def from_dict(d: dict) -> "BoardObservation":
        def arr(a):
            return None if a is None else np.asarray(a, dtype=float)
        return BoardObservation(
            camera_id=d["camera_id"],
            timestamp=int(d["timestamp"]),
            corners_px=arr(d["corners_px"]),
            corners_ir_px=arr(d["corners_ir_px"]),
            corners_depth=arr(d["corners_depth"]),
            marker_corner=d["marker_corner"],
            orientation_resolved=bool(d["orientation_resolved"]),
        )


def _symmetry_permutations(spec: CheckerboardSpec) -> list[np.ndarray]:
    """Index maps p such that canonical = observed[p] for each grid symmetry
    that preserves the grid shape (2 for rectangular, 4 for square grids)."""
    idx = np.arange(spec.corner_count).reshape(spec.corner_rows, spec.corner_cols)
    perms = [idx, idx[::-1, ::-1]]
    if spec.corner_cols == spec.corner_rows:
        perms.append(np.rot90(idx, 1))
        perms.append(np.rot90(idx, 3))
    return [p.ravel() for p in perms]


def resolve_orientation(obs: BoardObservation, marker_visible_corner: int,
                        spec: CheckerboardSpec) -> BoardObservation:
    """Permute the corner ordering so the marker-adjacent corner is index 0.

    Exactly one grid symmetry must place the marker at index 0; otherwise the
    frame is unusable and MarkerAmbiguous is raised.
    """
    n = spec.corner_count
    if obs.corner_count != n:
        raise ValueError(f"observation has {obs.corner_count} corners, spec wants {n}")
    matches = [p for p in _symmetry_permutations(spec)
               if int(p[0]) == int(marker_visible_corner)]
    if len(matches) != 1:
        raise MarkerAmbiguous(
            f"marker at corner {marker_visible_corner} matches "
            f"{len(matches)} grid symmetries")
    perm = matches[0]

    def take(a):
        return None if a is None else a[perm]

    return replace(
        obs,
        corners_px=take(obs.corners_px),
        corners_ir_px=take(obs.corners_ir_px),
        corners_depth=take(obs.corners_depth),
        marker_corner=0,
        orientation_resolved=True,
    )


@dataclass(frozen=True)
class DepthWindowStack:
    """Depth patches around one corner: exactly 5 consecutive frames of a
    (2*radius+1)-square neighborhood centered on the same pixel."""

    frames: np.ndarray
    radius: int = 10

    def __post_init__(self) -> None:
        frames = np.array(self.frames, dtype=float)
        side = 2 * self.radius + 1
        if frames.shape != (5, side, side):
            raise ValueError(f"frames must have shape (5, {side}, {side}), "
                             f"got {frames.shape}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)


def robust_corner_depth(stack: DepthWindowStack,
                        valid_range: tuple[float, float] = DEPTH_VALID_RANGE) -> float:
    """Median over all valid samples pooled across the 5 frames and the patch."""
    samples = stack.frames.ravel()
    lo, hi = valid_range
    valid = samples[np.isfinite(samples) & (samples > 0.0)
                    & (samples >= lo) & (samples <= hi)]
    if valid.size == 0:
        raise NoValidDepth("no valid depth sample in the window stack")
    return float(np.median(valid))
