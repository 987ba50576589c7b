"""Exception types raised across the toolkit."""


class AutocalError(Exception):
    """Base class for all toolkit-specific errors."""


# --- geometry ---------------------------------------------------------------

class TooFewPoints(AutocalError):
    """Fewer correspondences than the estimator's minimum."""


class DegenerateGeometry(AutocalError):
    """Point configuration is collinear within tolerance."""


class NoConsensus(AutocalError):
    """RANSAC found no model reaching the minimum inlier fraction."""


# --- camera -----------------------------------------------------------------

class BehindCamera(AutocalError):
    """Point has non-positive depth in the camera frame."""


class NoConvergence(AutocalError):
    """Iterative undistortion failed to converge."""


class NonPositiveDepth(AutocalError):
    """Depth value must be strictly positive."""


# --- target -----------------------------------------------------------------

class MarkerAmbiguous(AutocalError):
    """Marker position is inconsistent with the board's grid symmetries."""


class NoValidDepth(AutocalError):
    """Every depth sample in the window stack is invalid."""


# --- zhang ------------------------------------------------------------------

class DegenerateConfiguration(AutocalError):
    """Point configuration cannot determine a homography."""


class InsufficientViews(AutocalError):
    """Too few views for the closed-form intrinsic solution."""


class IllConditioned(AutocalError):
    """Linear system too ill-conditioned (views too parallel)."""


class DivergenceDetected(AutocalError):
    """Refinement cost increased on too many consecutive damping steps."""


class SingularHomography(AutocalError):
    """Homography is singular; no pose can be extracted."""


class NoCombinedViews(AutocalError):
    """No view ids are shared between the color and IR view lists."""


# --- handeye ----------------------------------------------------------------

class TimestampSkew(AutocalError):
    """Camera and robot timestamps differ by more than the sync window."""


class InsufficientExcitation(AutocalError):
    """Tilt poses do not span enough orientation for the offset to be observable."""


class EmptyHoldout(AutocalError):
    """Holdout correspondence set is empty."""


# --- planner ----------------------------------------------------------------

class StartNotDetected(AutocalError):
    """Board not detected at the sweep start pose."""


class BoardTooLarge(AutocalError):
    """Board footprint exceeds the image at the requested depth."""


# --- sim --------------------------------------------------------------------

class Unreachable(AutocalError):
    """Commanded pose lies outside the robot's reachable workspace."""


# --- orchestrator / cli -----------------------------------------------------

class ConfigError(AutocalError):
    """Invalid or unparseable configuration; message names the field."""


class LogVersionMismatch(AutocalError):
    """Session log failed the version or integrity check."""
