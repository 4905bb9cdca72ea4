"""Planar/3D pose types, stance-frame transforms, and footstep safety clamps."""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(angle: float) -> float:
    """Normalize an angle into (-pi, pi]."""
    r = math.remainder(angle, TWO_PI)
    # math.remainder returns [-pi, pi]; fold the single excluded endpoint.
    if r <= -math.pi:
        return math.pi
    return r


class FootSide(Enum):
    LEFT = "left"
    RIGHT = "right"

    @property
    def opposite(self) -> "FootSide":
        return FootSide.RIGHT if self is FootSide.LEFT else FootSide.LEFT

    # +1 for left, -1 for right: sign of the lateral (y) half-plane the
    # swing foot must stay on in the stance frame.
    @property
    def lateral_sign(self) -> float:
        return 1.0 if self is FootSide.LEFT else -1.0


@dataclass(frozen=True)
class Pose2:
    """Planar pose (x, y, yaw). Yaw is kept normalized in (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def compose(self, local: "Pose2") -> "Pose2":
        """Map ``local`` (expressed in this pose's frame) into this pose's parent frame."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return Pose2(
            self.x + c * local.x - s * local.y,
            self.y + s * local.x + c * local.y,
            wrap_angle(self.yaw + local.yaw),
        )

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return Pose2(-(c * self.x + s * self.y), -(-s * self.x + c * self.y), wrap_angle(-self.yaw))

    def rotate_vector(self, v: np.ndarray) -> np.ndarray:
        """Rotate a planar vector by this pose's yaw (no translation)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def to_stance_frame(point: Pose2, stance: Pose2) -> Pose2:
    """Express a world-frame pose in the stance foot frame."""
    return stance.inverse().compose(point)


def from_stance_frame(point: Pose2, stance: Pose2) -> Pose2:
    """Map a stance-frame pose back into the world frame."""
    return stance.compose(point)


@dataclass(frozen=True, eq=False)
class Pose3:
    """Position plus rotation matrix (world <- body), with yaw extraction."""

    position: np.ndarray
    rotation: np.ndarray

    @staticmethod
    def identity() -> "Pose3":
        return Pose3(np.zeros(3), np.eye(3))

    @staticmethod
    def from_xyz_yaw(x: float, y: float, z: float, yaw: float = 0.0) -> "Pose3":
        c, s = math.cos(yaw), math.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return Pose3(np.array([x, y, z], dtype=float), rot)

    @property
    def yaw(self) -> float:
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def is_valid_rotation(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return (
            np.allclose(r @ r.T, np.eye(3), atol=tol)
            and abs(float(np.linalg.det(r)) - 1.0) < tol
        )

    def transform_point(self, p: np.ndarray) -> np.ndarray:
        """Map a body-frame point into the world frame."""
        return self.rotation @ np.asarray(p, dtype=float) + self.position

    def inverse_transform_point(self, p: np.ndarray) -> np.ndarray:
        """Map a world-frame point into the body frame."""
        return self.rotation.T @ (np.asarray(p, dtype=float) - self.position)

    def planar(self) -> Pose2:
        return Pose2(float(self.position[0]), float(self.position[1]), self.yaw)


@dataclass(frozen=True)
class SafetyLimits:
    """Kinematic safety box for teleoperated footsteps, in the stance frame."""

    max_stride: float = 0.60
    max_yaw: float = 0.6
    min_lateral_separation: float = 0.20
    max_inward_yaw: float = 0.1

    def __post_init__(self):
        for name in ("max_stride", "max_yaw", "min_lateral_separation", "max_inward_yaw"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.min_lateral_separation > self.max_stride:
            raise ValueError("min_lateral_separation must not exceed max_stride")


@dataclass(frozen=True)
class FootstepCommand:
    """A single footstep for the robot controller: side, planar pose, terrain height."""

    side: FootSide
    pose: Pose2
    height: float = 0.0


def clamp_footstep(candidate: Pose2, side: FootSide, limits: SafetyLimits) -> Pose2:
    """Project a stance-frame footstep candidate onto the safe region.

    Order: lateral offset onto the swing-side interval
    [min_lateral_separation, max_stride], then forward offset reduced so the
    planar displacement norm fits max_stride, then yaw saturated against both
    the symmetric limit and the inward-rotation limit. The result is a fixed
    point of the operation.
    """
    sign = side.lateral_sign
    # Lateral: no crossing the stance foot's sagittal line, and within the
    # stride budget so the norm clamp below is always satisfiable.
    lateral = min(max(sign * candidate.y, limits.min_lateral_separation), limits.max_stride)
    y = sign * lateral

    x = candidate.x
    if x * x + y * y > limits.max_stride**2:
        x = math.copysign(math.sqrt(max(0.0, limits.max_stride**2 - y * y)), x)

    yaw = wrap_angle(candidate.yaw)
    if side is FootSide.LEFT:
        # Inward rotation for the left foot is clockwise (negative yaw).
        yaw = min(max(yaw, -limits.max_inward_yaw), limits.max_yaw)
    else:
        yaw = min(max(yaw, -limits.max_yaw), limits.max_inward_yaw)

    return Pose2(x, y, yaw)


def satisfies_limits(candidate: Pose2, side: FootSide, limits: SafetyLimits) -> bool:
    """Direct predicate check used by clamp tests; mirrors clamp_footstep's region."""
    sign = side.lateral_sign
    if sign * candidate.y < limits.min_lateral_separation:
        return False
    if math.hypot(candidate.x, candidate.y) > limits.max_stride + 1e-12:
        return False
    if abs(candidate.yaw) > limits.max_yaw:
        return False
    inward = -sign * candidate.yaw
    return inward <= limits.max_inward_yaw
