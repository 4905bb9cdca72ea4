"""Step detection and anticipatory stride/yaw estimation from foot tracker streams.

One estimator instance watches one user foot. While the foot is in flight the
estimator blends the measured horizontal displacement with an average-velocity
lookahead, shrinking the lookahead as the foot descends (landing factor), and
smooths the result with a proportional update. The output is a continuously
refined footstep command expressed in the robot's stance foot frame.
"""

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .geometry import (
    FootSide,
    FootstepCommand,
    Pose2,
    Pose3,
    SafetyLimits,
    clamp_footstep,
    wrap_angle,
)

DIRECTION_EPS = 1e-6  # below this displacement the step direction is undefined
Z_MAX_EPS = 1e-6  # below this observed lift the landing factor degenerates to 1


class StepPhase(Enum):
    IDLE = "idle"
    STEPPING = "stepping"


class StepEvent(Enum):
    NONE = "none"
    STARTED = "started"
    FINISHED = "finished"


@dataclass(frozen=True, eq=False)
class TrackerSample:
    """One timestamped reading of a foot tracker, world frame."""

    time: float
    pose: Pose3
    linear_velocity: np.ndarray
    yaw_rate: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.linear_velocity)) or not math.isfinite(self.yaw_rate):
            raise ValueError("tracker velocities must be finite")


@dataclass
class StepState:
    """Mutable per-foot bookkeeping for the current (or pending) step."""

    phase: StepPhase = StepPhase.IDLE
    side: FootSide = FootSide.LEFT
    initial_pose: Pose3 | None = None
    start_time: float = 0.0
    z_max: float = 0.0
    avg_horizontal_velocity: float = 0.0
    avg_yaw_rate: float = 0.0
    sample_count: int = 0
    quiet_iterations: int = 0


@dataclass(frozen=True, eq=False)
class StrideEstimate:
    """Snapshot of the current footstep estimate; immutable for cross-thread reads."""

    length: float = 0.0
    yaw: float = 0.0
    direction: np.ndarray | None = None
    landing_factor: float = 1.0


@dataclass(frozen=True)
class RetargetConfig:
    step_displacement_threshold: float = 0.04  # horizontal start-of-step trigger, m
    lift_threshold: float = 0.01  # vertical start-of-step trigger, m
    stability_threshold: float = 0.05  # end-of-step speed floor, m/s
    stability_iterations: int = 10  # consecutive quiet samples ending a step
    step_duration: float = 0.8  # robot's configured full step time, s
    stride_gain: float = 0.3  # proportional update gain for stride length
    yaw_gain: float = 0.3  # proportional update gain for yaw
    limits: SafetyLimits = SafetyLimits()

    def __post_init__(self):
        for name in (
            "step_displacement_threshold",
            "lift_threshold",
            "stability_threshold",
            "step_duration",
        ):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.stability_iterations < 1:
            raise ValueError("stability_iterations must be at least 1")
        for name in ("stride_gain", "yaw_gain"):
            gain = getattr(self, name)
            if not 0.0 < gain <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")


def detect_step_event(state: StepState, sample: TrackerSample, config: RetargetConfig) -> StepEvent:
    """Classify one sample as starting a step, finishing one, or neither.

    Mutates ``state``: stores the step's initial transform on STARTED, tracks
    the quiet-sample count toward FINISHED, and flips the phase. A step starts
    only when the horizontal displacement and the vertical lift thresholds are
    both exceeded; it finishes after ``stability_iterations`` consecutive
    samples slower than ``stability_threshold``.
    """
    if state.initial_pose is None:
        # First sample ever seen: it becomes the rest reference.
        state.initial_pose = sample.pose
        return StepEvent.NONE

    if state.phase is StepPhase.IDLE:
        delta = sample.pose.position - state.initial_pose.position
        displacement = math.hypot(float(delta[0]), float(delta[1]))
        lift = float(delta[2])
        if displacement >= config.step_displacement_threshold and lift >= config.lift_threshold:
            state.phase = StepPhase.STEPPING
            state.start_time = sample.time
            state.z_max = max(0.0, lift)
            state.avg_horizontal_velocity = 0.0
            state.avg_yaw_rate = 0.0
            state.sample_count = 0
            state.quiet_iterations = 0
            return StepEvent.STARTED
        return StepEvent.NONE

    speed = float(np.linalg.norm(sample.linear_velocity))
    if speed < config.stability_threshold:
        state.quiet_iterations += 1
        if state.quiet_iterations >= config.stability_iterations:
            state.phase = StepPhase.IDLE
            state.quiet_iterations = 0
            # The landing pose becomes the rest reference for the next step.
            state.initial_pose = sample.pose
            return StepEvent.FINISHED
    else:
        state.quiet_iterations = 0
    return StepEvent.NONE


def instantaneous_direction(current: Pose3, initial: Pose3) -> np.ndarray | None:
    """Unit XY direction from the step's initial pose, or None when degenerate."""
    delta = current.position[:2] - initial.position[:2]
    norm = math.hypot(float(delta[0]), float(delta[1]))
    if norm < DIRECTION_EPS:
        return None
    return delta / norm


def landing_factor(z: float, z_dot: float, z_max: float) -> float:
    """Blend weight in [0, 1] shrinking the lookahead as the foot descends.

    1 while the foot is not descending (or no lift has been observed yet);
    otherwise the current lift relative to the maximum observed lift.
    """
    if z_dot >= 0.0 or z_max < Z_MAX_EPS:
        return 1.0
    return max(0.0, min(1.0, z / z_max))


def stride_estimate_update(
    state: StepState, sample: TrackerSample, prev: StrideEstimate, config: RetargetConfig
) -> StrideEstimate:
    """One anticipatory stride-length update while the foot is in flight.

    Raw estimate = measured displacement + average horizontal speed times the
    time remaining in the robot's step; blended back toward the measured
    displacement by the landing factor, clamped to [0, max_stride], then
    low-passed with the proportional gain and clamped again.
    """
    if state.phase is not StepPhase.STEPPING or state.initial_pose is None:
        raise ValueError("stride update requires an active step")
    max_stride = config.limits.max_stride

    delta = sample.pose.position - state.initial_pose.position
    measured = math.hypot(float(delta[0]), float(delta[1]))
    z = float(delta[2])
    z_dot = float(sample.linear_velocity[2])

    remaining = max(0.0, config.step_duration - (sample.time - state.start_time))
    raw = measured + state.avg_horizontal_velocity * remaining

    lam = landing_factor(z, z_dot, state.z_max)
    blended = lam * raw + (1.0 - lam) * measured
    blended = min(max(blended, 0.0), max_stride)

    length = prev.length + config.stride_gain * (blended - prev.length)
    length = min(max(length, 0.0), max_stride)

    direction = instantaneous_direction(sample.pose, state.initial_pose)
    if direction is None:
        direction = prev.direction
    return replace(prev, length=length, direction=direction, landing_factor=lam)


def yaw_estimate_update(
    state: StepState, sample: TrackerSample, prev: StrideEstimate, config: RetargetConfig
) -> float:
    """One anticipatory yaw update; same lookahead/blend/P-control scheme as stride."""
    if state.phase is not StepPhase.STEPPING or state.initial_pose is None:
        raise ValueError("yaw update requires an active step")
    max_yaw = config.limits.max_yaw

    measured = wrap_angle(sample.pose.yaw - state.initial_pose.yaw)
    remaining = max(0.0, config.step_duration - (sample.time - state.start_time))
    raw = measured + state.avg_yaw_rate * remaining

    z = float(sample.pose.position[2] - state.initial_pose.position[2])
    lam = landing_factor(z, float(sample.linear_velocity[2]), state.z_max)
    blended = lam * raw + (1.0 - lam) * measured

    yaw = prev.yaw + config.yaw_gain * (blended - prev.yaw)
    return min(max(yaw, -max_yaw), max_yaw)


def compose_footstep(
    estimate: StrideEstimate,
    user_stance: Pose3,
    robot_stance: Pose2,
    side: FootSide,
    limits: SafetyLimits,
    stance_height: float = 0.0,
) -> FootstepCommand:
    """Map a user-centric stride estimate onto the robot stance frame.

    The world-frame offset ``length * direction`` is expressed in the user
    stance frame, re-attached to the robot stance frame with the estimated
    yaw, and clamped to the safety region. The command height starts at the
    robot stance height; the terrain optimizer overwrites it later.
    """
    if estimate.direction is None:
        raise ValueError("footstep composition requires a defined step direction")
    offset_world = estimate.length * estimate.direction
    c, s = math.cos(-user_stance.yaw), math.sin(-user_stance.yaw)
    local_x = c * float(offset_world[0]) - s * float(offset_world[1])
    local_y = s * float(offset_world[0]) + c * float(offset_world[1])

    candidate = Pose2(local_x, local_y, wrap_angle(estimate.yaw))
    clamped = clamp_footstep(candidate, side, limits)
    return FootstepCommand(side=side, pose=robot_stance.compose(clamped), height=stance_height)


@dataclass(frozen=True)
class RetargetTick:
    """Per-sample estimator output: the event fired plus the refreshed estimate."""

    time: float
    event: StepEvent
    estimate: StrideEstimate
    phase: StepPhase


class StepRetargeter:
    """Single-writer stream processor for one user foot.

    Feed samples in time order via :meth:`process`; read the latest immutable
    :class:`StrideEstimate` snapshot from any other thread of control.
    """

    def __init__(self, side: FootSide, config: RetargetConfig | None = None):
        self.side = side
        self.config = config or RetargetConfig()
        self.state = StepState(side=side)
        self._estimate = StrideEstimate(direction=np.array([1.0, 0.0]))
        self._last_time: float | None = None

    @property
    def estimate(self) -> StrideEstimate:
        return self._estimate

    def process(self, sample: TrackerSample) -> RetargetTick:
        if self._last_time is not None and sample.time <= self._last_time:
            raise ValueError(
                f"tracker samples must have strictly increasing timestamps "
                f"({sample.time} after {self._last_time})"
            )
        self._last_time = sample.time

        event = detect_step_event(self.state, sample, self.config)
        if event is StepEvent.STARTED:
            # A fresh step restarts the estimate from the measured state.
            self._estimate = replace(
                self._estimate, length=0.0, yaw=0.0, landing_factor=1.0
            )

        if self.state.phase is StepPhase.STEPPING:
            self._accumulate_means(sample)
            updated = stride_estimate_update(self.state, sample, self._estimate, self.config)
            yaw = yaw_estimate_update(self.state, sample, updated, self.config)
            self._estimate = replace(updated, yaw=yaw)
            delta = sample.pose.position - self.state.initial_pose.position
            self.state.z_max = max(self.state.z_max, float(delta[2]))

        return RetargetTick(sample.time, event, self._estimate, self.state.phase)

    def _accumulate_means(self, sample: TrackerSample) -> None:
        # Arithmetic means over the samples of the ongoing step only.
        n = self.state.sample_count + 1
        h_speed = math.hypot(float(sample.linear_velocity[0]), float(sample.linear_velocity[1]))
        self.state.avg_horizontal_velocity += (h_speed - self.state.avg_horizontal_velocity) / n
        self.state.avg_yaw_rate += (sample.yaw_rate - self.state.avg_yaw_rate) / n
        self.state.sample_count = n


def derive_velocities(samples: list) -> list:
    """Fill missing velocities by backward finite differences on poses.

    Input is a list of (time, Pose3, velocity-or-None, yaw_rate-or-None)
    tuples; returns TrackerSample objects. The first sample (and any sample
    with no predecessor) gets zero derived velocity.
    """
    out = []
    prev_time = None
    prev_pose = None
    for time, pose, velocity, yaw_rate in samples:
        if velocity is None or yaw_rate is None:
            if prev_pose is None or time <= prev_time:
                v = np.zeros(3)
                w = 0.0
            else:
                dt = time - prev_time
                v = (pose.position - prev_pose.position) / dt
                w = wrap_angle(pose.yaw - prev_pose.yaw) / dt
            velocity = v if velocity is None else velocity
            yaw_rate = w if yaw_rate is None else yaw_rate
        out.append(TrackerSample(time, pose, np.asarray(velocity, dtype=float), float(yaw_rate)))
        prev_time, prev_pose = time, pose
    return out
