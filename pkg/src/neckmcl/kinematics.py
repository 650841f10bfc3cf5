"""Head pose trajectories, resampling, finite-difference kinematics and
sliding windows.

Angles are degrees throughout; column 0 is pitch (negative is down) and
column 1 is yaw (negative is left).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import InvalidInputError

PITCH_RANGE = (-30.0, 30.0)
YAW_RANGE = (-50.0, 50.0)

MODEL_RATE = 20.0
WINDOW_LENGTH = 8
CENTER_OFFSET = 2
CENTER_LENGTH = 4


@dataclass(frozen=True)
class HeadPose:
    pitch: float
    yaw: float

    def __post_init__(self):
        if not (math.isfinite(self.pitch) and math.isfinite(self.yaw)):
            raise InvalidInputError(f"non-finite head pose ({self.pitch}, {self.yaw})")

    def __sub__(self, other: "HeadPose") -> tuple[float, float]:
        return (self.pitch - other.pitch, self.yaw - other.yaw)

    def as_array(self) -> np.ndarray:
        return np.array([self.pitch, self.yaw], dtype=float)

    @classmethod
    def from_array(cls, a) -> "HeadPose":
        return cls(float(a[0]), float(a[1]))

    @classmethod
    def parse(cls, text: str) -> "HeadPose":
        """Parse ``"pitch,yaw"``."""
        try:
            p, y = (float(v) for v in text.split(","))
        except ValueError as exc:
            raise InvalidInputError(f"cannot parse head pose {text!r}; expected 'pitch,yaw'") from exc
        return cls(p, y)


def in_study_field(pose, tol: float = 1e-9) -> bool:
    """True if the pose lies in the 60 x 100 degree study field.

    Accepts a HeadPose or anything indexable as (pitch, yaw). Poses outside
    the field are legal values; this only flags them.
    """
    if isinstance(pose, HeadPose):
        p, y = pose.pitch, pose.yaw
    else:
        p, y = float(pose[0]), float(pose[1])
    return (PITCH_RANGE[0] - tol <= p <= PITCH_RANGE[1] + tol
            and YAW_RANGE[0] - tol <= y <= YAW_RANGE[1] + tol)


def _as_angles(angles) -> np.ndarray:
    a = np.array(angles, dtype=float)
    if a.ndim != 2 or a.shape[1] != 2:
        raise InvalidInputError(f"angles must have shape (n, 2), got {a.shape}")
    if a.shape[0] == 0:
        raise InvalidInputError("trajectory is empty")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("trajectory contains non-finite angles")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimedTrajectory:
    """Uniformly sampled pose sequence; sample ``i`` is at ``i / sample_rate``."""

    sample_rate: float
    angles: np.ndarray

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise InvalidInputError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "angles", _as_angles(self.angles))

    @classmethod
    def from_poses(cls, sample_rate: float, poses) -> "TimedTrajectory":
        return cls(sample_rate, [[p.pitch, p.yaw] for p in poses])

    def __len__(self) -> int:
        return self.angles.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) / self.sample_rate

    @property
    def duration(self) -> float:
        return (len(self) - 1) / self.sample_rate

    @property
    def pitch(self) -> np.ndarray:
        return self.angles[:, 0]

    @property
    def yaw(self) -> np.ndarray:
        return self.angles[:, 1]

    def pose(self, i: int) -> HeadPose:
        return HeadPose.from_array(self.angles[i])

    def poses(self) -> list[HeadPose]:
        return [HeadPose.from_array(a) for a in self.angles]


@dataclass(frozen=True)
class KinematicsSequence:
    sample_rate: float
    angles: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray

    def __len__(self) -> int:
        return self.angles.shape[0]


def resample(traj: TimedTrajectory, target_rate: float) -> TimedTrajectory:
    """Linearly interpolate ``traj`` onto a ``target_rate`` grid over the same span.

    The output starts at t = 0 and holds every grid point not later than the
    source's last sample.
    """
    if not target_rate > 0:
        raise InvalidInputError(f"target rate must be positive, got {target_rate}")
    if target_rate == traj.sample_rate:
        return traj
    if len(traj) < 2:
        raise InvalidInputError("resampling needs at least 2 samples")
    n_out = int(math.floor(traj.duration * target_rate + 1e-9)) + 1
    t_out = np.arange(n_out) / target_rate
    t_src = traj.times
    out = np.column_stack([np.interp(t_out, t_src, traj.angles[:, k]) for k in range(2)])
    return TimedTrajectory(target_rate, out)


def differentiate(traj: TimedTrajectory) -> KinematicsSequence:
    """Central differences inside, one-sided differences at both ends."""
    if len(traj) < 3:
        raise InvalidInputError("differentiation needs at least 3 samples")
    h = 1.0 / traj.sample_rate
    vel = np.gradient(traj.angles, h, axis=0, edge_order=1)
    acc = np.gradient(vel, h, axis=0, edge_order=1)
    return KinematicsSequence(traj.sample_rate, traj.angles, vel, acc)


@dataclass(frozen=True)
class MotionWindow:
    """Eight consecutive samples; the model predicts for samples 2..5."""

    start: int
    angles: np.ndarray
    acceleration: np.ndarray

    @property
    def center(self) -> range:
        s = self.start + CENTER_OFFSET
        return range(s, s + CENTER_LENGTH)


@dataclass(frozen=True)
class WindowBatch:
    """Stacked windows of one sequence.

    ``angles`` and ``acceleration`` have shape (n_windows, 8, 2).
    ``uncovered`` lists sample indices not inside any window center.
    """

    starts: np.ndarray
    angles: np.ndarray
    acceleration: np.ndarray
    uncovered: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self) -> int:
        return len(self.starts)

    def __iter__(self) -> Iterator[MotionWindow]:
        for k, s in enumerate(self.starts):
            yield MotionWindow(int(s), self.angles[k], self.acceleration[k])

    def __getitem__(self, k: int) -> MotionWindow:
        return MotionWindow(int(self.starts[k]), self.angles[k], self.acceleration[k])


def window_starts(n: int, stride: int = CENTER_LENGTH) -> np.ndarray:
    if n < WINDOW_LENGTH:
        raise InvalidInputError(f"need at least {WINDOW_LENGTH} samples for a window, got {n}")
    if stride < 1:
        raise InvalidInputError(f"stride must be >= 1, got {stride}")
    return np.arange(0, n - WINDOW_LENGTH + 1, stride)


def stack_windows(values: np.ndarray, starts: np.ndarray) -> np.ndarray:
    """Gather ``values[s:s+8]`` for every start into shape (len(starts), 8, ...)."""
    idx = starts[:, None] + np.arange(WINDOW_LENGTH)[None, :]
    return values[idx]


def windows(kin: KinematicsSequence, stride: int = CENTER_LENGTH) -> WindowBatch:
    """Cut a 20 Hz kinematics sequence into 400 ms windows.

    With the default stride of 4 the 200 ms centers tile the covered range
    exactly once.
    """
    if not math.isclose(kin.sample_rate, MODEL_RATE):
        raise InvalidInputError(f"windows need {MODEL_RATE:g} Hz input, got {kin.sample_rate:g} Hz")
    n = len(kin)
    starts = window_starts(n, stride)
    covered = np.zeros(n, dtype=bool)
    for s in starts:
        covered[s + CENTER_OFFSET:s + CENTER_OFFSET + CENTER_LENGTH] = True
    return WindowBatch(
        starts=starts,
        angles=stack_windows(kin.angles, starts),
        acceleration=stack_windows(kin.acceleration, starts),
        uncovered=np.flatnonzero(~covered),
    )


@dataclass(frozen=True)
class MclSequence:
    """Scalar contraction level per sample.

    ``flagged`` marks samples whose value was filled in rather than predicted
    (boundary samples of a sliding-window estimate).
    """

    sample_rate: float
    values: np.ndarray
    flagged: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise InvalidInputError("MCL sequence must be a non-empty 1D array")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("MCL sequence contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.flagged is None:
            object.__setattr__(self, "flagged", np.zeros(v.size, dtype=bool))

    def __len__(self) -> int:
        return self.values.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) / self.sample_rate
