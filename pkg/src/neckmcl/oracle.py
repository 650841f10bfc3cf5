"""Ground-truth biophysical simulator used to generate and verify data.

The oracle has known closed forms for every unknown the learned models
approximate:

    passive torque  T_p*(r) = (-g_p sin(pitch + p_0), -k_y sin(yaw))
    active torque   T_a*    = I* alpha / accel_unit - T_p*
    contraction     MCL     = min(cap, b + w_p |T_a_p| + w_y |T_a_y| + w_c |T_a_p| |T_a_y|)

Randomness comes from ``numpy.random.PCG64`` streams. Session ``k`` of a
protocol draws from ``SeedSequence([seed, protocol_id, k])``, so every
session is reproducible on its own.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import signal
from scipy.optimize import least_squares

from .emg import CHANNELS, EMG_RATE, RawEmgRecord, bandpass_sos
from .errors import CalibrationError, InvalidInputError, StateError
from .kinematics import MODEL_RATE, MclSequence, TimedTrajectory, differentiate, in_study_field, resample
from .trajectory import SQRT_2PI, GaussianProfile, synthesize_trajectory

PILOT_PITCH = (-30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0)
PILOT_YAW = (-50.0, -40.0, -30.0, -20.0, 0.0, 20.0, 30.0, 40.0, 50.0)
EVAL_PITCH = (-25.0, -5.0, 5.0, 25.0)
EVAL_YAW = (-45.0, -15.0, 15.0, 45.0)
TARGET_DELTAS = tuple((dp, dy) for dp in (-35.0, 0.0, 35.0) for dy in (-25.0, 0.0, 25.0) if (dp, dy) != (0.0, 0.0))
PROTOCOLS = {"pilot": 0, "eval": 1}
SPLITS = {"pilot": "train", "eval": "eval"}
DEFAULT_PARTICIPANTS = {"pilot": 8, "eval": 6}

# session durations are rounded to this grid so 90 Hz and 20 Hz samples coincide at the ends
TIME_GRID_S = 0.1


@dataclass(frozen=True)
class StationaryTargets:
    origin: float = 0.17
    corner: float = 0.68
    grid_mean: float = 0.32
    yaw_zero_mean: float = 0.21
    yaw_max_mean: float = 0.47
    pitch_up_mean: float = 0.49
    pitch_down_mean: float = 0.27
    tolerance: float = 0.02


@dataclass(frozen=True)
class OracleConfig:
    inertia: float = 1.0
    accel_unit: float = 400.0
    gravity_gain: float = 1.0
    pitch_offset: float = 0.0
    yaw_gain: float = 1.0
    w_pitch: float = 0.25
    w_yaw: float = 0.05
    w_cross: float = 0.6
    baseline: float = 0.1
    cap: float = 1.0
    sigma_0: float = 0.05
    sigma_slope: float = 0.003
    sigma_jitter: float = 0.1
    velocity_jitter: float = 0.03
    jitter_cutoff_hz: float = 4.0
    max_velocity: tuple[float, float] = (182.0, 238.0)
    max_accel: tuple[float, float] = (388.0, 507.0)
    pose_rate: float = 90.0
    hold_s: float = 2.0
    emd_s: float = 0.05
    emg_scale_mv: float = 0.5
    emg_gains: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    emg_floor: float = 0.01
    drift_mv: float = 0.2
    drift_hz: float = 0.3
    lateral_share: float = 0.15
    lateral_velocity: float = 50.0
    calibrated: bool = False

    def __post_init__(self):
        if not self.inertia > 0:
            raise InvalidInputError("inertia must be positive")
        if not (self.sigma_0 > 0 and self.sigma_slope > 0):
            raise InvalidInputError("main-sequence coefficients must be positive")
        if not 0 < self.baseline < 0.3:
            raise InvalidInputError(f"baseline must lie in (0, 0.3), got {self.baseline}")
        gains = (self.gravity_gain, self.yaw_gain, self.accel_unit, *self.emg_gains)
        if min(gains) <= 0 or min(self.w_pitch, self.w_yaw, self.w_cross) < 0:
            raise InvalidInputError("oracle gains must be positive")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def passive_torque(cfg: OracleConfig, angles) -> np.ndarray:
    a = np.asarray(angles, dtype=float)
    return np.stack([-cfg.gravity_gain * np.sin(np.radians(a[..., 0] + cfg.pitch_offset)),
                     -cfg.yaw_gain * np.sin(np.radians(a[..., 1]))], axis=-1)


def active_torque(cfg: OracleConfig, angles, accel) -> np.ndarray:
    return cfg.inertia * np.asarray(accel, dtype=float) / cfg.accel_unit - passive_torque(cfg, angles)


def contraction(cfg: OracleConfig, torque) -> np.ndarray:
    """The oracle's torque-to-MCL map."""
    t = np.abs(np.asarray(torque, dtype=float))
    raw = cfg.baseline + cfg.w_pitch * t[..., 0] + cfg.w_yaw * t[..., 1] + cfg.w_cross * t[..., 0] * t[..., 1]
    return np.minimum(cfg.cap, raw)


def oracle_mcl(cfg: OracleConfig, angles, accel=None) -> np.ndarray:
    """Ground-truth MCL for (..., 2) poses and accelerations (deg, deg/s^2)."""
    angles = np.asarray(angles, dtype=float)
    accel = np.zeros_like(angles) if accel is None else accel
    return contraction(cfg, active_torque(cfg, angles, accel))


def pilot_anchors() -> np.ndarray:
    return np.array([(p, y) for p in PILOT_PITCH for y in PILOT_YAW])


def eval_anchors() -> np.ndarray:
    return np.array([(p, y) for p in EVAL_PITCH for y in EVAL_YAW])


def protocol_anchors(protocol: str) -> np.ndarray:
    if protocol == "pilot":
        return pilot_anchors()
    if protocol == "eval":
        return eval_anchors()
    raise InvalidInputError(f"unknown protocol {protocol!r}; expected 'pilot' or 'eval'")


def protocol_targets(anchor) -> list[tuple[float, float]]:
    """The surrounding targets of an anchor that stay inside the study field."""
    p, y = float(anchor[0]), float(anchor[1])
    return [(p + dp, y + dy) for dp, dy in TARGET_DELTAS if in_study_field((p + dp, y + dy))]


def _stationary_residuals(cfg: OracleConfig, targets: StationaryTargets) -> tuple[np.ndarray, np.ndarray]:
    grid = oracle_mcl(cfg, pilot_anchors()).reshape(len(PILOT_PITCH), len(PILOT_YAW))
    yaw = np.array(PILOT_YAW)
    primary = np.array([
        oracle_mcl(cfg, [0.0, 0.0]) - targets.origin,
        oracle_mcl(cfg, [30.0, 50.0]) - targets.corner,
        grid.mean() - targets.grid_mean,
    ])
    secondary = np.array([
        grid[:, yaw == 0].mean() - targets.yaw_zero_mean,
        grid[:, np.abs(yaw) == 50].mean() - targets.yaw_max_mean,
        grid[-1].mean() - targets.pitch_up_mean,
        grid[0].mean() - targets.pitch_down_mean,
    ])
    return primary, secondary


def check_stationary_trends(cfg: OracleConfig) -> None:
    """Raise CalibrationError unless yaw is monotone and pitch asymmetric."""
    up, down = oracle_mcl(cfg, [30.0, 0.0]), oracle_mcl(cfg, [-30.0, 0.0])
    if not up > down:
        raise CalibrationError(f"pitch asymmetry violated: MCL(+30,0)={up:.3f} <= MCL(-30,0)={down:.3f}")
    yaws = np.array([0.0, 20.0, 30.0, 40.0, 50.0])
    for p in PILOT_PITCH:
        row = oracle_mcl(cfg, np.column_stack([np.full_like(yaws, p), yaws]))
        if not np.all(np.diff(row) > 0):
            raise CalibrationError(f"MCL not increasing in |yaw| at pitch {p:g}: {np.round(row, 3)}")


def calibrate(targets: StationaryTargets = StationaryTargets(), cfg: OracleConfig = OracleConfig(),
              primary_weight: float = 100.0, min_yaw_weight: float = 0.05) -> OracleConfig:
    """Fit baseline, pitch offset and the three contraction weights to stationary targets.

    The torque gains stay fixed: only their products with the contraction
    weights are identifiable from stationary data. Primary targets (origin,
    far corner, grid mean) are weighted ``primary_weight`` times the
    secondary row/column means and must each end within the tolerance.
    """
    def unpack(theta):
        b, p0, wp, wy, wc = theta
        return replace(cfg, baseline=float(b), pitch_offset=float(p0), w_pitch=float(wp),
                       w_yaw=float(wy), w_cross=float(wc))

    def residuals(theta):
        primary, secondary = _stationary_residuals(unpack(theta), targets)
        return np.concatenate([primary_weight * primary, secondary])

    fit = least_squares(residuals, x0=[0.1, 10.0, 0.3, 0.1, 0.5],
                        bounds=([1e-3, -45.0, 0.0, min_yaw_weight, 0.0], [0.299, 45.0, 5.0, 5.0, 10.0]),
                        xtol=1e-12, ftol=1e-12)
    out = replace(unpack(fit.x), calibrated=True)
    primary, _ = _stationary_residuals(out, targets)
    if np.max(np.abs(primary)) > targets.tolerance:
        raise CalibrationError(f"stationary calibration residuals {np.round(primary, 4)} exceed {targets.tolerance}")
    check_stationary_trends(out)
    return out


_DEFAULT = None


def default_oracle() -> OracleConfig:
    """The calibrated default configuration (computed once per process)."""
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = calibrate()
    return _DEFAULT


def session_rng(seed: int, protocol: str, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, PROTOCOLS[protocol], index])))


def _round_up(t: float, grid: float = TIME_GRID_S) -> float:
    return math.ceil(t / grid - 1e-9) * grid


def main_sequence_width(cfg: OracleConfig, displacement: float, axis: int,
                        rng: np.random.Generator | None = None) -> float:
    """Main-sequence width, widened if needed to respect peak velocity/acceleration limits.

    With ``rng`` the width is jittered by up to ``sigma_jitter`` before the
    limits are applied.
    """
    d = abs(displacement)
    sigma = cfg.sigma_0 + cfg.sigma_slope * d
    if rng is not None:
        sigma *= rng.uniform(1.0 - cfg.sigma_jitter, 1.0 + cfg.sigma_jitter)
    margin = 0.8
    v_min = d / (margin * cfg.max_velocity[axis] * SQRT_2PI)
    a_min = math.sqrt(d * math.exp(-0.5) / (margin * cfg.max_accel[axis] * SQRT_2PI))
    return max(sigma, v_min, a_min)


def _integrate(omega: np.ndarray, h: float) -> np.ndarray:
    """Cumulative trapezoid from 0."""
    return np.concatenate([[0.0], np.cumsum(0.5 * (omega[1:] + omega[:-1]) * h)])


def _jitter_scale(base: np.ndarray, jitter: np.ndarray, h: float, max_velocity: float,
                  max_accel: float) -> float:
    """Largest factor in [0, 1] keeping finite-difference peaks of ``base + s * jitter`` under the limits.

    Both derivatives are linear in ``s``, so the triangle inequality gives a
    sufficient bound per limit.
    """
    scale = 1.0
    v_base, v_jit = np.gradient(base, h), np.gradient(jitter, h)
    a_base, a_jit = np.gradient(v_base, h), np.gradient(v_jit, h)
    for d_base, d_jit, limit in ((v_base, v_jit, max_velocity), (a_base, a_jit, max_accel)):
        if np.abs(d_base + d_jit).max() <= limit:
            continue
        room = limit - np.abs(d_base).max()
        scale = min(scale, max(room, 0.0) / max(np.abs(d_jit).max(), 1e-12))
    return scale


@dataclass(frozen=True)
class Movement:
    trajectory: TimedTrajectory
    profiles: tuple[GaussianProfile, GaussianProfile]
    duration: float


def gen_movement(cfg: OracleConfig, r_s, r_e, rng: np.random.Generator,
                 sample_rate: float | None = None) -> Movement:
    """One uni-directional movement with Gaussian velocity plus smooth jitter.

    Widths follow the jittered main sequence per axis, each profile peaks
    three nominal widths after onset, and the duration is rounded up to the
    0.1 s grid. The jitter is low-pass noise shaped by the profile and
    stripped of its net displacement, so the endpoint stays exact; it is
    shrunk where needed so peak velocity and acceleration stay under the
    configured limits.
    """
    rate = cfg.pose_rate if sample_rate is None else sample_rate
    start = np.asarray(r_s, dtype=float)
    end = np.asarray(r_e, dtype=float)
    delta = end - start
    profiles = []
    for axis in range(2):
        if delta[axis] == 0:
            profiles.append(GaussianProfile(0.0, 0.0, 0.1, degenerate=True))
            continue
        sigma = main_sequence_width(cfg, delta[axis], axis, rng)
        center = 3.0 * main_sequence_width(cfg, delta[axis], axis)
        profiles.append(GaussianProfile(float(np.sign(delta[axis])), center, sigma))
    ends = [p.end_time for p, d in zip(profiles, delta) if d != 0]
    if not ends:
        return Movement(TimedTrajectory(rate, start[None, :]), tuple(profiles), 0.0)
    duration = _round_up(max(ends))
    traj, scaled = synthesize_trajectory(profiles, start, end, rate, duration)
    n = len(traj)
    h = 1.0 / rate
    t = traj.times
    b, a = signal.butter(2, cfg.jitter_cutoff_hz, fs=rate)
    angles = np.array(traj.angles)
    for axis in range(2):
        if delta[axis] == 0 or cfg.velocity_jitter == 0:
            continue
        prof = scaled[axis]
        shape = np.exp(-0.5 * ((t - prof.center) / prof.width) ** 2)
        noise = signal.filtfilt(b, a, rng.standard_normal(n), padlen=min(n - 1, 9))
        noise = noise / max(noise.std(), 1e-12) * cfg.velocity_jitter * abs(prof.amplitude) * shape
        noise -= np.trapezoid(noise, dx=h) / np.trapezoid(shape, dx=h) * shape
        noise *= _jitter_scale(angles[:, axis], _integrate(noise, h), h,
                               cfg.max_velocity[axis], cfg.max_accel[axis])
        angles[1:, axis] += _integrate(noise, h)[1:]
        angles[-1, axis] = end[axis]
    return Movement(TimedTrajectory(rate, angles), scaled, duration)


@dataclass(frozen=True)
class Session:
    """A hold at the anchor, one movement, then a hold at the target."""

    index: int
    participant: int
    anchor: tuple[float, float]
    target: tuple[float, float]
    trajectory: TimedTrajectory
    mcl: MclSequence
    onset_s: float
    offset_s: float
    emg: RawEmgRecord | None = None

    def trajectory_20hz(self) -> TimedTrajectory:
        return resample(self.trajectory, MODEL_RATE)


@dataclass
class SyntheticDataset:
    protocol: str
    seed: int
    config: OracleConfig
    sessions: list[Session] = field(default_factory=list)

    @property
    def split(self) -> str:
        return SPLITS[self.protocol]

    def anchors(self) -> list[tuple[float, float]]:
        return sorted({s.anchor for s in self.sessions})

    def by_anchor(self) -> dict[tuple[float, float], list[Session]]:
        out: dict[tuple[float, float], list[Session]] = {}
        for s in self.sessions:
            out.setdefault(s.anchor, []).append(s)
        return out


def ground_truth_mcl(cfg: OracleConfig, traj: TimedTrajectory) -> MclSequence:
    """Oracle MCL along a trajectory, delayed by ``emd_s`` and resampled to 20 Hz."""
    kin = differentiate(traj)
    raw = oracle_mcl(cfg, kin.angles, kin.acceleration)
    t20 = np.arange(int(math.floor(traj.duration * MODEL_RATE + 1e-9)) + 1) / MODEL_RATE
    delayed = np.interp(t20 - cfg.emd_s, traj.times, raw)
    return MclSequence(MODEL_RATE, delayed)


def gen_session(cfg: OracleConfig, anchor, target, rng: np.random.Generator, index: int = 0,
                participant: int = 0, with_emg: bool = False) -> Session:
    move = gen_movement(cfg, anchor, target, rng)
    rate = cfg.pose_rate
    hold = int(round(cfg.hold_s * rate))
    total = _round_up(2 * cfg.hold_s + move.duration)
    n_total = int(round(total * rate)) + 1
    a = move.trajectory.angles
    tail = n_total - hold - len(a)
    angles = np.vstack([np.repeat(a[:1], hold, 0), a, np.repeat(a[-1:], tail, 0)])
    traj = TimedTrajectory(rate, angles)
    mcl = ground_truth_mcl(cfg, traj)
    emg = None
    if with_emg:
        yaw_vel = differentiate(resample(traj, MODEL_RATE)).velocity[:, 1]
        emg = gen_emg(cfg, mcl, yaw_vel, rng)
    return Session(index, participant, tuple(map(float, anchor)), tuple(map(float, target)), traj, mcl,
                   onset_s=cfg.hold_s, offset_s=cfg.hold_s + move.duration, emg=emg)


def gen_emg(cfg: OracleConfig, mcl: MclSequence, yaw_velocity, rng: np.random.Generator,
            sample_rate: float = EMG_RATE) -> RawEmgRecord:
    """Synthesize four-channel raw EMG whose envelope follows ``mcl``.

    Activation is shared across channels by muscle function: leftward yaw
    (negative velocity) loads R-SCM and L-SC, rightward loads L-SCM and
    R-SC. Each channel is band-limited unit-variance noise modulated by its
    share, scaled by its gain, plus a sensor noise floor and slow drift.
    """
    n = int(round((len(mcl) - 1) / mcl.sample_rate * sample_rate)) + 1
    t = np.arange(n) / sample_rate
    activation = np.interp(t, mcl.times, mcl.values)
    if yaw_velocity is None:
        direction = np.zeros(n)
    else:
        yaw_velocity = np.asarray(yaw_velocity, dtype=float)
        direction = np.tanh(-np.interp(t, mcl.times, yaw_velocity) / cfg.lateral_velocity)
    sign = np.array([-1.0, 1.0, 1.0, -1.0])  # L-SCM, R-SCM, L-SC, R-SC under leftward yaw
    shares = 0.25 + cfg.lateral_share * sign[:, None] * direction[None, :]
    sos = bandpass_sos(20.0, 450.0, sample_rate, 4)
    carrier = signal.sosfilt(sos, rng.standard_normal((len(CHANNELS), n)), axis=1)
    carrier /= carrier.std(axis=1, keepdims=True)
    floor = signal.sosfilt(sos, rng.standard_normal((len(CHANNELS), n)), axis=1)
    floor /= floor.std(axis=1, keepdims=True)
    phase = rng.uniform(0.0, 2.0 * np.pi, len(CHANNELS))
    drift = cfg.drift_mv * np.sin(2.0 * np.pi * cfg.drift_hz * t[None, :] + phase[:, None])
    gains = np.asarray(cfg.emg_gains)[:, None]
    channels = cfg.emg_scale_mv * gains * (4.0 * shares * activation[None, :] * carrier + cfg.emg_floor * floor) + drift
    return RawEmgRecord(sample_rate, channels)


def gen_dataset(cfg: OracleConfig, protocol: str, seed: int = 0, participants: int | None = None,
                with_emg: bool = False) -> SyntheticDataset:
    """Every (participant, anchor, in-field target) session of a protocol."""
    if not cfg.calibrated:
        raise StateError("oracle configuration is not calibrated")
    anchors = protocol_anchors(protocol)
    participants = DEFAULT_PARTICIPANTS[protocol] if participants is None else participants
    ds = SyntheticDataset(protocol, seed, cfg)
    index = 0
    for participant in range(participants):
        for anchor in anchors:
            for target in protocol_targets(anchor):
                rng = session_rng(seed, protocol, index)
                ds.sessions.append(gen_session(cfg, anchor, target, rng, index, participant, with_emg))
                index += 1
    return ds
