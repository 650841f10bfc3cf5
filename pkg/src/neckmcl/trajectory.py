"""Gaussian angular-velocity profiles, their regression from start/end poses,
endpoint-exact trajectory synthesis, and cumulative MCL of a movement.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInputError, StateError
from .kinematics import MODEL_RATE, HeadPose, TimedTrajectory
from .mclnet import TrainConfig, estimate_sequences
from .nn import (AdamState, BatchNorm1D, FullyConnected, ReLU, Sequential, adam_step,
                 inverse_softplus, l2_loss, lr_schedule, softplus)

log = logging.getLogger(__name__)

SQRT_2PI = math.sqrt(2.0 * math.pi)
DEFAULT_WIDTH = 0.1
TAIL_SIGMAS = 3.0
CONTEXT_SAMPLES = 4

TRAJNET_TRAIN = TrainConfig(epochs=25, lr=1e-3, lr_drop_epoch=15, batch_size=64, weight_decay=1e-5)


@dataclass(frozen=True)
class GaussianProfile:
    """``omega(t) = amplitude * exp(-(t - center)^2 / (2 width^2))``; t from movement onset."""

    amplitude: float
    center: float
    width: float
    degenerate: bool = False

    def __post_init__(self):
        if not self.width > 0:
            raise InvalidInputError(f"profile width must be positive, got {self.width}")

    def velocity(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.amplitude * np.exp(-0.5 * ((t - self.center) / self.width) ** 2)

    @property
    def end_time(self) -> float:
        return self.center + TAIL_SIGMAS * self.width


@dataclass(frozen=True)
class ProfileFit:
    profile: GaussianProfile
    nrmse: float
    iterations: int


def _gauss_newton(t, v, a, mu, sigma, max_iter=50, tol=1e-6):
    theta = np.array([a, mu, sigma], dtype=float)

    def residual(th):
        return th[0] * np.exp(-0.5 * ((t - th[1]) / th[2]) ** 2) - v

    r = residual(theta)
    cost = float(r @ r)
    it = 0
    for it in range(1, max_iter + 1):
        a, mu, sigma = theta
        z = (t - mu) / sigma
        g = np.exp(-0.5 * z * z)
        jac = np.column_stack([g, a * g * z / sigma, a * g * z * z / sigma])
        step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        # halve until the cost stops increasing and the width stays positive
        scale = 1.0
        while True:
            trial = theta + scale * step
            if trial[2] > 0:
                r_new = residual(trial)
                cost_new = float(r_new @ r_new)
                if cost_new <= cost:
                    break
            scale *= 0.5
            if scale < 1e-8:
                return theta, it
        theta, r = trial, r_new
        change = abs(cost - cost_new) / max(cost, 1e-300)
        cost = cost_new
        if change < tol:
            break
    return theta, it


def fit_profile(velocity, sample_rate: float = MODEL_RATE) -> ProfileFit:
    """Least-squares Gaussian fit to one axis of a single-movement velocity curve.

    Starts from the signed peak, its time and the width implied by the net
    displacement, then refines with damped Gauss-Newton. An all-zero curve
    gives a zero-amplitude profile flagged as degenerate.
    """
    v = np.asarray(velocity, dtype=float)
    if v.ndim != 1 or v.size < 3:
        raise InvalidInputError("fit_profile needs a 1D velocity curve with at least 3 samples")
    t = np.arange(v.size) / sample_rate
    if not np.any(v):
        return ProfileFit(GaussianProfile(0.0, 0.0, DEFAULT_WIDTH, degenerate=True), 0.0, 0)
    k = int(np.argmax(np.abs(v)))
    a0 = v[k]
    disp = float(np.trapezoid(v, dx=1.0 / sample_rate))
    sigma0 = abs(disp) / (abs(a0) * SQRT_2PI)
    if not sigma0 > 0:
        sigma0 = DEFAULT_WIDTH
    theta, iters = _gauss_newton(t, v, a0, t[k], sigma0)
    profile = GaussianProfile(float(theta[0]), float(max(theta[1], 0.0)), float(theta[2]))
    span = float(v.max() - v.min())
    rmse = float(np.sqrt(np.mean((profile.velocity(t) - v) ** 2)))
    nrmse = 100.0 * rmse / span if span > 0 else 0.0
    return ProfileFit(profile, nrmse, iters)


def fit_profile_pair(velocity: np.ndarray, sample_rate: float = MODEL_RATE) -> tuple[ProfileFit, ProfileFit]:
    """Fit pitch and yaw columns of an (n, 2) velocity array."""
    velocity = np.asarray(velocity, dtype=float)
    return fit_profile(velocity[:, 0], sample_rate), fit_profile(velocity[:, 1], sample_rate)


def _pose_array(pose) -> np.ndarray:
    return pose.as_array() if isinstance(pose, HeadPose) else np.asarray(pose, dtype=float)


def movement_duration(pair, displacement) -> float:
    """``max(center + 3 width)`` over the axes that actually move."""
    ends = [p.end_time for p, d in zip(pair, displacement) if d != 0]
    return max(ends) if ends else 0.0


def synthesize_trajectory(pair, r_s, r_e, sample_rate: float = MODEL_RATE,
                          duration: float | None = None) -> tuple[TimedTrajectory, tuple[GaussianProfile, GaussianProfile]]:
    """Integrate a pair of Gaussian velocity profiles from ``r_s`` to exactly ``r_e``.

    Samples run from t = 0 to the first grid point at or after the movement
    end (``duration`` overrides it). Each moving axis' amplitude is rescaled
    so the trapezoidal integral of its velocity equals the displacement;
    static axes get zero amplitude. Returns the trajectory and the rescaled
    profiles.
    """
    start, end = _pose_array(r_s), _pose_array(r_e)
    delta = end - start
    if not np.any(delta):
        flat = tuple(replace(p, amplitude=0.0) for p in pair)
        return TimedTrajectory(sample_rate, start[None, :]), flat
    t_end = movement_duration(pair, delta) if duration is None else duration
    n = int(math.ceil(t_end * sample_rate - 1e-9)) + 1
    n = max(n, 2)
    t = np.arange(n) / sample_rate
    h = 1.0 / sample_rate
    angles = np.empty((n, 2))
    scaled = []
    for axis in range(2):
        prof = pair[axis]
        if delta[axis] == 0:
            scaled.append(replace(prof, amplitude=0.0))
            angles[:, axis] = start[axis]
            continue
        shape = np.exp(-0.5 * ((t - prof.center) / prof.width) ** 2)
        area = float(np.trapezoid(shape, dx=h))
        amp = delta[axis] / area
        omega = amp * shape
        increments = 0.5 * (omega[1:] + omega[:-1]) * h
        angles[0, axis] = start[axis]
        angles[1:, axis] = start[axis] + np.cumsum(increments)
        angles[-1, axis] = end[axis]
        scaled.append(replace(prof, amplitude=float(amp)))
    return TimedTrajectory(sample_rate, angles), tuple(scaled)


def integrate_mcl(values, sample_rate: float = MODEL_RATE) -> float:
    """Trapezoidal time integral in MCL-seconds; a single sample integrates to 0."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(np.trapezoid(values, dx=1.0 / sample_rate))


class TrajectoryNet:
    """MLP from (r_s, r_e - r_s) to per-axis (|A|, mu, sigma).

    The network regresses standardized targets ``[|A|, mu, softplus^-1(sigma)]``
    per axis, so sigma = softplus(...) is positive by construction.
    """

    def __init__(self, rng: np.random.Generator | None = None, hidden: int = 20):
        rng = np.random.default_rng(0) if rng is None else rng
        self.hidden = hidden
        self.net = Sequential([
            FullyConnected(4, hidden, rng), BatchNorm1D(hidden), ReLU(),
            FullyConnected(hidden, hidden, rng), BatchNorm1D(hidden), ReLU(),
            FullyConnected(hidden, 6, rng),
        ])
        self.input_stats: dict[str, np.ndarray] | None = None

    @property
    def trained(self) -> bool:
        return self.input_stats is not None

    @staticmethod
    def features(starts, ends) -> np.ndarray:
        starts = np.atleast_2d(np.asarray(starts, dtype=float))
        ends = np.atleast_2d(np.asarray(ends, dtype=float))
        return np.column_stack([starts, ends - starts])

    @staticmethod
    def encode_targets(params: np.ndarray) -> np.ndarray:
        """(n, 6) rows of [A_p, mu_p, sigma_p, A_y, mu_y, sigma_y] to raw regression targets."""
        z = np.array(params, dtype=float)
        for off in (0, 3):
            z[:, off] = np.abs(z[:, off])
            z[:, off + 2] = inverse_softplus(z[:, off + 2])
        return z

    def _decode(self, raw: np.ndarray) -> np.ndarray:
        s = self.input_stats
        z = raw * s["target_std"] + s["target_mean"]
        out = z.copy()
        for off in (0, 3):
            out[:, off] = np.abs(z[:, off])
            out[:, off + 1] = np.maximum(z[:, off + 1], 0.0)
            out[:, off + 2] = softplus(z[:, off + 2])
        return out

    def predict_params(self, starts, ends) -> np.ndarray:
        """(n, 6) profile parameters with amplitude signs set by the displacement."""
        if not self.trained:
            raise StateError("TrajectoryNet is not trained")
        x = self.features(starts, ends)
        s = self.input_stats
        raw = self.net.forward((x - s["input_mean"]) / s["input_std"], train=False)
        params = self._decode(raw)
        params[:, 0] *= np.sign(x[:, 2])
        params[:, 3] *= np.sign(x[:, 3])
        return params


def params_to_pair(row) -> tuple[GaussianProfile, GaussianProfile]:
    return (GaussianProfile(float(row[0]), float(row[1]), float(row[2])),
            GaussianProfile(float(row[3]), float(row[4]), float(row[5])))


def pair_to_params(pair) -> np.ndarray:
    return np.array([pair[0].amplitude, pair[0].center, pair[0].width,
                     pair[1].amplitude, pair[1].center, pair[1].width])


def predict_profile(net: TrajectoryNet, r_s, r_e) -> tuple[GaussianProfile, GaussianProfile]:
    return params_to_pair(net.predict_params(_pose_array(r_s), _pose_array(r_e))[0])


def train_trajectory_net(starts, ends, params, config: TrainConfig = TRAJNET_TRAIN,
                         mask: np.ndarray | None = None, hidden: int = 20):
    """Regress fitted profile parameters (n, 6) from start/end poses.

    ``mask`` (n, 2) marks axes whose fit is meaningful; masked-out axes (no
    displacement) contribute nothing to the loss. Returns (net, loss history).
    """
    x = TrajectoryNet.features(starts, ends)
    if len(x) == 0:
        raise InvalidInputError("empty training set")
    params = np.asarray(params, dtype=float)
    if params.shape != (len(x), 6):
        raise InvalidInputError(f"expected targets of shape ({len(x)}, 6), got {params.shape}")
    if mask is None:
        mask = x[:, 2:] != 0
    weight = np.repeat(np.asarray(mask, dtype=float), 3, axis=1)
    y = TrajectoryNet.encode_targets(params)
    counts = weight.sum(axis=0)
    mean = np.where(counts > 0, (y * weight).sum(axis=0) / np.maximum(counts, 1), 0.0)
    var = np.where(counts > 0, (((y - mean) ** 2) * weight).sum(axis=0) / np.maximum(counts, 1), 1.0)
    std = np.where(var > 0, np.sqrt(var), 1.0)
    x_std = x.std(axis=0)

    init_ss, shuffle_ss = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    model = TrajectoryNet(np.random.default_rng(init_ss), hidden=hidden)
    model.input_stats = {
        "input_mean": x.mean(axis=0),
        "input_std": np.where(x_std > 0, x_std, 1.0),
        "target_mean": mean,
        "target_std": std,
    }
    xs = (x - model.input_stats["input_mean"]) / model.input_stats["input_std"]
    ys = (y - mean) / std
    params_ref = model.net.parameters()
    decay = set(params_ref) - model.net.no_decay_keys()
    state = AdamState()
    history = []
    n = len(xs)
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config.lr, config.lr_drop_epoch)
        order = shuffle_rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            pred = model.net.forward(xs[idx], train=True)
            w = weight[idx]
            diff = (pred - ys[idx]) * w
            denom = max(w.sum(), 1.0)
            loss = float(np.sum(diff ** 2) / denom)
            model.net.backward(2.0 * diff / denom)
            adam_step(state, params_ref, model.net.gradients(), lr, config.weight_decay, decay)
            total += loss * len(idx)
        history.append(total / n)
        log.debug("trajnet epoch %d lr %.1e loss %.6f", epoch, lr, history[-1])
    return model, history


def _with_context(traj: TimedTrajectory, pad: int) -> TimedTrajectory:
    a = traj.angles
    return TimedTrajectory(traj.sample_rate, np.vstack([np.repeat(a[:1], pad, 0), a, np.repeat(a[-1:], pad, 0)]))


def forecast_movements(traj_net: TrajectoryNet, mcl_net, starts, ends, stride: int = 4):
    """Pre-hoc forecast for many movements in one batched MCLNet pass.

    Each synthesized movement is padded with ``CONTEXT_SAMPLES`` stationary
    samples on both sides so every movement sample gets a full window, and
    the MCL integral is taken over the movement only. Returns a list of
    (H_c, trajectory, profile pair, movement MCL values).
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    params = traj_net.predict_params(starts, ends)
    synth = [synthesize_trajectory(params_to_pair(row), s, e) for row, s, e in zip(params, starts, ends)]
    moving = [k for k, (traj, _) in enumerate(synth) if len(traj) > 1]
    results = [(0.0, traj, pair, np.zeros(len(traj))) for traj, pair in synth]
    if moving:
        seqs = estimate_sequences(mcl_net, [_with_context(synth[k][0], CONTEXT_SAMPLES) for k in moving], stride)
        for k, seq in zip(moving, seqs):
            traj, pair = synth[k]
            values = seq.values[CONTEXT_SAMPLES:CONTEXT_SAMPLES + len(traj)]
            results[k] = (integrate_mcl(values, traj.sample_rate), traj, pair, values)
    return results


def cumulative_mcl(r_s, r_e, traj_net: TrajectoryNet, mcl_net) -> float:
    """Forecast cumulative MCL (MCL-seconds) of moving from ``r_s`` to ``r_e``."""
    return forecast_movements(traj_net, mcl_net, _pose_array(r_s), _pose_array(r_e))[0][0]
