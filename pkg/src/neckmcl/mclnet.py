"""MCLNet: contraction level from head pose and angular acceleration.

The network mirrors the torque balance ``T_p(r) + T_a = I * alpha``: a
convolutional passive-torque branch sees the pose window, the active torque
``I * alpha - T_p`` is formed explicitly, and a second convolutional branch
maps active torque to contraction level for the central four samples.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, StateError
from .kinematics import (CENTER_LENGTH, CENTER_OFFSET, MODEL_RATE, WINDOW_LENGTH, MclSequence,
                         TimedTrajectory, differentiate, resample, stack_windows, window_starts)
from .nn import (BatchNorm1D, Conv1D, FullyConnected, MaxPool1D, ReLU, Sequential, AdamState,
                 adam_step, l2_loss, lr_schedule, sigmoid, softplus)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    lr_drop_epoch: int = 10
    batch_size: int = 64
    weight_decay: float = 5e-4
    seed: int = 0


def _conv_block(n_in, n_out, kernel, rng, relu=True):
    layers = [Conv1D(n_in, n_out, kernel, rng), BatchNorm1D(n_out)]
    if relu:
        layers.append(ReLU())
    return layers


class MCLNet:
    def __init__(self, rng: np.random.Generator | None = None, hidden: int = 20, kernel: int = 3):
        rng = np.random.default_rng(0) if rng is None else rng
        self.hidden = hidden
        self.kernel = kernel
        self.passive_torque_net = Sequential(
            _conv_block(2, hidden, kernel, rng)
            + _conv_block(hidden, hidden, kernel, rng)
            + _conv_block(hidden, 2, kernel, rng, relu=False)
        )
        self.torque_to_mcl_net = Sequential(
            _conv_block(2, hidden, kernel, rng)
            + _conv_block(hidden, hidden, kernel, rng)
            + [MaxPool1D(2, 2)]
            + _conv_block(hidden, hidden, kernel, rng)
            + [FullyConnected(hidden, 1, rng)]
        )
        self.log_inertia = np.zeros(())
        self.log_inertia_grad = np.zeros(())
        self.input_stats: dict[str, np.ndarray] | None = None
        self._cache = None

    @property
    def inertia(self) -> float:
        return float(np.exp(self.log_inertia))

    @property
    def trained(self) -> bool:
        return self.input_stats is not None

    def parameters(self) -> dict[str, np.ndarray]:
        params = {f"passive_torque_net.{k}": v for k, v in self.passive_torque_net.parameters().items()}
        params.update({f"torque_to_mcl_net.{k}": v for k, v in self.torque_to_mcl_net.parameters().items()})
        params["log_inertia"] = self.log_inertia
        return params

    def gradients(self) -> dict[str, np.ndarray]:
        grads = {f"passive_torque_net.{k}": v for k, v in self.passive_torque_net.gradients().items()}
        grads.update({f"torque_to_mcl_net.{k}": v for k, v in self.torque_to_mcl_net.gradients().items()})
        grads["log_inertia"] = self.log_inertia_grad
        return grads

    def decay_keys(self) -> set[str]:
        skip = {f"passive_torque_net.{k}" for k in self.passive_torque_net.no_decay_keys()}
        skip |= {f"torque_to_mcl_net.{k}" for k in self.torque_to_mcl_net.no_decay_keys()}
        skip.add("log_inertia")
        return set(self.parameters()) - skip

    def set_input_stats(self, angles: np.ndarray, acceleration: np.ndarray):
        """Store standardization statistics from training windows (..., 2) arrays.

        Acceleration is only scaled, never centered, so a stationary window
        keeps zero acceleration after standardization.
        """
        a = angles.reshape(-1, 2)
        acc = acceleration.reshape(-1, 2)
        std = a.std(axis=0)
        scale = np.sqrt(np.mean(acc ** 2, axis=0))
        self.input_stats = {
            "pose_mean": a.mean(axis=0),
            "pose_std": np.where(std > 0, std, 1.0),
            "accel_scale": np.where(scale > 0, scale, 1.0),
        }

    def _standardize(self, angles, acceleration):
        if self.input_stats is None:
            raise StateError("MCLNet has no input statistics; train or load it first")
        angles = np.asarray(angles, dtype=float)
        acceleration = np.asarray(acceleration, dtype=float)
        if angles.shape != acceleration.shape or angles.shape[1:] != (WINDOW_LENGTH, 2):
            raise InvalidInputError(f"expected windows of shape (n, {WINDOW_LENGTH}, 2), got "
                                    f"{angles.shape} and {acceleration.shape}")
        if not (np.all(np.isfinite(angles)) and np.all(np.isfinite(acceleration))):
            raise InvalidInputError("non-finite values in MCLNet input")
        s = self.input_stats
        pose = ((angles - s["pose_mean"]) / s["pose_std"]).transpose(0, 2, 1)
        acc = (acceleration / s["accel_scale"]).transpose(0, 2, 1)
        return pose, acc

    def forward(self, angles, acceleration, train: bool = False, internals: bool = False):
        """Predict the four central MCL values for each window.

        ``angles`` and ``acceleration`` are raw (degrees, deg/s^2) with shape
        (n, 8, 2). Returns (n, 4); with ``internals`` also a dict holding the
        standardized acceleration and the passive/active torques (n, 2, 8).
        """
        pose, acc = self._standardize(angles, acceleration)
        inertia = np.exp(self.log_inertia)
        tp = self.passive_torque_net.forward(pose, train)
        ta = inertia * acc - tp
        h = self.torque_to_mcl_net.forward(ta, train)[:, 0, :]
        # softplus underflows to 0 far below zero; the floor keeps outputs strictly positive
        out = np.maximum(softplus(h), np.finfo(float).tiny)
        self._cache = (acc, h) if train else None
        if internals:
            return out, {"accel": acc, "passive_torque": tp, "active_torque": ta, "inertia": inertia}
        return out

    __call__ = forward

    def backward(self, grad: np.ndarray):
        if self._cache is None:
            raise StateError("MCLNet.backward called without a training-mode forward")
        acc, h = self._cache
        dh = (grad * sigmoid(h))[:, None, :]
        dta = self.torque_to_mcl_net.backward(dh)
        inertia = np.exp(self.log_inertia)
        self.log_inertia_grad[...] = np.sum(dta * inertia * acc)
        self.passive_torque_net.backward(-dta)


def window_dataset(trajectories: list[TimedTrajectory], mcl: list[np.ndarray], stride: int = 4,
                   target_shift: int = 0):
    """Cut paired 20 Hz trajectories and MCL sequences into training windows.

    ``target_shift`` pairs the window centered at samples i..i+3 with MCL at
    i+shift..i+3+shift, emulating electromechanical delay; windows whose
    shifted targets fall outside the sequence are dropped.
    Returns (angles, acceleration, targets) with shapes (W, 8, 2) x2 and (W, 4).
    """
    angles, accs, targets = [], [], []
    for traj, values in zip(trajectories, mcl):
        if traj.sample_rate != MODEL_RATE:
            traj = resample(traj, MODEL_RATE)
        values = np.asarray(values, dtype=float)
        if len(values) != len(traj):
            raise InvalidInputError(f"trajectory has {len(traj)} samples but MCL has {len(values)}")
        if len(traj) < WINDOW_LENGTH:
            continue
        kin = differentiate(traj)
        starts = window_starts(len(traj), stride)
        first = starts + CENTER_OFFSET + target_shift
        keep = (first >= 0) & (first + CENTER_LENGTH <= len(values))
        starts = starts[keep]
        if starts.size == 0:
            continue
        angles.append(stack_windows(kin.angles, starts))
        accs.append(stack_windows(kin.acceleration, starts))
        idx = (starts + CENTER_OFFSET + target_shift)[:, None] + np.arange(CENTER_LENGTH)[None, :]
        targets.append(values[idx])
    if not angles:
        raise InvalidInputError("no windows could be built from the given sequences")
    return np.concatenate(angles), np.concatenate(accs), np.concatenate(targets)


def _seed_streams(seed: int):
    init_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(shuffle_ss)


def train_mclnet(angles: np.ndarray, acceleration: np.ndarray, targets: np.ndarray,
                 config: TrainConfig = TrainConfig(), hidden: int = 20, kernel: int = 3):
    """Fit MCLNet with L2 loss and Adam; returns (net, per-epoch mean train loss)."""
    if len(angles) == 0:
        raise InvalidInputError("empty training set")
    if not (len(angles) == len(acceleration) == len(targets)):
        raise InvalidInputError("windows and targets are not aligned")
    init_rng, shuffle_rng = _seed_streams(config.seed)
    net = MCLNet(init_rng, hidden=hidden, kernel=kernel)
    net.set_input_stats(angles, acceleration)
    params = net.parameters()
    decay = net.decay_keys()
    state = AdamState()
    history = []
    n = len(angles)
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config.lr, config.lr_drop_epoch)
        order = shuffle_rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            pred = net.forward(angles[idx], acceleration[idx], train=True)
            loss, g = l2_loss(pred, targets[idx])
            net.backward(g)
            adam_step(state, params, net.gradients(), lr, config.weight_decay, decay)
            total += loss * len(idx)
        history.append(total / n)
        log.debug("mclnet epoch %d lr %.1e loss %.6f", epoch, lr, history[-1])
    return net, history


def _sequence_starts(n: int, stride: int) -> np.ndarray:
    starts = window_starts(n, stride)
    if starts[-1] != n - WINDOW_LENGTH:
        starts = np.append(starts, n - WINDOW_LENGTH)
    return starts


def estimate_sequences(net: MCLNet, trajectories: list[TimedTrajectory], stride: int = 4) -> list[MclSequence]:
    """Sliding-window MCL estimates for several trajectories in one batched pass.

    Overlapping central predictions are averaged. A final window aligned to
    the sequence end is added when the stride leaves a tail, so only the
    first and last two samples lack a prediction; those take the nearest
    predicted value and are flagged.
    """
    if not net.trained:
        raise StateError("MCLNet is not trained")
    if stride < 1 or stride > CENTER_LENGTH:
        raise InvalidInputError(f"stride must be in 1..{CENTER_LENGTH}, got {stride}")
    prepared, all_angles, all_acc, spans = [], [], [], []
    for traj in trajectories:
        if traj.sample_rate != MODEL_RATE:
            traj = resample(traj, MODEL_RATE)
        if len(traj) < WINDOW_LENGTH:
            raise InvalidInputError(f"need at least {WINDOW_LENGTH} samples at 20 Hz, got {len(traj)}")
        kin = differentiate(traj)
        starts = _sequence_starts(len(traj), stride)
        prepared.append((len(traj), starts))
        all_angles.append(stack_windows(kin.angles, starts))
        all_acc.append(stack_windows(kin.acceleration, starts))
    pred = net.forward(np.concatenate(all_angles), np.concatenate(all_acc))
    out, k = [], 0
    for n, starts in prepared:
        p = pred[k:k + len(starts)]
        k += len(starts)
        total = np.zeros(n)
        count = np.zeros(n)
        idx = (starts + CENTER_OFFSET)[:, None] + np.arange(CENTER_LENGTH)[None, :]
        np.add.at(total, idx, p)
        np.add.at(count, idx, 1.0)
        covered = count > 0
        values = np.where(covered, total / np.maximum(count, 1.0), 0.0)
        cov_idx = np.flatnonzero(covered)
        missing = np.flatnonzero(~covered)
        nearest = cov_idx[np.clip(np.searchsorted(cov_idx, missing), 0, len(cov_idx) - 1)]
        left = cov_idx[np.clip(np.searchsorted(cov_idx, missing) - 1, 0, len(cov_idx) - 1)]
        nearest = np.where(np.abs(left - missing) < np.abs(nearest - missing), left, nearest)
        values[missing] = values[nearest]
        out.append(MclSequence(MODEL_RATE, values, ~covered))
    return out


def estimate_sequence(net: MCLNet, traj: TimedTrajectory, stride: int = 4) -> MclSequence:
    return estimate_sequences(net, [traj], stride)[0]


def stationary_mcl_map(net: MCLNet, poses) -> np.ndarray:
    """Mean central MCL for a motionless window held at each (pitch, yaw) pose."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    angles = np.repeat(poses[:, None, :], WINDOW_LENGTH, axis=1)
    pred = net.forward(angles, np.zeros_like(angles))
    return pred.mean(axis=1)
