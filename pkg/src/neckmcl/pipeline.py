"""Glue between recorded sessions and the two learned models: movement
segmentation, training-set construction and pre-hoc trajectory assembly.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .kinematics import MODEL_RATE, TimedTrajectory, differentiate
from .mclnet import TrainConfig, train_mclnet, window_dataset
from .trajectory import (TRAJNET_TRAIN, fit_profile_pair, pair_to_params, predict_profile,
                         synthesize_trajectory, train_trajectory_net)


def onset_index(session) -> int:
    return int(round(session.onset_s * MODEL_RATE))


def offset_index(session) -> int:
    return int(round(session.offset_s * MODEL_RATE))


def movement_velocity(session) -> np.ndarray:
    """20 Hz finite-difference velocity (n, 2) from movement onset to offset inclusive."""
    kin = differentiate(session.trajectory_20hz())
    return kin.velocity[onset_index(session):offset_index(session) + 1]


def mcl_training_set(sessions, stride: int = 4, target_shift: int = 0):
    """Windows and ground-truth targets from every session."""
    if not sessions:
        raise InvalidInputError("no sessions to train on")
    return window_dataset([s.trajectory_20hz() for s in sessions], [s.mcl.values for s in sessions],
                          stride, target_shift)


def profile_training_set(sessions):
    """(starts, ends, fitted profile parameters (n, 6), per-axis fit NRMSE (n, 2))."""
    if not sessions:
        raise InvalidInputError("no sessions to fit")
    starts = np.array([s.anchor for s in sessions])
    ends = np.array([s.target for s in sessions])
    params, fit_err = [], []
    for s in sessions:
        fits = fit_profile_pair(movement_velocity(s))
        params.append(pair_to_params(tuple(f.profile for f in fits)))
        fit_err.append([f.nrmse for f in fits])
    return starts, ends, np.array(params), np.array(fit_err)


def train_mcl_model(sessions, config: TrainConfig = TrainConfig(), stride: int = 4, target_shift: int = 0):
    angles, acc, targets = mcl_training_set(sessions, stride, target_shift)
    return train_mclnet(angles, acc, targets, config)


def train_trajectory_model(sessions, config: TrainConfig = TRAJNET_TRAIN):
    starts, ends, params, _ = profile_training_set(sessions)
    return train_trajectory_net(starts, ends, params, config)


def hold_and_move(movement: TimedTrajectory, onset: int, length: int) -> TimedTrajectory:
    """Stationary lead-in of ``onset`` samples, the movement, then a hold padded or cut to ``length``."""
    a = movement.angles
    out = np.vstack([np.repeat(a[:1], onset, 0), a])
    if len(out) >= length:
        out = out[:length]
    else:
        out = np.vstack([out, np.repeat(a[-1:], length - len(out), 0)])
    return TimedTrajectory(movement.sample_rate, out)


def prehoc_trajectory(traj_net, session) -> TimedTrajectory:
    """A session's 20 Hz trajectory rebuilt from its start and end poses only."""
    pair = predict_profile(traj_net, session.anchor, session.target)
    movement, _ = synthesize_trajectory(pair, session.anchor, session.target)
    return hold_and_move(movement, onset_index(session), len(session.mcl))
