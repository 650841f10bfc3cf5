"""Central finite-difference checks for every layer type and both networks."""
from __future__ import annotations

import numpy as np

from .kinematics import WINDOW_LENGTH
from .mclnet import MCLNet
from .nn import (BatchNorm1D, Conv1D, FullyConnected, MaxPool1D, ReLU, Softplus, branch_signature,
                 check_module_gradients, numerical_gradient_smooth, relative_error)
from .trajectory import TrajectoryNet

TOLERANCE = 1e-4


def layer_gradient_errors(seed: int = 0, h: float = 1e-4) -> dict[str, float]:
    """Max relative error per layer type on small random inputs."""
    rng = np.random.default_rng(seed)
    cases = {
        "FullyConnected": (FullyConnected(5, 3, rng), rng.standard_normal((4, 5))),
        "FullyConnected3D": (FullyConnected(3, 2, rng), rng.standard_normal((2, 3, 6))),
        "Conv1D": (Conv1D(3, 4, 3, rng), rng.standard_normal((2, 3, 8))),
        "BatchNorm1D": (BatchNorm1D(3), rng.standard_normal((5, 3, 4))),
        "BatchNorm1D_2D": (BatchNorm1D(3), rng.standard_normal((6, 3))),
        # keep inputs away from the kink so differences stay on one side
        "ReLU": (ReLU(), rng.choice([-1.0, 1.0], (3, 4)) * rng.uniform(0.1, 1.0, (3, 4))),
        "Softplus": (Softplus(), rng.standard_normal((3, 4))),
        "MaxPool1D": (MaxPool1D(2, 2), np.arange(24.0).reshape(2, 3, 4) * 0.1 + rng.uniform(0, 0.01, (2, 3, 4))),
    }
    return {name: max(check_module_gradients(layer, x, rng, h).values()) for name, (layer, x) in cases.items()}


def tensor_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """``||a - n|| / max(||a||, ||n||, floor)`` over a whole tensor."""
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), floor)
    return float(np.linalg.norm(analytic - numeric)) / scale


def composed_gradient_check(params: dict, grads: dict, loss, signature, h: float = 1e-4) -> tuple[float, int]:
    """Max per-tensor relative error and the count of elements skipped at kinks.

    Elements whose +-h perturbation flips a ReLU or max-pool branch are
    excluded; the derivative does not exist there in the classical sense.
    """
    worst, skipped = 0.0, 0
    for k, p in params.items():
        numeric, valid = numerical_gradient_smooth(loss, p, signature, h)
        skipped += int((~valid).sum())
        if valid.any():
            worst = max(worst, tensor_relative_error(grads[k][valid], numeric[valid]))
    return worst, skipped


def mclnet_gradient_check(seed: int = 0, h: float = 1e-4, batch: int = 3) -> tuple[float, int]:
    """Composed MCLNet check on random windows, all parameters including log-inertia."""
    rng = np.random.default_rng(seed)
    net = MCLNet(rng)
    angles = rng.uniform(-30, 30, (batch, WINDOW_LENGTH, 2))
    acc = rng.normal(0, 200, (batch, WINDOW_LENGTH, 2))
    net.set_input_stats(angles, acc)
    net.log_inertia[...] = 0.3
    r = rng.standard_normal((batch, 4))
    net.forward(angles, acc, train=True)
    net.backward(r)
    grads = {k: g.copy() for k, g in net.gradients().items()}

    def loss():
        return float(np.sum(net.forward(angles, acc, train=True) * r))

    def signature():
        return branch_signature(net.passive_torque_net, net.torque_to_mcl_net)

    return composed_gradient_check(net.parameters(), grads, loss, signature, h)


def trajnet_gradient_check(seed: int = 0, h: float = 1e-4, batch: int = 6) -> tuple[float, int]:
    rng = np.random.default_rng(seed)
    model = TrajectoryNet(rng)
    x = rng.standard_normal((batch, 4))
    out = model.net.forward(x, train=True)
    r = rng.standard_normal(out.shape)
    model.net.backward(r)
    grads = {k: g.copy() for k, g in model.net.gradients().items()}

    def loss():
        return float(np.sum(model.net.forward(x, train=True) * r))

    return composed_gradient_check(model.net.parameters(), grads, loss, lambda: branch_signature(model.net), h)


def all_gradient_errors(seed: int = 0) -> dict[str, float]:
    errors = layer_gradient_errors(seed)
    errors["MCLNet"] = mclnet_gradient_check(seed)[0]
    errors["TrajectoryNet"] = trajnet_gradient_check(seed)[0]
    return errors
