"""Small differentiable layer stack with exact backward passes and Adam.

Tensors are float64 numpy arrays laid out as (batch, channel) or
(batch, channel, time). Every layer caches what its backward pass needs
during a training-mode forward; calling ``backward`` without that cache
raises :class:`StateError`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import ShapeError, StateError

DTYPE = np.float64


class Layer:
    """Base layer. Subclasses fill ``params`` and ``grads`` with matching keys."""

    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        out, cache = self._forward(x, train)
        self._cache = cache if train else None
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called without a training-mode forward")
        return self._backward(grad, self._cache)

    def _forward(self, x, train):
        raise NotImplementedError

    def _backward(self, grad, cache):
        raise NotImplementedError

    def zero_grad(self):
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)


def _check_ndim(x: np.ndarray, allowed: Iterable[int], name: str):
    if x.ndim not in allowed:
        raise ShapeError(f"{name} expects ndim in {tuple(allowed)}, got shape {x.shape}")


class FullyConnected(Layer):
    """Affine map over the channel axis; (N, in) or per time step on (N, in, T)."""

    kind = "fc"

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        bound = np.sqrt(1.0 / n_in)
        self.params["weight"] = rng.uniform(-bound, bound, (n_out, n_in)).astype(DTYPE)
        self.params["bias"] = rng.uniform(-bound, bound, n_out).astype(DTYPE)
        self.zero_grad()

    def _forward(self, x, train):
        _check_ndim(x, (2, 3), "FullyConnected")
        w, b = self.params["weight"], self.params["bias"]
        if x.shape[1] != w.shape[1]:
            raise ShapeError(f"FullyConnected expects {w.shape[1]} input channels, got {x.shape[1]}")
        if x.ndim == 2:
            out = x @ w.T + b
        else:
            out = np.einsum("oi,nit->not", w, x) + b[None, :, None]
        return out, x

    def _backward(self, grad, x):
        w = self.params["weight"]
        if x.ndim == 2:
            self.grads["weight"] = grad.T @ x
            self.grads["bias"] = grad.sum(axis=0)
            return grad @ w
        self.grads["weight"] = np.einsum("not,nit->oi", grad, x)
        self.grads["bias"] = grad.sum(axis=(0, 2))
        return np.einsum("oi,not->nit", w, grad)


class Conv1D(Layer):
    """1D convolution with same-length zero padding (odd kernel)."""

    kind = "conv1d"

    def __init__(self, n_in: int, n_out: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        if kernel % 2 != 1:
            raise ShapeError("Conv1D needs an odd kernel for same-length padding")
        self.kernel = kernel
        bound = np.sqrt(1.0 / (n_in * kernel))
        self.params["weight"] = rng.uniform(-bound, bound, (n_out, n_in, kernel)).astype(DTYPE)
        self.params["bias"] = rng.uniform(-bound, bound, n_out).astype(DTYPE)
        self.zero_grad()

    def _columns(self, x):
        n, c, t = x.shape
        pad = self.kernel // 2
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
        # cols[n, t, c, j] = xp[n, c, t + j]
        cols = np.stack([xp[:, :, j:j + t] for j in range(self.kernel)], axis=-1)
        return cols.transpose(0, 2, 1, 3).reshape(n, t, c * self.kernel)

    def _forward(self, x, train):
        _check_ndim(x, (3,), "Conv1D")
        w, b = self.params["weight"], self.params["bias"]
        if x.shape[1] != w.shape[1]:
            raise ShapeError(f"Conv1D expects {w.shape[1]} input channels, got {x.shape[1]}")
        cols = self._columns(x)
        wf = w.reshape(w.shape[0], -1)
        out = (cols @ wf.T).transpose(0, 2, 1) + b[None, :, None]
        return out, (x.shape, cols)

    def _backward(self, grad, cache):
        shape, cols = cache
        n, c, t = shape
        w = self.params["weight"]
        gt = grad.transpose(0, 2, 1)  # (N, T, Cout)
        self.grads["weight"] = np.tensordot(gt, cols, axes=([0, 1], [0, 1])).reshape(w.shape)
        self.grads["bias"] = grad.sum(axis=(0, 2))
        dcols = (gt @ w.reshape(w.shape[0], -1)).reshape(n, t, c, self.kernel)
        pad = self.kernel // 2
        dxp = np.zeros((n, c, t + 2 * pad), dtype=DTYPE)
        for j in range(self.kernel):
            dxp[:, :, j:j + t] += dcols[:, :, :, j].transpose(0, 2, 1)
        return dxp[:, :, pad:pad + t]


class BatchNorm1D(Layer):
    """Per-channel normalization over batch (and time) axes.

    Training mode normalizes with batch statistics and updates the running
    estimates (unbiased variance); eval mode is the fixed affine map given by
    the running estimates.
    """

    kind = "batchnorm1d"

    def __init__(self, n_channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.params["gain"] = np.ones(n_channels, dtype=DTYPE)
        self.params["shift"] = np.zeros(n_channels, dtype=DTYPE)
        self.buffers["running_mean"] = np.zeros(n_channels, dtype=DTYPE)
        self.buffers["running_var"] = np.ones(n_channels, dtype=DTYPE)
        self.zero_grad()

    @staticmethod
    def _axes(x):
        return (0,) if x.ndim == 2 else (0, 2)

    @staticmethod
    def _bcast(v, x):
        return v if x.ndim == 2 else v[:, None]

    def _forward(self, x, train):
        _check_ndim(x, (2, 3), "BatchNorm1D")
        gain, shift = self.params["gain"], self.params["shift"]
        if x.shape[1] != gain.shape[0]:
            raise ShapeError(f"BatchNorm1D expects {gain.shape[0]} channels, got {x.shape[1]}")
        axes = self._axes(x)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = x.size // x.shape[1]
            unbiased = var * m / (m - 1) if m > 1 else var
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm *= 1.0 - self.momentum
            rm += self.momentum * mean
            rv *= 1.0 - self.momentum
            rv += self.momentum * unbiased
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bcast(mean, x)) * self._bcast(inv_std, x)
        out = xhat * self._bcast(gain, x) + self._bcast(shift, x)
        return out, (xhat, inv_std, axes)

    def _backward(self, grad, cache):
        xhat, inv_std, axes = cache
        gain = self.params["gain"]
        self.grads["gain"] = (grad * xhat).sum(axis=axes)
        self.grads["shift"] = grad.sum(axis=axes)
        m = grad.size // grad.shape[1]
        dxhat = grad * self._bcast(gain, grad)
        s1 = self._bcast(dxhat.sum(axis=axes), grad)
        s2 = self._bcast((dxhat * xhat).sum(axis=axes), grad)
        if grad.ndim == 3:
            s1, s2 = s1[None], s2[None]
        return self._bcast(inv_std, grad) / m * (m * dxhat - s1 - xhat * s2)


class ReLU(Layer):
    kind = "relu"

    def _forward(self, x, train):
        mask = x > 0
        return x * mask, mask

    def _backward(self, grad, mask):
        return grad * mask


class Softplus(Layer):
    kind = "softplus"

    def _forward(self, x, train):
        return np.logaddexp(0.0, x), x

    def _backward(self, grad, x):
        return grad * sigmoid(x)


class MaxPool1D(Layer):
    """Non-overlapping max pooling over time, kernel 2 stride 2."""

    kind = "maxpool1d"

    def __init__(self, kernel: int = 2, stride: int = 2):
        super().__init__()
        if kernel != stride:
            raise ShapeError("only non-overlapping pooling (kernel == stride) is supported")
        self.kernel = kernel

    def _forward(self, x, train):
        _check_ndim(x, (3,), "MaxPool1D")
        n, c, t = x.shape
        k = self.kernel
        t_out = t // k
        if t_out == 0:
            raise ShapeError(f"MaxPool1D needs at least {k} time steps, got {t}")
        blocks = x[:, :, :t_out * k].reshape(n, c, t_out, k)
        arg = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        return out, (x.shape, arg)

    def _backward(self, grad, cache):
        shape, arg = cache
        n, c, t = shape
        k = self.kernel
        t_out = grad.shape[-1]
        blocks = np.zeros((n, c, t_out, k), dtype=DTYPE)
        np.put_along_axis(blocks, arg[..., None], grad[..., None], axis=-1)
        dx = np.zeros(shape, dtype=DTYPE)
        dx[:, :, :t_out * k] = blocks.reshape(n, c, t_out * k)
        return dx


def sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    y = np.asarray(y, dtype=DTYPE)
    return y + np.log(-np.expm1(-y))


class Sequential:
    """Ordered layers whose parameters are addressed as ``"<index>.<key>"``."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def forward(self, x, train: bool = False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    __call__ = forward

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": p for i, layer in enumerate(self.layers) for k, p in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": g for i, layer in enumerate(self.layers) for k, g in layer.grads.items()}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": b for i, layer in enumerate(self.layers) for k, b in layer.buffers.items()}

    def state(self) -> dict[str, np.ndarray]:
        """Parameters and buffers, everything a checkpoint must hold."""
        return {**self.parameters(), **self.buffers()}

    def load_state(self, state: dict[str, np.ndarray]):
        mine = self.state()
        missing = set(mine) - set(state)
        extra = set(state) - set(mine)
        if missing or extra:
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, arr in mine.items():
            new = np.asarray(state[k], dtype=DTYPE)
            if new.shape != arr.shape:
                raise ShapeError(f"{k}: expected shape {arr.shape}, got {new.shape}")
            arr[...] = new

    def no_decay_keys(self) -> set[str]:
        """Names of BatchNorm parameters, which are excluded from weight decay."""
        return {f"{i}.{k}" for i, layer in enumerate(self.layers)
                if isinstance(layer, BatchNorm1D) for k in layer.params}


def l2_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient ``2 (pred - target) / N``."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              lr: float, weight_decay: float = 0.0, decay_keys: set[str] | None = None):
    """One bias-corrected Adam update, applied to ``params`` in place.

    Weight decay is decoupled (``p -= lr * weight_decay * p``) and touches only
    the names in ``decay_keys`` (all parameters when None).
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name in sorted(params):
        p, g = params[name], grads[name]
        if p.shape != g.shape:
            raise ShapeError(f"{name}: parameter shape {p.shape} != gradient shape {g.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay and (decay_keys is None or name in decay_keys):
            p -= lr * weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def lr_schedule(epoch: int, base_lr: float, drop_epoch: int, factor: float = 0.1) -> float:
    return base_lr * (factor if epoch >= drop_epoch else 1.0)


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` with respect to ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def branch_signature(*modules) -> bytes:
    """Active ReLU units and max-pool winners from each module's last training-mode forward."""
    parts = []
    for m in modules:
        layers = m.layers if isinstance(m, Sequential) else [m]
        for layer in layers:
            if isinstance(layer, ReLU) and layer._cache is not None:
                parts.append(np.packbits(layer._cache).tobytes())
            elif isinstance(layer, MaxPool1D) and layer._cache is not None:
                parts.append(layer._cache[1].astype(np.int8).tobytes())
    return b"".join(parts)


def numerical_gradient_smooth(f: Callable[[], float], x: np.ndarray, signature: Callable[[], bytes],
                              h: float = 1e-4) -> tuple[np.ndarray, np.ndarray]:
    """Central differences that also report which elements straddle a kink.

    An element is marked invalid when the branch ``signature()`` at x + h or
    x - h differs from the one at x, i.e. the perturbation crossed a ReLU or
    max-pool switch and the difference quotient is not a derivative.
    """
    f()
    base = signature()
    grad = np.zeros_like(x)
    valid = np.ones(x.shape, dtype=bool)
    flat, gflat, vflat = x.reshape(-1), grad.reshape(-1), valid.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        sp = signature()
        flat[i] = old - h
        fm = f()
        sm = signature()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
        vflat[i] = sp == base and sm == base
    return grad, valid


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps gradients that are zero by construction (e.g. a bias
    followed by BatchNorm) from turning rounding noise into huge ratios.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_module_gradients(module, x: np.ndarray, rng: np.random.Generator, h: float = 1e-4) -> dict[str, float]:
    """Finite-difference check of a Layer or Sequential on input ``x``.

    Uses the scalar loss ``sum(out * r)`` with fixed random ``r``. Returns the
    max relative error per parameter name plus ``"input"``.
    """
    x = np.array(x, dtype=DTYPE)
    out = module.forward(x, train=True)
    r = rng.standard_normal(out.shape)
    if isinstance(module, Layer):
        module.zero_grad()
    dx = module.backward(r)
    if isinstance(module, Sequential):
        params, grads = module.parameters(), {k: g.copy() for k, g in module.gradients().items()}
    else:
        params, grads = module.params, {k: g.copy() for k, g in module.grads.items()}

    def loss():
        return float(np.sum(module.forward(x, train=True) * r))

    errors = {"input": relative_error(dx, numerical_gradient(loss, x, h))}
    for name, p in params.items():
        errors[name] = relative_error(grads[name], numerical_gradient(loss, p, h))
    return errors
