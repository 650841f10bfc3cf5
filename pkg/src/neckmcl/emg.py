"""Four-channel surface EMG to a single normalized contraction level.

Pipeline: detrend, zero-phase bandpass, rectification with a moving-RMS
envelope, left/right balancing and summation, then per-user min/max
normalization with block averaging down to 20 Hz.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal
from scipy.ndimage import uniform_filter1d

from .errors import DegenerateChannelError, DegenerateSessionError, InvalidInputError
from .kinematics import MODEL_RATE, MclSequence

EMG_RATE = 2000.0
CHANNELS = ("l_scm", "r_scm", "l_sc", "r_sc")
# (left, right) channel index pairs that are balanced against each other
PAIRS = ((0, 1), (2, 3))


@dataclass(frozen=True)
class PipelineConfig:
    low_hz: float = 20.0
    high_hz: float = 450.0
    filter_order: int = 4
    detrend_window_s: float = 1.0
    envelope_window_s: float = 0.1
    output_rate: float = MODEL_RATE


@dataclass(frozen=True)
class RawEmgRecord:
    """Electric potentials in mV, shape (4, n), rows ordered as ``CHANNELS``."""

    sample_rate: float
    channels: np.ndarray

    def __post_init__(self):
        c = np.array(self.channels, dtype=float)
        if c.ndim != 2 or c.shape[0] != len(CHANNELS):
            raise InvalidInputError(f"EMG record needs {len(CHANNELS)} equal-length channels, got shape {c.shape}")
        if c.shape[1] == 0:
            raise InvalidInputError("EMG record is empty")
        if not np.all(np.isfinite(c)):
            raise InvalidInputError("EMG record contains non-finite samples")
        c.setflags(write=False)
        object.__setattr__(self, "channels", c)

    def __len__(self) -> int:
        return self.channels.shape[1]

    @property
    def duration(self) -> float:
        return (len(self) - 1) / self.sample_rate


def _check_channel(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise InvalidInputError("channel must be a non-empty 1D array")
    return x


def detrend(x, sample_rate: float = EMG_RATE, window_s: float = 1.0) -> np.ndarray:
    """Subtract a centered moving mean, then any remaining offset."""
    x = _check_channel(x)
    size = max(1, min(int(round(window_s * sample_rate)), x.size))
    out = x - uniform_filter1d(x, size, mode="reflect")
    return out - out.mean()


def bandpass_sos(low: float, high: float, sample_rate: float = EMG_RATE, order: int = 4) -> np.ndarray:
    """Butterworth bandpass of total order ``order`` as second-order sections."""
    if not 0 < low < high < sample_rate / 2:
        raise InvalidInputError(f"need 0 < low < high < {sample_rate / 2:g} Hz, got low={low}, high={high}")
    if order < 2 or order % 2:
        raise InvalidInputError(f"bandpass order must be even and >= 2, got {order}")
    return signal.butter(order // 2, [low, high], btype="bandpass", fs=sample_rate, output="sos")


def bandpass(x, low: float = 20.0, high: float = 450.0, sample_rate: float = EMG_RATE, order: int = 4) -> np.ndarray:
    """Zero-phase (forward-backward) bandpass."""
    sos = bandpass_sos(low, high, sample_rate, order)
    x = _check_channel(x)
    return signal.sosfiltfilt(sos, x)


def rectify_envelope(x, sample_rate: float = EMG_RATE, window_s: float = 0.1) -> np.ndarray:
    """Absolute value followed by a centered moving RMS."""
    x = np.abs(_check_channel(x))
    size = max(1, min(int(round(window_s * sample_rate)), x.size))
    return np.sqrt(np.maximum(uniform_filter1d(x * x, size, mode="nearest"), 0.0))


def balance_and_integrate(channels) -> np.ndarray:
    """Rescale each right channel to its left partner's session mean, then sum all four."""
    c = np.array(channels, dtype=float)
    if c.ndim != 2 or c.shape[0] != len(CHANNELS):
        raise InvalidInputError(f"expected {len(CHANNELS)} processed channels, got shape {c.shape}")
    means = c.mean(axis=1)
    for k, m in enumerate(means):
        if not m > 0:
            raise DegenerateChannelError(f"channel {CHANNELS[k]} has session mean {m:g}")
    for left, right in PAIRS:
        c[right] *= means[left] / means[right]
    return c.sum(axis=0)


def block_average(x, sample_rate: float, target_rate: float) -> np.ndarray:
    """Average blocks of ``sample_rate / target_rate`` samples centered on the output times.

    Output sample ``k`` sits at ``k / target_rate`` and averages the input
    samples within half a block of it, so no lag is introduced; blocks at the
    two ends are truncated to the available samples.
    """
    x = _check_channel(x)
    block = int(round(sample_rate / target_rate))
    if block < 1 or not np.isclose(block, sample_rate / target_rate):
        raise InvalidInputError(f"{sample_rate:g} Hz is not an integer multiple of {target_rate:g} Hz")
    centers = np.arange(0, x.size, block)
    lo = np.maximum(centers - block // 2, 0)
    hi = np.minimum(centers + block - block // 2, x.size)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    return (csum[hi] - csum[lo]) / (hi - lo)


def user_stats(signals) -> tuple[float, float]:
    """Min and max over every integrated 20 Hz signal of one user."""
    values = np.concatenate([np.asarray(s, dtype=float).ravel() for s in signals])
    return float(values.min()), float(values.max())


def normalize_user(x, stats: tuple[float, float], sample_rate: float = MODEL_RATE,
                   target_rate: float = MODEL_RATE) -> MclSequence:
    """Block-average to ``target_rate`` then map [min, max] linearly onto [0, 1] with clipping."""
    lo, hi = stats
    if not hi > lo:
        raise DegenerateSessionError(f"session max {hi:g} does not exceed min {lo:g}")
    x = _check_channel(x)
    if sample_rate != target_rate:
        x = block_average(x, sample_rate, target_rate)
    return MclSequence(target_rate, np.clip((x - lo) / (hi - lo), 0.0, 1.0))


def integrated_activity(record: RawEmgRecord, config: PipelineConfig = PipelineConfig()) -> np.ndarray:
    """Balanced, summed envelope block-averaged to the output rate (before normalization)."""
    if np.all(record.channels == record.channels[:, :1]):
        raise DegenerateSessionError("every EMG channel is constant")
    fs = record.sample_rate
    processed = []
    for ch in record.channels:
        x = detrend(ch, fs, config.detrend_window_s)
        x = bandpass(x, config.low_hz, config.high_hz, fs, config.filter_order)
        processed.append(rectify_envelope(x, fs, config.envelope_window_s))
    total = balance_and_integrate(processed)
    return block_average(total, fs, config.output_rate)


def process(record: RawEmgRecord, stats: tuple[float, float] | None = None,
            config: PipelineConfig = PipelineConfig()) -> MclSequence:
    """Raw record to normalized MCL at 20 Hz.

    Without ``stats`` the record is treated as the user's whole session and
    normalized by its own min and max.
    """
    activity = integrated_activity(record, config)
    if stats is None:
        stats = (float(activity.min()), float(activity.max()))
    return normalize_user(activity, stats, config.output_rate, config.output_rate)
