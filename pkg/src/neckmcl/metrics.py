"""Error and correlation metrics plus per-anchor evaluation reports.

NRMSE and NMAE are percentages of the measured signal's range by default
(``normalizer="mean"`` divides by its mean instead).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateRangeError, DegenerateVarianceError, InvalidInputError
from .kinematics import differentiate
from .mclnet import estimate_sequences
from .pipeline import movement_velocity, offset_index, onset_index, prehoc_trajectory
from .trajectory import fit_profile_pair, predict_profile

MODES = ("posthoc", "prehoc")


def _pair(predicted, measured, min_len: int = 2):
    p = np.asarray(predicted, dtype=float).ravel()
    m = np.asarray(measured, dtype=float).ravel()
    if p.shape != m.shape:
        raise InvalidInputError(f"length mismatch: {p.size} predicted vs {m.size} measured")
    if p.size < min_len:
        raise InvalidInputError(f"need at least {min_len} samples, got {p.size}")
    return p, m


def _normalizer(m: np.ndarray, normalizer: str) -> float:
    if normalizer == "range":
        scale = float(m.max() - m.min())
    elif normalizer == "mean":
        scale = float(abs(m.mean()))
    else:
        raise InvalidInputError(f"unknown normalizer {normalizer!r}; expected 'range' or 'mean'")
    if not scale > 0:
        raise DegenerateRangeError(f"measured {normalizer} is zero")
    return scale


def nrmse(predicted, measured, normalizer: str = "range") -> float:
    p, m = _pair(predicted, measured)
    return 100.0 * float(np.sqrt(np.mean((p - m) ** 2))) / _normalizer(m, normalizer)


def nmae(predicted, measured, normalizer: str = "range") -> float:
    p, m = _pair(predicted, measured)
    return 100.0 * float(np.mean(np.abs(p - m))) / _normalizer(m, normalizer)


def pearson(x, y) -> float:
    x, y = _pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt(dx @ dx))
    sy = float(np.sqrt(dy @ dy))
    if sx == 0 or sy == 0:
        raise DegenerateVarianceError("correlation of a constant sequence is undefined")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def spearman(x, y) -> float:
    """Pearson correlation of average ranks (ties share their mean rank)."""
    x, y = _pair(x, y)
    return pearson(rankdata(x, method="average"), rankdata(y, method="average"))


def _safe(fn, *args) -> float:
    try:
        return fn(*args)
    except (DegenerateRangeError, DegenerateVarianceError):
        return float("nan")


@dataclass(frozen=True)
class AnchorMetrics:
    anchor: tuple[float, float]
    count: int
    nrmse: float
    nmae: float
    pearson: float
    spearman: float


def anchor_label(anchor) -> str:
    return f"{anchor[0]:g}_{anchor[1]:g}"


@dataclass
class EvaluationReport:
    mode: str
    rows: list[AnchorMetrics]
    pooled_pearson: float
    pooled_spearman: float
    normalizer: str = "range"
    # per anchor: (measured, predicted) of its first session, for plotting
    examples: dict = field(default_factory=dict, repr=False)
    measured: np.ndarray = field(default=None, repr=False)
    predicted: np.ndarray = field(default=None, repr=False)

    def _stat(self, name: str) -> tuple[float, float]:
        v = np.array([getattr(r, name) for r in self.rows], dtype=float)
        v = v[np.isfinite(v)]
        if v.size == 0:
            return float("nan"), float("nan")
        return float(v.mean()), float(v.std())

    @property
    def nrmse(self) -> tuple[float, float]:
        return self._stat("nrmse")

    @property
    def nmae(self) -> tuple[float, float]:
        return self._stat("nmae")

    @property
    def pearson(self) -> tuple[float, float]:
        return self._stat("pearson")

    @property
    def spearman(self) -> tuple[float, float]:
        return self._stat("spearman")

    def plot_rows(self) -> list[tuple[str, str, float]]:
        rows = []
        for r in self.rows:
            label = anchor_label(r.anchor)
            for name in ("nrmse", "nmae", "pearson", "spearman"):
                rows.append((label, name, getattr(r, name)))
        rows.append(("all", "pooled_pearson", self.pooled_pearson))
        rows.append(("all", "pooled_spearman", self.pooled_spearman))
        return rows

    def to_text(self) -> str:
        lines = [f"mode: {self.mode}", f"normalizer: {self.normalizer}", f"anchors: {len(self.rows)}",
                 f"samples: {sum(r.count for r in self.rows)}"]
        for name in ("nrmse", "nmae", "pearson", "spearman"):
            mean, std = getattr(self, name)
            unit = " %" if name in ("nrmse", "nmae") else ""
            lines.append(f"{name}: {mean:.4f} +- {std:.4f}{unit}")
        lines.append(f"pooled_pearson: {self.pooled_pearson:.4f}")
        lines.append(f"pooled_spearman: {self.pooled_spearman:.4f}")
        return "\n".join(lines) + "\n"


def _check_split(dataset, allow_train: bool):
    split = getattr(dataset, "split", None)
    if split != "eval" and not allow_train:
        raise InvalidInputError(f"evaluation needs the eval split, got {split!r}")


def report_from_sequences(mode: str, sessions, predictions, normalizer: str = "range") -> EvaluationReport:
    """Per-anchor metrics over the sessions' concatenated samples, plus pooled correlations."""
    groups: dict[tuple[float, float], list[int]] = {}
    for k, s in enumerate(sessions):
        groups.setdefault(tuple(s.anchor), []).append(k)
    rows, examples, all_m, all_p = [], {}, [], []
    for anchor in sorted(groups):
        idx = groups[anchor]
        m = np.concatenate([sessions[k].mcl.values for k in idx])
        p = np.concatenate([predictions[k] for k in idx])
        rows.append(AnchorMetrics(anchor, m.size, _safe(nrmse, p, m, normalizer), _safe(nmae, p, m, normalizer),
                                  _safe(pearson, p, m), _safe(spearman, p, m)))
        examples[anchor] = (sessions[idx[0]].mcl.values, np.asarray(predictions[idx[0]]))
        all_m.append(m)
        all_p.append(p)
    m = np.concatenate(all_m)
    p = np.concatenate(all_p)
    return EvaluationReport(mode, rows, _safe(pearson, p, m), _safe(spearman, p, m), normalizer, examples, m, p)


def evaluate_model(mcl_net, dataset, mode: str = "posthoc", traj_net=None, normalizer: str = "range",
                   stride: int = 4, allow_train: bool = False) -> EvaluationReport:
    """Estimate every session's MCL and score it against ground truth per anchor.

    Post-hoc mode reads the measured trajectory; pre-hoc mode rebuilds it
    from the start and end poses with ``traj_net`` (stationary before the
    recorded onset and after the synthesized movement).
    """
    if mode not in MODES:
        raise InvalidInputError(f"unknown mode {mode!r}; expected one of {MODES}")
    _check_split(dataset, allow_train)
    sessions = dataset.sessions
    if mode == "posthoc":
        trajs = [s.trajectory_20hz() for s in sessions]
    else:
        if traj_net is None:
            raise InvalidInputError("pre-hoc evaluation needs a trajectory model")
        trajs = [prehoc_trajectory(traj_net, s) for s in sessions]
    estimates = estimate_sequences(mcl_net, trajs, stride)
    return report_from_sequences(mode, sessions, [e.values for e in estimates], normalizer)


@dataclass
class TrajectoryReport:
    """Velocity-curve NRMSE (%) per moving axis and profile-parameter relative errors."""

    velocity_nrmse: dict[str, list[float]]
    param_error: dict[str, list[float]]

    def mean(self, table: str, key: str) -> float:
        v = getattr(self, table)[key]
        return float(np.mean(v)) if v else float("nan")

    def plot_rows(self) -> list[tuple[str, str, float]]:
        rows = [("all", f"velocity_nrmse_{k}", self.mean("velocity_nrmse", k)) for k in self.velocity_nrmse]
        rows += [("all", f"param_error_{k}", self.mean("param_error", k)) for k in self.param_error]
        return rows

    def to_text(self) -> str:
        lines = []
        for k, v in self.velocity_nrmse.items():
            lines.append(f"velocity_nrmse_{k}: {np.mean(v):.4f} +- {np.std(v):.4f} % over {len(v)} movements")
        for k, v in self.param_error.items():
            lines.append(f"param_error_{k}: {np.mean(v):.4f}")
        return "\n".join(lines) + "\n"


AXES = ("pitch", "yaw")


def evaluate_trajectories(traj_net, dataset, allow_train: bool = False) -> TrajectoryReport:
    """Compare predicted movements with measured ones over each movement segment.

    Velocities of both come from the same finite-difference operator on
    20 Hz trajectories; the predicted one is aligned at the recorded onset.
    Parameter errors are relative to the Gaussian fit of the measured curve.
    """
    _check_split(dataset, allow_train)
    vel = {a: [] for a in AXES}
    perr = {f"{n}_{a}": [] for a in AXES for n in ("amplitude", "center", "width")}
    for s in dataset.sessions:
        measured = differentiate(s.trajectory_20hz()).velocity
        predicted = differentiate(prehoc_trajectory(traj_net, s)).velocity
        seg = slice(onset_index(s), offset_index(s) + 1)
        fitted = None
        for axis, name in enumerate(AXES):
            if s.anchor[axis] == s.target[axis]:
                continue
            vel[name].append(nrmse(predicted[seg, axis], measured[seg, axis]))
            if fitted is None:
                fitted = fit_profile_pair(movement_velocity(s))
                pred_pair = predict_profile(traj_net, s.anchor, s.target)
            ref = fitted[axis].profile
            got = pred_pair[axis]
            perr[f"amplitude_{name}"].append(abs(abs(got.amplitude) - abs(ref.amplitude)) / abs(ref.amplitude))
            perr[f"center_{name}"].append(abs(got.center - ref.center) / ref.center)
            perr[f"width_{name}"].append(abs(got.width - ref.width) / ref.width)
    return TrajectoryReport(vel, perr)
