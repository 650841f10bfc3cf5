"""Scan paths with a fixed rotation budget, greedily ordered by forecast discomfort.

Each path starts at (0, 0) and takes 30 steps whose magnitudes partition
900 degrees. At every step the next target is chosen on the circle of that
magnitude around the current pose, scoring candidates by visual-field
coverage plus (MAX), ignoring (RND) or minus (MIN) their forecast
cumulative MCL.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, StateError
from .kinematics import PITCH_RANGE, YAW_RANGE, HeadPose, in_study_field
from .trajectory import forecast_movements

CONDITIONS = ("max", "rnd", "min")
TOTAL_ROTATION = 900.0
STEPS = 30
MIN_STEP = 5.0
# keeps the pure-yaw candidate inside the 100 degree wide field from any pose
MAX_STEP = 50.0
CANDIDATE_SPACING = 10.0
CELL = 10.0
GRID_SHAPE = (int((PITCH_RANGE[1] - PITCH_RANGE[0]) / CELL), int((YAW_RANGE[1] - YAW_RANGE[0]) / CELL))
STUDY_PARTITIONS = 6


def partition_rotation(rng: np.random.Generator, total: float = TOTAL_ROTATION, steps: int = STEPS,
                       min_step: float = MIN_STEP, max_step: float = MAX_STEP) -> np.ndarray:
    """Random step magnitudes in [min_step, max_step] summing to ``total``.

    Draws U[0.5, 1.5] weights, scales them to the budget, then clamps and
    redistributes the excess over the unclamped steps until every bound
    holds. The last step absorbs floating-point residue so the sum is exact.
    """
    if not min_step * steps <= total <= max_step * steps:
        raise InvalidInputError(f"cannot split {total:g} deg into {steps} steps within [{min_step:g}, {max_step:g}]")
    x = rng.uniform(0.5, 1.5, steps)
    x *= total / x.sum()
    for _ in range(100):
        clipped = np.clip(x, min_step, max_step)
        free = (clipped > min_step) & (clipped < max_step)
        excess = total - clipped.sum()
        if abs(excess) < 1e-12 * total or not free.any():
            x = clipped
            break
        clipped[free] += excess * clipped[free] / clipped[free].sum()
        x = clipped
    x[-1] = total - math.fsum(x[:-1])
    return x


def candidate_poses(current, magnitude: float, spacing: float = CANDIDATE_SPACING):
    """In-field poses on the circle of radius ``magnitude`` around ``current``.

    Candidate ``k`` sits at angle ``k * spacing`` degrees, measured from the
    positive yaw axis towards positive pitch. If none is in the field the
    radius is halved until some are. Returns (poses (k, 2), candidate
    indices, radius used, whether the radius was reduced).
    """
    if not magnitude > 0:
        raise InvalidInputError(f"step magnitude must be positive, got {magnitude}")
    c = current.as_array() if isinstance(current, HeadPose) else np.asarray(current, dtype=float)
    theta = np.radians(np.arange(0.0, 360.0, spacing))
    radius = float(magnitude)
    reduced = False
    while True:
        poses = c + radius * np.column_stack([np.sin(theta), np.cos(theta)])
        keep = np.array([in_study_field(p) for p in poses])
        if keep.any():
            idx = np.flatnonzero(keep)
            return poses[idx], idx, radius, reduced
        radius *= 0.5
        reduced = True


def cell_of(pose) -> tuple[int, int]:
    row = int(np.clip(math.floor((pose[0] - PITCH_RANGE[0]) / CELL), 0, GRID_SHAPE[0] - 1))
    col = int(np.clip(math.floor((pose[1] - YAW_RANGE[0]) / CELL), 0, GRID_SHAPE[1] - 1))
    return row, col


def segment_cells(a, b) -> set[tuple[int, int]]:
    """Grid cells touched by the straight segment from ``a`` to ``b``.

    The segment is split where it crosses cell boundaries; the cell of each
    piece's midpoint, plus both endpoints, is reported.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    cuts = [0.0, 1.0]
    for axis, lo in ((0, PITCH_RANGE[0]), (1, YAW_RANGE[0])):
        if d[axis] == 0:
            continue
        lines = lo + CELL * np.arange(1, GRID_SHAPE[axis])
        s = (lines - a[axis]) / d[axis]
        cuts.extend(s[(s > 0) & (s < 1)])
    cuts = np.unique(cuts)
    mids = 0.5 * (cuts[1:] + cuts[:-1])
    cells = {cell_of(a), cell_of(b)}
    cells.update(cell_of(a + m * d) for m in mids)
    return cells


@dataclass
class CoverageGrid:
    visited: np.ndarray = field(default_factory=lambda: np.zeros(GRID_SHAPE, dtype=bool))

    def visit_pose(self, pose):
        self.visited[cell_of(pose)] = True

    def visit_segment(self, a, b):
        for cell in segment_cells(a, b):
            self.visited[cell] = True

    def count_with(self, a, b) -> int:
        """Visited-cell count if the segment a -> b were added."""
        new = {c for c in segment_cells(a, b) if not self.visited[c]}
        return int(self.visited.sum()) + len(new)

    @property
    def fraction(self) -> float:
        return float(self.visited.mean())


@dataclass(frozen=True)
class ScanPath:
    condition: str
    poses: np.ndarray
    steps: np.ndarray
    hc: np.ndarray
    adjusted: bool = False

    @property
    def total_rotation(self) -> float:
        return math.fsum(self.steps)

    @property
    def total_hc(self) -> float:
        return float(np.sum(self.hc))


def coverage_report(poses) -> float:
    """Fraction of the 60 field cells touched by the path, segments included."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    grid = CoverageGrid()
    grid.visit_pose(poses[0])
    for a, b in zip(poses[:-1], poses[1:]):
        grid.visit_segment(a, b)
    return grid.fraction


def _check_models(traj_net, mcl_net):
    if not getattr(traj_net, "trained", False) or not getattr(mcl_net, "trained", False):
        raise StateError("scan-path generation needs trained TrajectoryNet and MCLNet")


def generate(condition: str, partition, traj_net, mcl_net, rng: np.random.Generator,
             start=(0.0, 0.0)) -> ScanPath:
    """Greedy scan path for one condition over a shared rotation partition."""
    condition = condition.lower()
    if condition not in CONDITIONS:
        raise InvalidInputError(f"unknown condition {condition!r}; expected one of {CONDITIONS}")
    _check_models(traj_net, mcl_net)
    current = np.asarray(start, dtype=float)
    grid = CoverageGrid()
    grid.visit_pose(current)
    poses, steps, hcs = [current], [], []
    adjusted = False
    for magnitude in np.asarray(partition, dtype=float):
        cands, _, radius, reduced = candidate_poses(current, magnitude)
        adjusted |= reduced
        cover = np.array([grid.count_with(current, c) for c in cands], dtype=float)
        if condition == "rnd":
            best = np.flatnonzero(cover == cover.max())
            k = int(best[rng.integers(len(best))]) if len(best) > 1 else int(best[0])
            hc = forecast_movements(traj_net, mcl_net, current, cands[k])[0][0]
        else:
            forecasts = forecast_movements(traj_net, mcl_net, np.repeat(current[None], len(cands), 0), cands)
            h = np.array([f[0] for f in forecasts])
            mean = h.mean()
            rel = h / mean if mean > 0 else np.zeros_like(h)
            score = cover + rel if condition == "max" else cover - rel
            k = int(np.argmax(score))
            hc = h[k]
        grid.visit_segment(current, cands[k])
        current = cands[k]
        poses.append(current)
        steps.append(radius)
        hcs.append(hc)
    return ScanPath(condition, np.array(poses), np.array(steps), np.array(hcs), adjusted)


def generate_conditions(seed: int, traj_net, mcl_net, conditions=CONDITIONS,
                        partition: dict | None = None) -> dict[str, ScanPath]:
    """All conditions over one partition drawn from ``seed``.

    The partition and the RND tie-breaking draw from separate child streams
    of ``SeedSequence(seed)``.
    """
    part_ss, tie_ss = np.random.SeedSequence(seed).spawn(2)
    steps = partition_rotation(np.random.default_rng(part_ss), **(partition or {}))
    tie_rng = np.random.default_rng(tie_ss)
    return {c: generate(c, steps, traj_net, mcl_net, tie_rng) for c in conditions}


def partition_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def study(seed: int, traj_net, mcl_net, partitions: int = STUDY_PARTITIONS,
          partition: dict | None = None) -> list[tuple[int, dict[str, ScanPath]]]:
    """Condition sets over several partitions; partition ``i`` draws from ``partition_seed(seed, i)``."""
    return [(i, generate_conditions(partition_seed(seed, i), traj_net, mcl_net, partition=partition))
            for i in range(partitions)]
