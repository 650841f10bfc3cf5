"""Run configuration read from a flat ``key = value`` text file.

Blank lines and ``#`` comments are ignored; unknown keys and unparsable
values raise ConfigError.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .emg import PipelineConfig
from .errors import ConfigError, MissingFileError
from .mclnet import TrainConfig
from .oracle import OracleConfig, calibrate, default_oracle


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    pilot_participants: int = 8
    eval_participants: int = 6
    stride: int = 4
    normalizer: str = "range"
    mcl_epochs: int = 20
    mcl_lr: float = 1e-3
    mcl_lr_drop_epoch: int = 10
    mcl_batch_size: int = 64
    mcl_weight_decay: float = 5e-4
    traj_epochs: int = 25
    traj_lr: float = 1e-3
    traj_lr_drop_epoch: int = 15
    traj_batch_size: int = 64
    traj_weight_decay: float = 1e-5
    emg_low_hz: float = 20.0
    emg_high_hz: float = 450.0
    emg_filter_order: int = 4
    emg_detrend_window_s: float = 1.0
    emg_envelope_window_s: float = 0.1
    scan_total_deg: float = 900.0
    scan_steps: int = 30
    scan_min_step_deg: float = 5.0
    scan_max_step_deg: float = 50.0
    oracle_accel_unit: float = 400.0
    oracle_sigma_jitter: float = 0.1
    oracle_velocity_jitter: float = 0.03
    oracle_emd_s: float = 0.05

    def __post_init__(self):
        if self.normalizer not in ("range", "mean"):
            raise ConfigError(f"normalizer must be 'range' or 'mean', got {self.normalizer!r}")
        if not 1 <= self.stride <= 4:
            raise ConfigError(f"stride must be in 1..4, got {self.stride}")
        positive = ("pilot_participants", "eval_participants", "mcl_epochs", "mcl_batch_size", "traj_epochs",
                    "traj_batch_size", "mcl_lr", "traj_lr", "scan_steps", "scan_total_deg", "oracle_accel_unit")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")

    def mcl_train(self) -> TrainConfig:
        return TrainConfig(self.mcl_epochs, self.mcl_lr, self.mcl_lr_drop_epoch, self.mcl_batch_size,
                           self.mcl_weight_decay, self.seed)

    def traj_train(self) -> TrainConfig:
        return TrainConfig(self.traj_epochs, self.traj_lr, self.traj_lr_drop_epoch, self.traj_batch_size,
                           self.traj_weight_decay, self.seed)

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(self.emg_low_hz, self.emg_high_hz, self.emg_filter_order,
                              self.emg_detrend_window_s, self.emg_envelope_window_s)

    def partition(self) -> dict:
        return {"total": self.scan_total_deg, "steps": self.scan_steps,
                "min_step": self.scan_min_step_deg, "max_step": self.scan_max_step_deg}

    def oracle(self) -> OracleConfig:
        base = OracleConfig()
        wanted = replace(base, accel_unit=self.oracle_accel_unit, sigma_jitter=self.oracle_sigma_jitter,
                         velocity_jitter=self.oracle_velocity_jitter, emd_s=self.oracle_emd_s)
        return default_oracle() if wanted == base else calibrate(cfg=wanted)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, text: str):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text.strip("\"'")
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from exc


def parse_config(text: str) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, value)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"no such config file: {path}")
    return parse_config(path.read_text())


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(RunConfig))
