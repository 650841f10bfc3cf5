"""CSV files, JSON checkpoints and on-disk synthetic datasets.

Every writer formats numbers with fixed printf codes and JSON with sorted
keys, so identical inputs always produce byte-identical files.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .emg import CHANNELS, RawEmgRecord
from .errors import CsvFormatError, InvalidInputError, MissingFileError, ShapeError
from .kinematics import MclSequence, TimedTrajectory
from .mclnet import MCLNet
from .oracle import PROTOCOLS, OracleConfig, Session, SyntheticDataset
from .trajectory import GaussianProfile, TrajectoryNet

FORMAT_VERSION = 1

TRAJECTORY_HEADER = ("t_s", "pitch_deg", "yaw_deg")
EMG_HEADER = ("t_s",) + tuple(f"{c}_mv" for c in CHANNELS)
MCL_HEADER = ("t_s", "mcl")
PROFILE_HEADER = ("axis", "amplitude_dps", "center_s", "width_s")
SCANPATH_HEADER = ("step", "pitch_deg", "yaw_deg", "step_rotation_deg", "hc")
SEGMENT_HEADER = ("session", "participant", "start_pitch_deg", "start_yaw_deg", "end_pitch_deg",
                  "end_yaw_deg", "onset_s", "offset_s", "trajectory_file", "mcl_file")
PLOT_HEADER = ("anchor", "metric", "value")

TIME_FMT = "%.12f"
VALUE_FMT = "%.12g"


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"no such file: {path}")
    return path


def _write_table(path, header, columns, fmts):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack(columns)
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        np.savetxt(f, data, fmt=fmts, delimiter=",")


def _read_table(path, header) -> np.ndarray:
    path = _require(path)
    with open(path) as f:
        first = f.readline().strip()
        got = tuple(h.strip() for h in first.split(","))
        if got != tuple(header):
            raise CsvFormatError(f"{path}: expected header {','.join(header)!r}, got {first!r}")
        try:
            with warnings.catch_warnings():
                # an empty body is reported below as a format error
                warnings.simplefilter("ignore", UserWarning)
                data = np.loadtxt(f, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise CsvFormatError(f"{path}: {exc}") from exc
    if data.shape[0] == 0:
        raise CsvFormatError(f"{path}: no data rows")
    if data.shape[1] != len(header):
        raise CsvFormatError(f"{path}: expected {len(header)} columns, got {data.shape[1]}")
    if not np.all(np.isfinite(data)):
        raise CsvFormatError(f"{path}: non-finite values")
    return data


def _sample_rate(path, t: np.ndarray) -> float:
    if t.size < 2:
        raise CsvFormatError(f"{path}: need at least 2 samples to infer the sample rate")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise CsvFormatError(f"{path}: time column is not strictly increasing")
    step = (t[-1] - t[0]) / (t.size - 1)
    if np.max(np.abs(dt - step)) > 1e-6 * max(step, 1e-9) + 1e-8:
        raise CsvFormatError(f"{path}: samples are not uniformly spaced")
    return float(np.round(1.0 / step, 6))


def write_trajectory(path, traj: TimedTrajectory):
    _write_table(path, TRAJECTORY_HEADER, [traj.times, traj.pitch, traj.yaw], [TIME_FMT, VALUE_FMT, VALUE_FMT])


def read_trajectory(path) -> TimedTrajectory:
    data = _read_table(path, TRAJECTORY_HEADER)
    return TimedTrajectory(_sample_rate(path, data[:, 0]), data[:, 1:])


def write_mcl(path, seq: MclSequence):
    _write_table(path, MCL_HEADER, [seq.times, seq.values], [TIME_FMT, VALUE_FMT])


def read_mcl(path) -> MclSequence:
    data = _read_table(path, MCL_HEADER)
    return MclSequence(_sample_rate(path, data[:, 0]), data[:, 1])


def write_emg(path, record: RawEmgRecord):
    t = np.arange(len(record)) / record.sample_rate
    _write_table(path, EMG_HEADER, [t, *record.channels], [TIME_FMT] + [VALUE_FMT] * len(CHANNELS))


def read_emg(path) -> RawEmgRecord:
    data = _read_table(path, EMG_HEADER)
    return RawEmgRecord(_sample_rate(path, data[:, 0]), data[:, 1:].T)


def write_profile(path, pair):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(",".join(PROFILE_HEADER) + "\n")
        for axis, p in zip(("pitch", "yaw"), pair):
            f.write(f"{axis},{p.amplitude:.12g},{p.center:.12g},{p.width:.12g}\n")


def read_profile(path) -> tuple[GaussianProfile, GaussianProfile]:
    path = _require(path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != PROFILE_HEADER:
        raise CsvFormatError(f"{path}: expected header {','.join(PROFILE_HEADER)!r}")
    table = {r[0]: r[1:] for r in rows[1:]}
    try:
        return tuple(GaussianProfile(*(float(v) for v in table[axis])) for axis in ("pitch", "yaw"))
    except (KeyError, ValueError, TypeError) as exc:
        raise CsvFormatError(f"{path}: malformed profile rows") from exc


def write_scanpath(path, sp):
    n = len(sp.poses)
    steps = np.concatenate([[0.0], sp.steps])
    hc = np.concatenate([[0.0], sp.hc])
    _write_table(path, SCANPATH_HEADER, [np.arange(n), sp.poses[:, 0], sp.poses[:, 1], steps, hc],
                 ["%d", VALUE_FMT, VALUE_FMT, VALUE_FMT, VALUE_FMT])


def read_scanpath(path) -> np.ndarray:
    """Rows of (step, pitch, yaw, step rotation, H_c); row 0 is the start pose."""
    return _read_table(path, SCANPATH_HEADER)


def write_plot_rows(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(",".join(PLOT_HEADER) + "\n")
        for anchor, metric, value in rows:
            f.write(f"{anchor},{metric},{value:.10g}\n")


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=1)
        f.write("\n")


def read_json(path) -> dict:
    path = _require(path)
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: not valid JSON ({exc})") from exc


def _encode(arrays: dict[str, np.ndarray]) -> dict:
    return {k: {"shape": list(np.shape(v)), "values": np.asarray(v, dtype=float).ravel().tolist()}
            for k, v in arrays.items()}


def _decode(section: dict) -> dict[str, np.ndarray]:
    out = {}
    for k, entry in section.items():
        values = np.asarray(entry["values"], dtype=float)
        shape = tuple(entry["shape"])
        if values.size != int(np.prod(shape)):
            raise ShapeError(f"checkpoint entry {k}: {values.size} values for shape {shape}")
        out[k] = values.reshape(shape)
    return out


def _check_checkpoint(doc: dict, model: str, path):
    if doc.get("format_version") != FORMAT_VERSION:
        raise InvalidInputError(f"{path}: unsupported checkpoint format {doc.get('format_version')!r}")
    if doc.get("model") != model:
        raise InvalidInputError(f"{path}: expected a {model} checkpoint, got {doc.get('model')!r}")


def save_mclnet(path, net: MCLNet):
    write_json(path, {
        "format_version": FORMAT_VERSION,
        "model": "mclnet",
        "hidden": net.hidden,
        "kernel": net.kernel,
        "passive_torque_net": _encode(net.passive_torque_net.state()),
        "torque_to_mcl_net": _encode(net.torque_to_mcl_net.state()),
        "log_inertia": _encode({"value": net.log_inertia})["value"],
        "input_stats": _encode(net.input_stats or {}),
    })


def load_mclnet(path) -> MCLNet:
    doc = read_json(path)
    _check_checkpoint(doc, "mclnet", path)
    try:
        net = MCLNet(hidden=int(doc["hidden"]), kernel=int(doc["kernel"]))
        net.passive_torque_net.load_state(_decode(doc["passive_torque_net"]))
        net.torque_to_mcl_net.load_state(_decode(doc["torque_to_mcl_net"]))
        net.log_inertia = _decode({"v": doc["log_inertia"]})["v"].reshape(())
        stats = _decode(doc["input_stats"])
    except KeyError as exc:
        raise InvalidInputError(f"{path}: checkpoint section {exc} missing") from exc
    net.input_stats = stats or None
    return net


def save_trajnet(path, net: TrajectoryNet):
    write_json(path, {
        "format_version": FORMAT_VERSION,
        "model": "trajnet",
        "hidden": net.hidden,
        "net": _encode(net.net.state()),
        "input_stats": _encode(net.input_stats or {}),
    })


def load_trajnet(path) -> TrajectoryNet:
    doc = read_json(path)
    _check_checkpoint(doc, "trajnet", path)
    try:
        net = TrajectoryNet(hidden=int(doc["hidden"]))
        net.net.load_state(_decode(doc["net"]))
        stats = _decode(doc["input_stats"])
    except KeyError as exc:
        raise InvalidInputError(f"{path}: checkpoint section {exc} missing") from exc
    net.input_stats = stats or None
    return net


def _config_from_dict(d: dict) -> OracleConfig:
    kwargs = {}
    for f in fields(OracleConfig):
        if f.name in d:
            v = d[f.name]
            kwargs[f.name] = tuple(v) if isinstance(v, list) else v
    return OracleConfig(**kwargs)


def write_dataset(directory, ds: SyntheticDataset, with_emg: bool = False):
    """Session CSVs, a segments table and a manifest with seeds and the oracle hash."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    sessions, segments = [], []
    for s in ds.sessions:
        stem = f"sessions/{s.index:05d}"
        entry = {
            "index": s.index,
            "participant": s.participant,
            "seed": [ds.seed, PROTOCOLS[ds.protocol], s.index],
            "anchor": list(s.anchor),
            "target": list(s.target),
            "onset_s": s.onset_s,
            "offset_s": s.offset_s,
            "trajectory": f"{stem}_traj.csv",
            "mcl": f"{stem}_mcl.csv",
        }
        write_trajectory(root / entry["trajectory"], s.trajectory)
        write_mcl(root / entry["mcl"], s.mcl)
        if with_emg:
            if s.emg is None:
                raise InvalidInputError(f"session {s.index} has no EMG to write")
            entry["emg"] = f"{stem}_emg.csv"
            write_emg(root / entry["emg"], s.emg)
        sessions.append(entry)
        segments.append((s.index, s.participant, *s.anchor, *s.target, s.onset_s, s.offset_s,
                         entry["trajectory"], entry["mcl"]))
    with open(root / "segments.csv", "w", newline="") as f:
        f.write(",".join(SEGMENT_HEADER) + "\n")
        for row in segments:
            f.write("{},{},{:g},{:g},{:g},{:g},{:.9f},{:.9f},{},{}\n".format(*row))
    write_json(root / "manifest.json", {
        "format_version": FORMAT_VERSION,
        "protocol": ds.protocol,
        "split": ds.split,
        "seed": ds.seed,
        "rng": "PCG64, SeedSequence([seed, protocol_id, session_index])",
        "config": asdict(ds.config),
        "config_hash": ds.config.digest(),
        "sessions": sessions,
    })


def read_dataset(directory, with_emg: bool = False) -> SyntheticDataset:
    root = Path(directory)
    manifest = read_json(root / "manifest.json")
    try:
        cfg = _config_from_dict(manifest["config"])
        ds = SyntheticDataset(manifest["protocol"], int(manifest["seed"]), cfg)
        for e in manifest["sessions"]:
            emg = read_emg(root / e["emg"]) if with_emg and "emg" in e else None
            ds.sessions.append(Session(
                index=int(e["index"]), participant=int(e["participant"]),
                anchor=tuple(float(v) for v in e["anchor"]), target=tuple(float(v) for v in e["target"]),
                trajectory=read_trajectory(root / e["trajectory"]), mcl=read_mcl(root / e["mcl"]),
                onset_s=float(e["onset_s"]), offset_s=float(e["offset_s"]), emg=emg))
    except KeyError as exc:
        raise InvalidInputError(f"{root / 'manifest.json'}: missing field {exc}") from exc
    return ds
