"""Command-line entry point.

Every failure ends with one JSON line on stderr (``{"error": code, ...}``)
and an exit status specific to the error class.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig, load_config
from .emg import process
from .errors import InvalidInputError, NeckMclError
from .kinematics import HeadPose, in_study_field
from .mclnet import estimate_sequence, stationary_mcl_map
from .metrics import evaluate_model, evaluate_trajectories, nmae, nrmse, pearson, spearman
from .oracle import PILOT_PITCH, PILOT_YAW, gen_dataset
from .pipeline import train_mcl_model, train_trajectory_model
from .trajectory import forecast_movements, movement_duration

log = logging.getLogger("neckmcl")

EXIT_CODES = {
    "error": 1,
    "missing_file": 3,
    "csv_format": 4,
    "config": 5,
    "invalid_input": 6,
    "shape": 7,
    "degenerate_channel": 8,
    "degenerate_session": 9,
    "degenerate_range": 10,
    "degenerate_variance": 11,
    "state": 12,
    "calibration": 13,
    "io": 14,
}


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    seed = getattr(args, "seed", None)
    if seed is not None and seed != cfg.seed:
        cfg = replace(cfg, seed=seed)
    return cfg


def cmd_synth_gen(args, cfg: RunConfig):
    oracle = cfg.oracle()
    participants = args.participants
    if participants is None:
        participants = cfg.pilot_participants if args.protocol == "pilot" else cfg.eval_participants
    ds = gen_dataset(oracle, args.protocol, cfg.seed, participants, with_emg=args.emg)
    io.write_dataset(args.out, ds, with_emg=args.emg)
    print(f"wrote {len(ds.sessions)} {args.protocol} sessions to {args.out}")


def cmd_emg_process(args, cfg: RunConfig):
    record = io.read_emg(args.input)
    io.write_mcl(args.out, process(record, config=cfg.pipeline()))
    print(f"wrote {args.out}")


def _history_paths(out) -> tuple[Path, Path]:
    out = Path(out)
    stem = out.with_suffix("")
    return stem.with_name(stem.name + "_history.csv"), stem.with_name(stem.name + "_history.png")


def cmd_train(args, cfg: RunConfig):
    from .plotting import plot_history

    ds = io.read_dataset(args.data)
    if args.model == "mclnet":
        net, history = train_mcl_model(ds.sessions, cfg.mcl_train(), cfg.stride)
        io.save_mclnet(args.out, net)
    else:
        net, history = train_trajectory_model(ds.sessions, cfg.traj_train())
        io.save_trajnet(args.out, net)
    csv_path, png_path = _history_paths(args.out)
    with open(csv_path, "w") as f:
        f.write("epoch,loss\n")
        for k, loss in enumerate(history, 1):
            f.write(f"{k},{loss:.12g}\n")
    plot_history(history, png_path, f"{args.model} training loss")
    print(f"trained {args.model} on {len(ds.sessions)} sessions; final loss {history[-1]:.6g}; wrote {args.out}")


def cmd_estimate(args, cfg: RunConfig):
    net = io.load_mclnet(args.ckpt)
    traj = io.read_trajectory(args.trajectory)
    seq = estimate_sequence(net, traj, args.stride or cfg.stride)
    io.write_mcl(args.out, seq)
    print(f"wrote {len(seq)} samples to {args.out} ({int(seq.flagged.sum())} boundary samples filled)")


def cmd_predict(args, cfg: RunConfig):
    mcl_net = io.load_mclnet(args.ckpt_mcl)
    traj_net = io.load_trajnet(args.ckpt_traj)
    start = HeadPose.parse(args.start).as_array()
    end = HeadPose.parse(args.end).as_array()
    for name, pose in (("start", start), ("end", end)):
        if not in_study_field(pose):
            log.warning("%s pose %s lies outside the study field; the forecast extrapolates", name, pose.tolist())
    hc, traj, pair, _ = forecast_movements(traj_net, mcl_net, start, end, cfg.stride)[0]
    print(f"h_c: {hc:.6f}")
    print(f"t_e_s: {movement_duration(pair, end - start):.6f}")
    for axis, p in zip(("pitch", "yaw"), pair):
        print(f"{axis}: amplitude_dps={p.amplitude:.6f} center_s={p.center:.6f} width_s={p.width:.6f}")
    if args.profile_out:
        io.write_profile(args.profile_out, pair)
    if args.trajectory_out:
        io.write_trajectory(args.trajectory_out, traj)


def _load_pair(args):
    return io.load_mclnet(args.ckpt_mcl), io.load_trajnet(args.ckpt_traj)


def cmd_scanpath_gen(args, cfg: RunConfig):
    from .scanpath import generate_conditions

    mcl_net, traj_net = _load_pair(args)
    paths = generate_conditions(cfg.seed, traj_net, mcl_net, (args.condition,), cfg.partition())
    sp = paths[args.condition]
    io.write_scanpath(args.out, sp)
    if args.figure:
        from .plotting import plot_scanpaths
        plot_scanpaths(paths, args.figure)
    print(f"{args.condition}: total rotation {sp.total_rotation:.6f} deg, summed H_c {sp.total_hc:.6f}")


def cmd_scanpath_study(args, cfg: RunConfig):
    from .plotting import plot_scanpaths
    from .scanpath import coverage_report, partition_seed, study

    mcl_net, traj_net = _load_pair(args)
    out = Path(args.out)
    entries = []
    for i, paths in study(cfg.seed, traj_net, mcl_net, args.partitions, cfg.partition()):
        for cond, sp in paths.items():
            name = f"partition{i}_{cond}.csv"
            io.write_scanpath(out / name, sp)
            entries.append({"partition": i, "partition_seed": partition_seed(cfg.seed, i), "condition": cond,
                            "file": name, "total_rotation_deg": round(sp.total_rotation, 9),
                            "summed_hc": round(sp.total_hc, 9), "coverage": round(coverage_report(sp.poses), 9),
                            "radius_reduced": sp.adjusted})
        plot_scanpaths(paths, out / f"partition{i}.png")
    io.write_json(out / "manifest.json", {"seed": cfg.seed, "partitions": args.partitions, "sessions": entries})
    totals = {c: sum(e["summed_hc"] for e in entries if e["condition"] == c) for c in ("max", "rnd", "min")}
    print(f"wrote {len(entries)} scan paths to {out}; summed H_c " +
          ", ".join(f"{c.upper()} {v:.3f}" for c, v in totals.items()))


def cmd_evaluate(args, cfg: RunConfig):
    from . import plotting

    ds = io.read_dataset(args.data)
    mcl_net = io.load_mclnet(args.ckpt_mcl)
    traj_net = io.load_trajnet(args.ckpt_traj) if args.ckpt_traj else None
    if args.mode == "prehoc" and traj_net is None:
        raise InvalidInputError("pre-hoc evaluation needs --ckpt-traj")
    out = Path(args.out)
    report = evaluate_model(mcl_net, ds, args.mode, traj_net, cfg.normalizer, cfg.stride)
    text = report.to_text()
    rows = report.plot_rows()
    plotting.plot_anchor_errors(report, out / "anchor_errors.png")
    plotting.plot_scatter(report, out / "scatter.png")
    plotting.plot_examples(report, out / "examples.png")
    if traj_net is not None:
        traj_report = evaluate_trajectories(traj_net, ds)
        text += traj_report.to_text()
        rows += traj_report.plot_rows()
        plotting.plot_velocity_errors(traj_report, out / "velocity_errors.png")
    pitch, yaw = np.array(PILOT_PITCH), np.array(PILOT_YAW)
    grid = np.array([[p, y] for p in pitch for y in yaw])
    values = stationary_mcl_map(mcl_net, grid).reshape(len(pitch), len(yaw))
    plotting.plot_stationary_map(pitch, yaw, values, out / "stationary_map.png", "model stationary MCL")
    (out / "report.txt").write_text(text)
    io.write_plot_rows(out / "metrics.csv", rows)
    sys.stdout.write(text)


def cmd_selftest(args, cfg: RunConfig):
    from .gradcheck import TOLERANCE, all_gradient_errors

    checks = []
    for name, err in all_gradient_errors().items():
        checks.append((f"gradient {name}", err < TOLERANCE, f"max relative error {err:.2e}"))
    metric_cases = [
        ("nrmse identical", nrmse([1, 2, 3], [1, 2, 3]), 0.0),
        ("nrmse swapped", nrmse([1, 0], [0, 1]), 100.0),
        ("nrmse offset", nrmse([0.1, 1.1, 2.1], [0, 1, 2]), 5.0),
        ("nmae half", nmae([0.5, 0.5], [0, 1]), 50.0),
        ("pearson linear", pearson(np.arange(5.0), 2 * np.arange(5.0) + 1), 1.0),
        ("spearman cubic", spearman(np.arange(-2.0, 3.0), np.arange(-2.0, 3.0) ** 3), 1.0),
        ("spearman ties", spearman([1, 2, 2, 3], [1, 2, 2, 3]), 1.0),
    ]
    for name, got, want in metric_cases:
        checks.append((f"metric {name}", abs(got - want) <= 1e-9, f"{got:.12g} (expected {want:g})"))
    failed = 0
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += not ok
    if failed:
        raise NeckMclError(f"{failed} selftest check(s) failed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neckmcl", description="Neck muscle contraction modeling for head movements.")
    parser.add_argument("--config", help="flat key = value run configuration file")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="synthetic oracle datasets").add_subparsers(dest="action", required=True)
    p = synth.add_parser("gen", help="generate a protocol's sessions")
    p.add_argument("--protocol", choices=("pilot", "eval"), required=True, help="anchor set: 63 pilot or 16 eval")
    p.add_argument("--seed", type=int, help="master seed (default from config)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--participants", type=int, help="repetitions of the protocol (default from config)")
    p.add_argument("--emg", action="store_true", help="also synthesize and write raw 2000 Hz EMG per session")
    p.set_defaults(func=cmd_synth_gen)

    emg = sub.add_parser("emg", help="EMG processing").add_subparsers(dest="action", required=True)
    p = emg.add_parser("process", help="raw 4-channel EMG CSV to a 20 Hz MCL CSV")
    p.add_argument("--in", dest="input", required=True, help="raw EMG CSV (t_s,l_scm_mv,r_scm_mv,l_sc_mv,r_sc_mv)")
    p.add_argument("--out", required=True, help="output MCL CSV (t_s,mcl)")
    p.set_defaults(func=cmd_emg_process)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("model", choices=("mclnet", "trajnet"), help="which network to train")
    p.add_argument("--data", required=True, help="dataset directory written by 'synth gen'")
    p.add_argument("--out", required=True, help="checkpoint path (JSON)")
    p.add_argument("--seed", type=int, help="training seed (default from config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("estimate", help="post-hoc MCL of a recorded trajectory")
    p.add_argument("--ckpt", required=True, help="MCLNet checkpoint")
    p.add_argument("--trajectory", required=True, help="trajectory CSV (t_s,pitch_deg,yaw_deg)")
    p.add_argument("--out", required=True, help="output MCL CSV")
    p.add_argument("--stride", type=int, help="window stride in samples, 1..4 (default from config)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("predict", help="pre-hoc cumulative MCL of a movement from its start and end poses")
    p.add_argument("--ckpt-mcl", required=True, help="MCLNet checkpoint")
    p.add_argument("--ckpt-traj", required=True, help="TrajectoryNet checkpoint")
    p.add_argument("--start", required=True, help="start pose 'pitch,yaw' in degrees")
    p.add_argument("--end", required=True, help="end pose 'pitch,yaw' in degrees")
    p.add_argument("--profile-out", help="optional profile CSV (axis,amplitude_dps,center_s,width_s)")
    p.add_argument("--trajectory-out", help="optional synthesized trajectory CSV")
    p.set_defaults(func=cmd_predict)

    scan = sub.add_parser("scanpath", help="discomfort-ordered scan paths").add_subparsers(dest="action", required=True)
    p = scan.add_parser("gen", help="one condition's scan path")
    p.add_argument("--condition", choices=("max", "rnd", "min"), required=True,
                   help="maximize, ignore or minimize forecast discomfort")
    p.add_argument("--seed", type=int, help="partition seed (default from config)")
    p.add_argument("--ckpt-mcl", required=True, help="MCLNet checkpoint")
    p.add_argument("--ckpt-traj", required=True, help="TrajectoryNet checkpoint")
    p.add_argument("--out", required=True, help="scan path CSV")
    p.add_argument("--figure", help="optional PNG of the path")
    p.set_defaults(func=cmd_scanpath_gen)
    p = scan.add_parser("study", help="all conditions over several partitions, with a manifest")
    p.add_argument("--seed", type=int, help="master seed (default from config)")
    p.add_argument("--ckpt-mcl", required=True, help="MCLNet checkpoint")
    p.add_argument("--ckpt-traj", required=True, help="TrajectoryNet checkpoint")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--partitions", type=int, default=6, help="number of rotation partitions (default 6)")
    p.set_defaults(func=cmd_scanpath_study)

    p = sub.add_parser("evaluate", help="score models against a dataset's ground truth")
    p.add_argument("--mode", choices=("posthoc", "prehoc"), required=True,
                   help="posthoc reads measured trajectories; prehoc rebuilds them from start and end poses")
    p.add_argument("--data", required=True, help="eval dataset directory")
    p.add_argument("--ckpt-mcl", required=True, help="MCLNet checkpoint")
    p.add_argument("--ckpt-traj", help="TrajectoryNet checkpoint (required for prehoc)")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("selftest", help="gradient checks and metric unit examples")
    p.set_defaults(func=cmd_selftest)
    return parser


def _fail(code: str, message: str) -> int:
    status = EXIT_CODES.get(code, 1)
    sys.stderr.write(json.dumps({"error": code, "exit_code": status, "message": message}, sort_keys=True) + "\n")
    return status


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _run_config(args)
        if getattr(args, "stride", None) is not None and not 1 <= args.stride <= 4:
            raise InvalidInputError(f"stride must be in 1..4, got {args.stride}")
        args.func(args, cfg)
    except NeckMclError as exc:
        return _fail(exc.code, str(exc))
    except OSError as exc:
        return _fail("io", str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
