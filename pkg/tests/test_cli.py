import argparse
import json
import shutil
import subprocess

import numpy as np
import pytest

from neckmcl import io
from neckmcl.cli import EXIT_CODES, build_parser, main
from neckmcl.metrics import pearson
from neckmcl.mclnet import MCLNet
from neckmcl.oracle import gen_session, session_rng

TINY_CONFIG = "pilot_participants = 1\neval_participants = 1\nmcl_epochs = 2\ntraj_epochs = 3\n"


@pytest.fixture(scope="module")
def work(tmp_path_factory, mcl_net, traj_net):
    root = tmp_path_factory.mktemp("cli")
    io.save_mclnet(root / "mcl.json", mcl_net)
    io.save_trajnet(root / "traj.json", traj_net)
    (root / "tiny.cfg").write_text(TINY_CONFIG)
    assert main(["synth", "gen", "--protocol", "eval", "--seed", "11", "--participants", "1",
                 "--out", str(root / "eval")]) == 0
    return root


def run(capsys, *argv):
    status = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return status, out, err


def error_of(err):
    return json.loads(err.strip().splitlines()[-1])


class TestHelp:
    def test_every_flag_documented(self):
        def walk(parser):
            for action in parser._actions:
                if isinstance(action, argparse._SubParsersAction):
                    for sub in action.choices.values():
                        yield from walk(sub)
                elif action.option_strings and action.dest != "help":
                    yield parser.prog, action

        undocumented = [(prog, a.option_strings) for prog, a in walk(build_parser()) if not a.help]
        assert undocumented == []

    def test_console_script(self):
        exe = shutil.which("neckmcl")
        assert exe is not None
        result = subprocess.run([exe, "--help"], capture_output=True, text=True, check=True)
        for command in ("synth", "emg", "train", "estimate", "predict", "scanpath", "evaluate", "selftest"):
            assert command in result.stdout

    def test_subcommand_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["predict", "--help"])
        assert exc.value.code == 0
        assert "--ckpt-traj" in capsys.readouterr().out


class TestPredict:
    def test_static_movement(self, capsys, work):
        status, out, _ = run(capsys, "predict", "--ckpt-mcl", work / "mcl.json", "--ckpt-traj", work / "traj.json",
                             "--start", "0,0", "--end", "0,0")
        assert status == 0
        lines = dict(line.split(": ", 1) for line in out.splitlines())
        assert float(lines["h_c"]) == 0.0
        assert float(lines["t_e_s"]) == 0.0

    def test_outputs(self, capsys, work, tmp_path):
        status, out, _ = run(capsys, "predict", "--ckpt-mcl", work / "mcl.json", "--ckpt-traj", work / "traj.json",
                             "--start", "0,0", "--end", "20,-30", "--profile-out", tmp_path / "p.csv",
                             "--trajectory-out", tmp_path / "t.csv")
        assert status == 0
        assert float(out.splitlines()[0].split(": ")[1]) > 0
        pair = io.read_profile(tmp_path / "p.csv")
        assert pair[0].amplitude > 0 > pair[1].amplitude
        traj = io.read_trajectory(tmp_path / "t.csv")
        np.testing.assert_allclose(traj.angles[-1], [20.0, -30.0], atol=1e-6)

    def test_out_of_field_warns(self, capsys, caplog, work):
        status, _, _ = run(capsys, "predict", "--ckpt-mcl", work / "mcl.json", "--ckpt-traj", work / "traj.json",
                           "--start", "0,0", "--end", "0,70")
        assert status == 0
        assert "outside the study field" in caplog.text

    def test_bad_pose(self, capsys, work):
        status, _, err = run(capsys, "predict", "--ckpt-mcl", work / "mcl.json", "--ckpt-traj", work / "traj.json",
                             "--start", "0", "--end", "0,0")
        assert status == EXIT_CODES["invalid_input"]
        assert error_of(err)["error"] == "invalid_input"


class TestScanpath:
    def test_three_conditions_same_rotation(self, capsys, work, tmp_path):
        totals = {}
        for cond in ("max", "rnd", "min"):
            status, _, _ = run(capsys, "scanpath", "gen", "--condition", cond, "--seed", 5, "--ckpt-mcl",
                               work / "mcl.json", "--ckpt-traj", work / "traj.json", "--out", tmp_path / f"{cond}.csv")
            assert status == 0
            rows = io.read_scanpath(tmp_path / f"{cond}.csv")
            assert rows.shape == (31, 5)
            totals[cond] = rows[:, 3].sum()
        assert totals["max"] == totals["rnd"] == totals["min"]
        assert totals["max"] == pytest.approx(900.0, abs=1e-9)

    def test_figure(self, capsys, work, tmp_path):
        status, _, _ = run(capsys, "scanpath", "gen", "--condition", "min", "--ckpt-mcl", work / "mcl.json",
                           "--ckpt-traj", work / "traj.json", "--out", tmp_path / "s.csv", "--figure", tmp_path / "s.png")
        assert status == 0
        assert (tmp_path / "s.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_study(self, capsys, work, tmp_path):
        status, _, _ = run(capsys, "scanpath", "study", "--seed", 2, "--partitions", 2, "--ckpt-mcl",
                           work / "mcl.json", "--ckpt-traj", work / "traj.json", "--out", tmp_path / "study")
        assert status == 0
        manifest = json.loads((tmp_path / "study" / "manifest.json").read_text())
        assert len(manifest["sessions"]) == 6
        for entry in manifest["sessions"]:
            assert (tmp_path / "study" / entry["file"]).exists()
        assert (tmp_path / "study" / "partition1.png").exists()


class TestEvaluate:
    def test_posthoc_report(self, capsys, work, tmp_path):
        status, out, _ = run(capsys, "evaluate", "--mode", "posthoc", "--data", work / "eval",
                             "--ckpt-mcl", work / "mcl.json", "--out", tmp_path / "rep")
        assert status == 0
        nrmse = float(next(line for line in out.splitlines() if line.startswith("nrmse:")).split()[1])
        assert nrmse <= 15.0
        for name in ("report.txt", "metrics.csv", "anchor_errors.png", "scatter.png", "examples.png",
                     "stationary_map.png"):
            assert (tmp_path / "rep" / name).exists(), name
        header = (tmp_path / "rep" / "metrics.csv").read_text().splitlines()[0]
        assert header == "anchor,metric,value"

    def test_prehoc_with_trajectories(self, capsys, work, tmp_path):
        status, out, _ = run(capsys, "evaluate", "--mode", "prehoc", "--data", work / "eval", "--ckpt-mcl",
                             work / "mcl.json", "--ckpt-traj", work / "traj.json", "--out", tmp_path / "rep")
        assert status == 0
        assert "velocity_nrmse_pitch" in out
        assert (tmp_path / "rep" / "velocity_errors.png").exists()

    def test_prehoc_needs_trajectory_model(self, capsys, work, tmp_path):
        status, _, err = run(capsys, "evaluate", "--mode", "prehoc", "--data", work / "eval",
                             "--ckpt-mcl", work / "mcl.json", "--out", tmp_path / "rep")
        assert status == EXIT_CODES["invalid_input"]


class TestOtherCommands:
    def test_estimate(self, capsys, work, tmp_path):
        ds = io.read_dataset(work / "eval")
        io.write_trajectory(tmp_path / "t.csv", ds.sessions[0].trajectory)
        status, _, _ = run(capsys, "estimate", "--ckpt", work / "mcl.json", "--trajectory", tmp_path / "t.csv",
                           "--out", tmp_path / "m.csv", "--stride", 2)
        assert status == 0
        seq = io.read_mcl(tmp_path / "m.csv")
        assert seq.sample_rate == 20.0 and len(seq) == len(ds.sessions[0].mcl)

    def test_emg_process(self, capsys, oracle, tmp_path):
        session = gen_session(oracle, (0.0, 0.0), (35.0, 25.0), session_rng(1, "eval", 0), with_emg=True)
        io.write_emg(tmp_path / "e.csv", session.emg)
        status, _, _ = run(capsys, "emg", "process", "--in", tmp_path / "e.csv", "--out", tmp_path / "m.csv")
        assert status == 0
        seq = io.read_mcl(tmp_path / "m.csv")
        assert pearson(seq.values, session.mcl.values) >= 0.9

    def test_train_writes_history(self, capsys, work, tmp_path):
        status, _, _ = run(capsys, "--config", work / "tiny.cfg", "train", "trajnet", "--data", work / "eval",
                           "--out", tmp_path / "t.json")
        assert status == 0
        assert io.load_trajnet(tmp_path / "t.json").trained
        lines = (tmp_path / "t_history.csv").read_text().splitlines()
        assert lines[0] == "epoch,loss" and len(lines) == 4
        assert (tmp_path / "t_history.png").exists()

    def test_synth_manifest(self, work):
        manifest = json.loads((work / "eval" / "manifest.json").read_text())
        assert manifest["split"] == "eval" and manifest["seed"] == 11
        assert (work / "eval" / "segments.csv").exists()


class TestErrors:
    def test_missing_file(self, capsys, tmp_path):
        status, _, err = run(capsys, "estimate", "--ckpt", tmp_path / "none.json", "--trajectory",
                             tmp_path / "t.csv", "--out", tmp_path / "m.csv")
        assert status == EXIT_CODES["missing_file"] == 3
        assert error_of(err) == {"error": "missing_file", "exit_code": 3,
                                 "message": f"no such file: {tmp_path / 'none.json'}"}

    def test_csv_format(self, capsys, work, tmp_path):
        (tmp_path / "t.csv").write_text("time,pitch,yaw\n0,0,0\n")
        status, _, err = run(capsys, "estimate", "--ckpt", work / "mcl.json", "--trajectory", tmp_path / "t.csv",
                             "--out", tmp_path / "m.csv")
        assert status == EXIT_CODES["csv_format"]
        assert error_of(err)["error"] == "csv_format"

    def test_config(self, capsys, tmp_path):
        (tmp_path / "bad.cfg").write_text("learning_rate = 3\n")
        status, _, err = run(capsys, "--config", tmp_path / "bad.cfg", "selftest")
        assert status == EXIT_CODES["config"]

    def test_stride(self, capsys, work, tmp_path):
        status, _, _ = run(capsys, "estimate", "--ckpt", work / "mcl.json", "--trajectory", tmp_path / "t.csv",
                           "--out", tmp_path / "m.csv", "--stride", 7)
        assert status == EXIT_CODES["invalid_input"]

    def test_untrained_checkpoint(self, capsys, work, tmp_path):
        io.save_mclnet(tmp_path / "blank.json", MCLNet())
        ds = io.read_dataset(work / "eval")
        io.write_trajectory(tmp_path / "t.csv", ds.sessions[0].trajectory)
        status, _, err = run(capsys, "estimate", "--ckpt", tmp_path / "blank.json", "--trajectory",
                             tmp_path / "t.csv", "--out", tmp_path / "m.csv")
        assert status == EXIT_CODES["state"]
        assert error_of(err)["error"] == "state"

    def test_exit_codes_distinct(self):
        assert len(set(EXIT_CODES.values())) == len(EXIT_CODES)
        assert 0 not in EXIT_CODES.values() and 2 not in EXIT_CODES.values()


def test_selftest(capsys):
    status, out, _ = run(capsys, "selftest")
    assert status == 0
    lines = out.splitlines()
    assert lines and all(line.startswith("PASS ") for line in lines)
    assert any("MCLNet" in line for line in lines) and any("spearman ties" in line for line in lines)
