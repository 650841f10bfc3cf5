import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neckmcl.errors import InvalidInputError, StateError
from neckmcl.kinematics import TimedTrajectory
from neckmcl.mclnet import (MCLNet, TrainConfig, estimate_sequence, estimate_sequences, stationary_mcl_map,
                            train_mclnet, window_dataset)
from neckmcl.metrics import nrmse
from neckmcl.oracle import gen_dataset
from neckmcl.pipeline import mcl_training_set, offset_index, onset_index, train_mcl_model

window = st.tuples(st.integers(0, 2**32 - 1), st.floats(0.1, 100.0))


@pytest.fixture(scope="module")
def fresh_net():
    """Untrained net with unit standardization, for graph-level checks."""
    net = MCLNet(np.random.default_rng(7))
    net.set_input_stats(np.zeros((1, 8, 2)), np.zeros((1, 8, 2)))
    return net


def random_windows(seed, scale=1.0, n=5):
    rng = np.random.default_rng(seed)
    return rng.normal(0, 20 * scale, (n, 8, 2)), rng.normal(0, 300 * scale, (n, 8, 2))


def shifted_nrmse(net, dataset, shift):
    """Mean per-anchor NRMSE of estimates against ground truth delayed by ``shift`` samples."""
    est = estimate_sequences(net, [s.trajectory_20hz() for s in dataset.sessions])
    groups = {}
    for s, e in zip(dataset.sessions, est):
        m, p = s.mcl.values, e.values
        if shift > 0:
            m, p = m[shift:], p[:-shift]
        elif shift < 0:
            m, p = m[:shift], p[-shift:]
        pred, meas = groups.setdefault(tuple(s.anchor), ([], []))
        pred.append(p)
        meas.append(m)
    return float(np.mean([nrmse(np.concatenate(p), np.concatenate(m)) for p, m in groups.values()]))


class TestForward:
    def test_output_shape(self, fresh_net):
        angles, acc = random_windows(0)
        assert fresh_net(angles, acc).shape == (5, 4)

    def test_stationary_active_torque_is_negative_passive(self, fresh_net):
        angles = np.repeat(np.array([[[10.0, -20.0]], [[0.0, 0.0]]]), 8, axis=1)
        _, inner = fresh_net(angles, np.zeros_like(angles), internals=True)
        np.testing.assert_array_equal(inner["active_torque"], -inner["passive_torque"])

    @settings(max_examples=25, deadline=None)
    @given(window)
    def test_torque_balance_identity(self, fresh_net, w):
        angles, acc = random_windows(*w)
        _, inner = fresh_net(angles, acc, internals=True)
        expected = inner["inertia"] * inner["accel"] - inner["passive_torque"]
        np.testing.assert_array_equal(inner["active_torque"], expected)

    @settings(max_examples=25, deadline=None)
    @given(window)
    def test_strictly_positive(self, fresh_net, w):
        angles, acc = random_windows(*w)
        assert np.all(fresh_net(angles, acc) > 0)

    def test_inertia_positive(self):
        net = MCLNet()
        net.log_inertia[...] = -50.0
        assert net.inertia > 0

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_non_finite(self, fresh_net, bad):
        angles, acc = random_windows(1)
        angles[0, 3, 1] = bad
        with pytest.raises(InvalidInputError):
            fresh_net(angles, acc)

    def test_wrong_window_length(self, fresh_net):
        with pytest.raises(InvalidInputError):
            fresh_net(np.zeros((2, 7, 2)), np.zeros((2, 7, 2)))

    def test_unstandardized(self):
        with pytest.raises(StateError):
            MCLNet()(np.zeros((1, 8, 2)), np.zeros((1, 8, 2)))

    def test_acceleration_not_centered(self):
        net = MCLNet()
        net.set_input_stats(np.zeros((3, 8, 2)), np.full((3, 8, 2), 50.0))
        np.testing.assert_allclose(net.input_stats["accel_scale"], 50.0)


class TestSequences:
    def test_twenty_samples(self, fresh_net):
        seq = estimate_sequence(fresh_net, TimedTrajectory(20.0, np.zeros((20, 2))))
        assert len(seq) == 20
        assert int((~seq.flagged).sum()) == 16
        np.testing.assert_array_equal(np.flatnonzero(seq.flagged), [0, 1, 18, 19])

    def test_flagged_take_nearest(self, fresh_net):
        t = np.arange(30) / 20.0
        traj = TimedTrajectory(20.0, np.column_stack([20 * np.sin(4 * t), 30 * np.cos(3 * t)]))
        v = estimate_sequence(fresh_net, traj).values
        assert v[0] == v[1] == v[2]
        assert v[-1] == v[-2] == v[-3]

    @pytest.mark.parametrize("n", [21, 23, 37])
    def test_tail_covered(self, fresh_net, n):
        seq = estimate_sequence(fresh_net, TimedTrajectory(20.0, np.zeros((n, 2))))
        np.testing.assert_array_equal(np.flatnonzero(seq.flagged), [0, 1, n - 2, n - 1])

    def test_too_short(self, fresh_net):
        with pytest.raises(InvalidInputError):
            estimate_sequence(fresh_net, TimedTrajectory(20.0, np.zeros((7, 2))))

    def test_bad_stride(self, fresh_net):
        with pytest.raises(InvalidInputError):
            estimate_sequence(fresh_net, TimedTrajectory(20.0, np.zeros((20, 2))), stride=5)

    def test_untrained(self):
        with pytest.raises(StateError):
            estimate_sequence(MCLNet(), TimedTrajectory(20.0, np.zeros((20, 2))))

    def test_resamples_input(self, fresh_net):
        seq = estimate_sequence(fresh_net, TimedTrajectory(90.0, np.zeros((91, 2))))
        assert len(seq) == 21 and seq.sample_rate == 20.0

    def test_batched_matches_single(self, fresh_net, rng):
        trajs = [TimedTrajectory(20.0, rng.normal(0, 10, (n, 2))) for n in (12, 20, 33)]
        for traj, seq in zip(trajs, estimate_sequences(fresh_net, trajs, stride=2)):
            np.testing.assert_allclose(seq.values, estimate_sequence(fresh_net, traj, stride=2).values, rtol=1e-12)


class TestWindowDataset:
    def test_counts_and_alignment(self):
        traj = TimedTrajectory(20.0, np.zeros((20, 2)))
        mcl = np.arange(20.0)
        angles, acc, targets = window_dataset([traj], [mcl])
        assert angles.shape == (4, 8, 2) and acc.shape == (4, 8, 2)
        np.testing.assert_array_equal(targets.ravel(), np.arange(2, 18))

    @pytest.mark.parametrize("shift", [-2, 2])
    def test_target_shift(self, shift):
        traj = TimedTrajectory(20.0, np.zeros((20, 2)))
        _, _, targets = window_dataset([traj], [np.arange(20.0)], target_shift=shift)
        assert np.all(targets >= 0) and np.all(targets < 20)
        np.testing.assert_array_equal(targets[:, 0] % 4, (2 + shift) % 4)

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            window_dataset([TimedTrajectory(20.0, np.zeros((20, 2)))], [np.zeros(19)])

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            window_dataset([], [])


class TestTraining:
    def test_empty(self):
        with pytest.raises(InvalidInputError):
            train_mclnet(np.zeros((0, 8, 2)), np.zeros((0, 8, 2)), np.zeros((0, 4)))

    def test_misaligned(self):
        with pytest.raises(InvalidInputError):
            train_mclnet(np.zeros((3, 8, 2)), np.zeros((3, 8, 2)), np.zeros((2, 4)))

    def test_same_seed_bit_identical(self, pilot):
        angles, acc, targets = mcl_training_set(pilot.sessions[:60])
        cfg = TrainConfig(epochs=3)
        a, ha = train_mclnet(angles, acc, targets, cfg)
        b, hb = train_mclnet(angles, acc, targets, cfg)
        assert ha == hb
        pa, pb = a.parameters(), b.parameters()
        for key in pa:
            np.testing.assert_array_equal(pa[key], pb[key])

    def test_seed_changes_parameters(self, pilot):
        angles, acc, targets = mcl_training_set(pilot.sessions[:30])
        a, _ = train_mclnet(angles, acc, targets, TrainConfig(epochs=1, seed=0))
        b, _ = train_mclnet(angles, acc, targets, TrainConfig(epochs=1, seed=1))
        pa, pb = a.parameters(), b.parameters()
        assert any(not np.array_equal(pa[k], pb[k]) for k in pa)

    def test_memorizes_single_example(self):
        rng = np.random.default_rng(0)
        reps = 1280
        angles = np.repeat(rng.uniform(-20, 20, (1, 8, 2)), reps, 0)
        acc = np.repeat(rng.normal(0, 100, (1, 8, 2)), reps, 0)
        targets = np.repeat([[0.3, 0.35, 0.4, 0.38]], reps, 0)
        _, history = train_mclnet(angles, acc, targets, TrainConfig())
        assert history[-1] <= 1e-4

    def test_delay_robustness(self, oracle):
        pilot = gen_dataset(oracle, "pilot", 0, participants=2)
        held_out = gen_dataset(oracle, "eval", 0, participants=2)
        base = shifted_nrmse(train_mcl_model(pilot.sessions)[0], held_out, 0)
        for shift in (-2, 2):
            net, _ = train_mcl_model(pilot.sessions, target_shift=shift)
            assert shifted_nrmse(net, held_out, shift) - base <= 5.0, shift


class TestTrained:
    def test_history_finite_and_decreasing(self, trained):
        hist = trained["mcl_history"]
        assert len(hist) == 20
        assert np.all(np.isfinite(hist))
        assert hist[-1] < hist[0]

    def test_constant_pose_flat(self, mcl_net):
        for pose in [(0.0, 0.0), (20.0, -30.0), (-30.0, 50.0)]:
            seq = estimate_sequence(mcl_net, TimedTrajectory(20.0, np.tile(pose, (40, 1))))
            assert np.ptp(seq.values) <= 0.05

    @staticmethod
    def stride_differences(mcl_net, sessions):
        for s in sessions:
            traj = s.trajectory_20hz()
            a = estimate_sequence(mcl_net, traj, stride=4).values
            b = estimate_sequence(mcl_net, traj, stride=2).values
            yield s, np.abs(a - b)

    def test_stride_consistency(self, mcl_net, eval_set):
        for s, d in self.stride_differences(mcl_net, eval_set.sessions):
            hold = np.r_[d[:onset_index(s) - 4], d[offset_index(s) + 6:]]
            assert hold.max() <= 0.02
            assert d.mean() <= 0.02

    @pytest.mark.xfail(strict=True, reason="pointwise disagreement during fast transients exceeds 0.02; "
                                           "it is bounded by the model's own pointwise error there")
    def test_stride_consistency_pointwise_in_motion(self, mcl_net, eval_set):
        for _, d in self.stride_differences(mcl_net, eval_set.sessions[:20]):
            assert d.max() <= 0.02

    def test_origin_matches_oracle(self, mcl_net):
        assert stationary_mcl_map(mcl_net, [0.0, 0.0])[0] == pytest.approx(0.17, abs=0.05)

    def test_far_pose_higher(self, mcl_net):
        m = stationary_mcl_map(mcl_net, [[30.0, 50.0], [0.0, 0.0]])
        assert m[0] > m[1]

    def test_yaw_symmetric(self, mcl_net):
        grid = np.array([(p, y) for p in (-30, -20, -10, 0, 10, 20, 30) for y in (10, 20, 30, 40, 50)], float)
        diff = stationary_mcl_map(mcl_net, grid) - stationary_mcl_map(mcl_net, grid * [1, -1])
        assert np.max(np.abs(diff)) <= 0.08

    def test_yaw_monotone(self, mcl_net):
        yaws = np.array([0.0, 20.0, 30.0, 40.0, 50.0])
        row = stationary_mcl_map(mcl_net, np.column_stack([np.zeros(5), yaws]))
        assert np.all(np.diff(row) > 0)

    def test_positive_on_eval(self, mcl_net, eval_set):
        est = estimate_sequences(mcl_net, [s.trajectory_20hz() for s in eval_set.sessions])
        assert all(np.all(e.values > 0) for e in est)
