import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from neckmcl.errors import InvalidInputError
from neckmcl.kinematics import (CENTER_LENGTH, HeadPose, KinematicsSequence, MclSequence, TimedTrajectory,
                                differentiate, in_study_field, resample, windows)


def ramp(rate, duration, start=0.0, stop=10.0):
    n = int(round(duration * rate)) + 1
    yaw = np.linspace(start, stop, n)
    return TimedTrajectory(rate, np.column_stack([np.zeros(n), yaw]))


def kin20(n):
    a = np.zeros((n, 2))
    return KinematicsSequence(20.0, a, a, a)


class TestHeadPose:
    def test_parse(self):
        assert HeadPose.parse("12.5,-30") == HeadPose(12.5, -30.0)

    @pytest.mark.parametrize("text", ["", "1", "1,2,3", "a,b"])
    def test_parse_rejects(self, text):
        with pytest.raises(InvalidInputError):
            HeadPose.parse(text)

    def test_non_finite(self):
        with pytest.raises(InvalidInputError):
            HeadPose(float("nan"), 0.0)

    def test_difference(self):
        assert HeadPose(10, 20) - HeadPose(-5, 25) == (15, -5)

    def test_field_flags_without_rejecting(self):
        assert in_study_field(HeadPose(30, -50))
        assert not in_study_field(HeadPose(31, 0))
        assert not in_study_field((0, 50.5))
        HeadPose(90, 180)


class TestResample:
    def test_constant(self):
        # 90 samples at 90 Hz: one second of recording
        traj = TimedTrajectory(90.0, np.zeros((90, 2)))
        out = resample(traj, 20.0)
        assert len(out) == 20
        assert out.sample_rate == 20.0
        np.testing.assert_array_equal(out.angles, 0.0)

    def test_inclusive_span(self):
        # 91 samples span t = 0..1 exactly, so t = 1.0 is kept
        out = resample(TimedTrajectory(90.0, np.zeros((91, 2))), 20.0)
        assert len(out) == 21
        assert out.duration == pytest.approx(1.0)

    def test_linear_ramp_midpoint(self):
        out = resample(ramp(90.0, 1.0), 20.0)
        assert out.times[10] == pytest.approx(0.5)
        assert out.yaw[10] == pytest.approx(5.0, abs=1e-12)
        np.testing.assert_allclose(out.yaw, 10.0 * out.times, atol=1e-12)

    def test_same_rate_identity(self):
        traj = ramp(20.0, 1.0)
        assert resample(traj, 20.0) is traj

    def test_empty_trajectory(self):
        with pytest.raises(InvalidInputError):
            TimedTrajectory(90.0, np.zeros((0, 2)))

    def test_single_sample(self):
        with pytest.raises(InvalidInputError):
            resample(TimedTrajectory(90.0, np.zeros((1, 2))), 20.0)

    def test_angles_read_only(self):
        traj = ramp(20.0, 1.0)
        with pytest.raises(ValueError):
            traj.angles[0, 0] = 1.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(5, 200), st.sampled_from([20.0, 30.0, 45.0, 90.0, 100.0]))
    def test_idempotent(self, n, rate):
        rng = np.random.default_rng(n)
        traj = TimedTrajectory(rate, rng.normal(size=(n, 2)))
        once = resample(traj, 20.0)
        np.testing.assert_array_equal(resample(once, 20.0).angles, once.angles)

    def test_single_sample_same_rate(self):
        traj = TimedTrajectory(20.0, np.array([[1.0, -2.0]]))
        assert resample(traj, 20.0) is traj
        with pytest.raises(InvalidInputError):
            resample(traj, 90.0)


class TestDifferentiate:
    def test_constant(self):
        kin = differentiate(TimedTrajectory(20.0, np.full((10, 2), 7.0)))
        np.testing.assert_array_equal(kin.velocity, 0.0)
        np.testing.assert_array_equal(kin.acceleration, 0.0)

    def test_linear_pitch(self):
        t = np.arange(21) / 20.0
        kin = differentiate(TimedTrajectory(20.0, np.column_stack([10.0 * t, np.zeros_like(t)])))
        np.testing.assert_allclose(kin.velocity[1:-1, 0], 10.0, atol=1e-12)
        np.testing.assert_allclose(kin.acceleration[:, 0], 0.0, atol=1e-9)

    def test_central_difference_stencil(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(12, 2))
        kin = differentiate(TimedTrajectory(20.0, a))
        np.testing.assert_allclose(kin.velocity[1:-1], (a[2:] - a[:-2]) * 20.0 / 2)
        np.testing.assert_allclose(kin.velocity[0], (a[1] - a[0]) * 20.0)
        np.testing.assert_allclose(kin.velocity[-1], (a[-1] - a[-2]) * 20.0)

    def test_too_short(self):
        with pytest.raises(InvalidInputError):
            differentiate(TimedTrajectory(20.0, np.zeros((2, 2))))

    def test_gaussian_velocity_peak(self):
        # closed-form position of a Gaussian velocity profile (erf integral)
        a, mu, sigma = 80.0, 0.6, 0.12
        t = np.arange(0, 1.5, 1 / 90)
        pos = a * sigma * np.sqrt(np.pi / 2) * (erf((t - mu) / (sigma * np.sqrt(2))) + erf(mu / (sigma * np.sqrt(2))))
        kin = differentiate(resample(TimedTrajectory(90.0, np.column_stack([pos, pos])), 20.0))
        assert abs(np.argmax(kin.velocity[:, 0]) / 20.0 - mu) <= 1 / 20.0

    def test_second_order_accuracy(self):
        # sine trajectory: interior error shrinks ~4x when the step halves
        errors = []
        for rate in (20.0, 40.0):
            t = np.arange(0, 2 + 1e-9, 1 / rate)
            kin = differentiate(TimedTrajectory(rate, np.column_stack([np.sin(3 * t), np.cos(3 * t)])))
            errors.append(np.max(np.abs(kin.velocity[1:-1, 0] - 3 * np.cos(3 * t[1:-1]))))
        assert 3.5 < errors[0] / errors[1] < 4.5


class TestWindows:
    def test_twenty_samples(self):
        batch = windows(kin20(20))
        assert len(batch) == 4
        centers = [i for w in batch for i in w.center]
        assert centers == list(range(2, 18))
        np.testing.assert_array_equal(batch.uncovered, [0, 1, 18, 19])

    def test_eight_samples(self):
        assert len(windows(kin20(8))) == 1

    def test_seven_samples(self):
        with pytest.raises(InvalidInputError):
            windows(kin20(7))

    def test_wrong_rate(self):
        a = np.zeros((20, 2))
        with pytest.raises(InvalidInputError):
            windows(KinematicsSequence(90.0, a, a, a))

    def test_window_shapes(self):
        batch = windows(kin20(30))
        assert batch.angles.shape == (len(batch), 8, 2)
        assert batch[0].angles.shape == (8, 2)

    @given(st.integers(8, 300))
    def test_centers_tile_exactly(self, n):
        batch = windows(kin20(n))
        counts = np.zeros(n, int)
        for w in batch:
            counts[list(w.center)] += 1
        covered = np.flatnonzero(counts)
        assert counts.max() == 1
        assert covered.size == len(batch) * CENTER_LENGTH
        assert np.all(np.diff(covered) == 1)
        np.testing.assert_array_equal(np.sort(np.r_[covered, batch.uncovered]), np.arange(n))


class TestMclSequence:
    def test_defaults(self):
        seq = MclSequence(20.0, [0.1, 0.2])
        assert len(seq) == 2
        assert not seq.flagged.any()
        np.testing.assert_allclose(seq.times, [0.0, 0.05])

    @pytest.mark.parametrize("values", [[], [[0.1]], [np.inf]])
    def test_invalid(self, values):
        with pytest.raises(InvalidInputError):
            MclSequence(20.0, values)
