import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import stats

from neckmcl.errors import DegenerateRangeError, DegenerateVarianceError, InvalidInputError
from neckmcl.kinematics import MclSequence
from neckmcl.metrics import (EvaluationReport, anchor_label, evaluate_model, nmae, nrmse, pearson,
                             report_from_sequences, spearman)

finite = st.floats(-1e3, 1e3, allow_nan=False)
pairs = st.integers(2, 40).flatmap(lambda n: st.tuples(st.lists(finite, min_size=n, max_size=n),
                                                       st.lists(finite, min_size=n, max_size=n)))


def spread(values):
    return max(values) - min(values) > 1e-6


class FakeSession:
    def __init__(self, anchor, values):
        self.anchor = anchor
        self.mcl = MclSequence(20.0, values)


class TestErrors:
    def test_identical(self):
        assert nrmse([0.2, 0.5, 0.9], [0.2, 0.5, 0.9]) == 0.0
        assert nmae([0.2, 0.5, 0.9], [0.2, 0.5, 0.9]) == 0.0

    def test_swapped(self):
        assert nrmse([1, 0], [0, 1]) == pytest.approx(100.0, abs=1e-9)

    def test_offset(self):
        assert nrmse([0.1, 1.1, 2.1], [0, 1, 2]) == pytest.approx(5.0, abs=1e-9)

    def test_nmae_half(self):
        assert nmae([0.5, 0.5], [0, 1]) == pytest.approx(50.0, abs=1e-9)

    def test_mean_normalizer(self):
        assert nrmse([1.1, 2.1, 3.1], [1, 2, 3], normalizer="mean") == pytest.approx(5.0, abs=1e-9)

    def test_zero_range(self):
        with pytest.raises(DegenerateRangeError):
            nrmse([1, 2], [3, 3])
        with pytest.raises(DegenerateRangeError):
            nmae([1, 2], [3, 3])

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            nrmse([1, 2, 3], [1, 2])

    def test_too_short(self):
        with pytest.raises(InvalidInputError):
            nrmse([1], [1])

    def test_unknown_normalizer(self):
        with pytest.raises(InvalidInputError):
            nrmse([1, 2], [1, 2], normalizer="median")

    @settings(max_examples=200)
    @given(pairs)
    def test_nmae_le_nrmse(self, pm):
        p, m = pm
        assume(spread(m))
        assert nmae(p, m) <= nrmse(p, m) * (1 + 1e-12) + 1e-12

    @given(pairs, st.floats(-100, 100), st.floats(0.01, 100))
    def test_translation_and_scale(self, pm, shift, scale):
        p, m = np.array(pm[0]), np.array(pm[1])
        assume(spread(m))
        assert nrmse(p + shift, m + shift) == pytest.approx(nrmse(p, m), rel=1e-6, abs=1e-6)
        assert nmae(scale * p, scale * m) == pytest.approx(nmae(p, m), rel=1e-6, abs=1e-6)


class TestCorrelations:
    def test_linear(self):
        x = np.arange(5.0)
        assert pearson(x, 2 * x + 1) == pytest.approx(1.0, abs=1e-12)
        assert spearman(x, 2 * x + 1) == pytest.approx(1.0, abs=1e-12)

    def test_cubic(self):
        x = np.arange(-2.0, 3.0)
        assert spearman(x, x ** 3) == pytest.approx(1.0, abs=1e-12)
        r = pearson(x, x ** 3)
        assert r < 1
        assert r == pytest.approx(34 / math.sqrt(10 * 130), abs=1e-12)

    def test_ties(self):
        assert spearman([1, 2, 2, 3], [1, 2, 2, 3]) == pytest.approx(1.0, abs=1e-12)

    def test_tied_ranks_hand(self):
        # ranks [1, 2.5, 2.5, 4] against [4, 3, 2, 1]
        assert spearman([1, 2, 2, 3], [4, 3, 2, 1]) == pytest.approx(-0.9486832980505138, abs=1e-12)

    def test_anti(self):
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)

    def test_constant(self):
        with pytest.raises(DegenerateVarianceError):
            pearson([1, 1, 1], [1, 2, 3])
        with pytest.raises(DegenerateVarianceError):
            spearman([1, 2, 3], [5, 5, 5])

    @settings(max_examples=100)
    @given(pairs)
    def test_matches_reference(self, pm):
        x, y = pm
        assume(spread(x) and spread(y))
        assert pearson(x, y) == pytest.approx(stats.pearsonr(x, y)[0], abs=1e-9)
        assert spearman(x, y) == pytest.approx(stats.spearmanr(x, y)[0], abs=1e-9)

    @given(pairs)
    def test_bounded(self, pm):
        x, y = pm
        assume(spread(x) and spread(y))
        assert -1.0 <= pearson(x, y) <= 1.0

    @given(st.lists(st.integers(-50, 50), min_size=3, max_size=30, unique=True), st.data())
    def test_spearman_monotone_invariance(self, x, data):
        y = data.draw(st.lists(st.floats(-5, 5), min_size=len(x), max_size=len(x)))
        assume(spread(y))
        # well-separated values so the transforms cannot round distinct inputs together
        x = np.array(x) / 10.0
        assert spearman(np.exp(x), y) == pytest.approx(spearman(x, y), abs=1e-12)
        assert spearman(x ** 3 + x, y) == pytest.approx(spearman(x, y), abs=1e-12)


class TestReports:
    def test_per_anchor_grouping(self):
        sessions = [FakeSession((0.0, 0.0), [0.0, 1.0]), FakeSession((0.0, 0.0), [0.5, 1.5]),
                    FakeSession((5.0, -15.0), [0.0, 2.0, 4.0])]
        preds = [[1.0, 0.0], [0.5, 1.5], [0.2, 2.2, 4.2]]
        report = report_from_sequences("posthoc", sessions, preds)
        assert [r.anchor for r in report.rows] == [(0.0, 0.0), (5.0, -15.0)]
        first = report.rows[0]
        assert first.count == 4
        assert first.nrmse == pytest.approx(nrmse([1, 0, 0.5, 1.5], [0, 1, 0.5, 1.5]))
        assert report.rows[1].nrmse == pytest.approx(5.0)
        assert report.nrmse[0] == pytest.approx(np.mean([first.nrmse, 5.0]))

    def test_degenerate_anchor_is_nan(self):
        sessions = [FakeSession((0.0, 0.0), [0.3, 0.3]), FakeSession((1.0, 1.0), [0.0, 1.0])]
        report = report_from_sequences("posthoc", sessions, [[0.3, 0.4], [0.0, 1.0]])
        assert math.isnan(report.rows[0].nrmse)
        assert report.nrmse[0] == 0.0

    def test_text_and_rows(self):
        sessions = [FakeSession((5.0, -15.0), [0.0, 1.0, 0.5])]
        report = report_from_sequences("prehoc", sessions, [[0.1, 0.9, 0.5]])
        assert isinstance(report, EvaluationReport)
        text = report.to_text()
        assert "mode: prehoc" in text and "nrmse" in text
        labels = {r[0] for r in report.plot_rows()}
        assert labels == {anchor_label((5.0, -15.0)), "all"}
        assert anchor_label((-25.0, 45.0)) == "-25_45"

    def test_split_guard(self, mcl_net, pilot):
        with pytest.raises(InvalidInputError):
            evaluate_model(mcl_net, pilot)

    def test_unknown_mode(self, mcl_net, eval_set):
        with pytest.raises(InvalidInputError):
            evaluate_model(mcl_net, eval_set, mode="live")

    def test_prehoc_needs_trajectory_model(self, mcl_net, eval_set):
        with pytest.raises(InvalidInputError):
            evaluate_model(mcl_net, eval_set, mode="prehoc")
