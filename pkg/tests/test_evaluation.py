import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_best_accuracy, brute_tar_at_far
from vmfkit.directional import normalize, uniform_sphere
from vmfkit.errors import DegenerateInputError, DomainError
from vmfkit.evaluation import (
    Pair,
    ScoreSet,
    accuracy_at,
    aggregate_template,
    best_threshold_accuracy,
    kfold_accuracy,
    pair_scores,
    report_text,
    roc_csv,
    roc_curve,
    score_pairs,
    scores_csv,
    tar_at_far,
    verification_report,
)

# scores are rounded so ties occur often
score_lists = st.lists(st.integers(-100, 100).map(lambda v: v / 100), min_size=1, max_size=100)


def random_scores(rng, max_total=200):
    n_g = int(rng.integers(1, max_total))
    n_i = int(rng.integers(1, max_total - n_g + 1))
    quant = rng.choice([0, 10, 100])
    g = rng.uniform(-1, 1, n_g) + rng.uniform(0, 0.8)
    i = rng.uniform(-1, 1, n_i)
    if quant:
        g, i = np.round(g * quant) / quant, np.round(i * quant) / quant
    return g, i


class TestTemplate:
    def test_single(self):
        v = normalize([0.2, 0.3, -0.4])
        np.testing.assert_allclose(aggregate_template([v]), v, atol=1e-15)

    def test_identical(self):
        v = normalize([1.0, 2.0])
        np.testing.assert_allclose(aggregate_template([v, v]), v, atol=1e-15)

    def test_axes(self):
        np.testing.assert_allclose(aggregate_template([[1.0, 0.0], [0.0, 1.0]]), [0.70710678, 0.70710678], atol=1e-8)

    def test_cancelling(self):
        with pytest.raises(DegenerateInputError):
            aggregate_template([[1.0, 0.0], [-1.0, 0.0]])

    def test_order_invariant(self, rng):
        x = uniform_sphere(9, 4, rng) + np.array([3.0, 0, 0, 0])
        x = normalize(x)
        np.testing.assert_allclose(aggregate_template(x), aggregate_template(x[::-1]), atol=1e-15)


class TestScorePairs:
    def test_identical_and_orthogonal(self):
        x = np.array([[0.6, 0.8], [0.6, 0.8], [-0.8, 0.6]])
        s = score_pairs(x, [(0, 1, True), (0, 2, False)])
        assert s.genuine.tolist() == [1.0] and s.impostor.tolist() == [0.0]

    def test_all_pairs_count(self, rng):
        x = uniform_sphere(7, 3, rng)
        pairs = [Pair(a, b, (a + b) % 2 == 0) for a in range(7) for b in range(a + 1, 7)]
        s = score_pairs(x, pairs)
        assert s.genuine.size + s.impostor.size == 21

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            pair_scores(np.eye(2), [(0, 2, True)])


class TestTarAtFar:
    def test_worked_example(self):
        s = ScoreSet([0.9, 0.8, 0.2], [0.7, 0.1, 0.05, 0.02])
        tar, threshold = tar_at_far(s, [0.25])[0.25]
        assert tar == 1.0
        assert threshold == 0.2

    def test_separable_zero_far(self):
        assert tar_at_far(ScoreSet([0.8, 0.9], [0.1, 0.2]), [0.0])[0.0][0] == 1.0

    def test_far_one(self, rng):
        g, i = random_scores(rng)
        tar, threshold = tar_at_far(ScoreSet(g, i), [1.0])[1.0]
        assert tar == 1.0 and threshold <= min(g.min(), i.min())

    def test_nothing_accepted_when_target_unreachable(self):
        tar, threshold = tar_at_far(ScoreSet([0.5], [0.9]), [0.0])[0.0]
        assert tar == 0.0 and threshold > 0.9

    def test_errors(self):
        with pytest.raises(DomainError):
            tar_at_far(ScoreSet([0.5], []), [0.1])
        with pytest.raises(DomainError):
            tar_at_far(ScoreSet([0.5], [0.1]), [1.5])

    def test_brute_force_oracle(self, rng):
        for _ in range(300):
            g, i = random_scores(rng)
            targets = [0.0, 0.001, 0.01, 0.1, float(rng.uniform()), 1.0]
            got = tar_at_far(ScoreSet(g, i), targets)
            for t in targets:
                tar, th = brute_tar_at_far(g.tolist(), i.tolist(), t)
                assert got[t][0] == tar
                if math.isfinite(th):
                    assert got[t][1] == th

    @given(score_lists, score_lists, st.floats(0, 1), st.floats(0, 1))
    def test_monotone_in_target(self, g, i, a, b):
        lo, hi = sorted((a, b))
        res = tar_at_far(ScoreSet(g, i), [lo, hi])
        assert res[hi][0] >= res[lo][0]


class TestBestAccuracy:
    def test_separable(self):
        assert best_threshold_accuracy(ScoreSet([0.8, 0.9], [0.1, 0.3]))[0] == 1.0

    def test_indistinguishable(self):
        assert best_threshold_accuracy(ScoreSet([0.9], [0.9]))[0] == 0.5

    def test_hand_example(self):
        acc, th = best_threshold_accuracy(ScoreSet([0.8, 0.6], [0.7, 0.1]))
        assert acc == 0.75
        assert accuracy_at(ScoreSet([0.8, 0.6], [0.7, 0.1]), th) == 0.75

    def test_brute_force_oracle(self, rng):
        for _ in range(300):
            g, i = random_scores(rng)
            acc, th = best_threshold_accuracy(ScoreSet(g, i))
            ref_acc, ref_th = brute_best_accuracy(g.tolist(), i.tolist())
            assert acc == ref_acc and th == ref_th

    @given(score_lists, score_lists)
    def test_threshold_realizes_accuracy(self, g, i):
        s = ScoreSet(g, i)
        acc, th = best_threshold_accuracy(s)
        assert accuracy_at(s, th) == acc
        assert acc >= max(len(g), len(i)) / (len(g) + len(i))


class TestRoc:
    @given(score_lists, score_lists)
    def test_endpoints_and_monotone(self, g, i):
        roc = roc_curve(ScoreSet(g, i))
        assert roc[0][0] == 0.0
        assert roc[-1] == (1.0, 1.0)
        fars, tars = zip(*roc)
        assert all(b >= a for a, b in zip(fars, fars[1:]))
        assert all(b >= a for a, b in zip(tars, tars[1:]))


class TestKFold:
    def _features(self):
        # four unit vectors whose pairwise cosines are easy to read off
        return normalize(np.array([[1.0, 0.0], [1.0, 0.1], [0.0, 1.0], [1.0, 1.0]]))

    def test_identical_separable_folds(self):
        fold = [(0, 1, True), (0, 2, False)]
        mean, per = kfold_accuracy(self._features(), [fold, fold, fold])
        assert mean == 1.0 and per == [1.0, 1.0, 1.0]

    def test_hand_built_two_folds(self):
        x = self._features()
        # scores: (0,1)=0.995, (0,2)=0, (0,3)=0.707, (2,3)=0.707
        fold_a = [(0, 1, True), (0, 2, False)]
        fold_b = [(0, 3, True), (2, 3, False)]
        mean, per = kfold_accuracy(x, [fold_a, fold_b])
        # fold_a threshold chosen on fold_b alone: scores tie at 0.707, best is accept-all (0.5, lowest cut)
        # -> on fold_a accept both pairs -> 0.5; fold_b threshold from fold_a lies at 0.4975 -> both accepted -> 0.5
        assert per == [0.5, 0.5]
        assert mean == 0.5

    def test_permutation_invariant(self, rng):
        x = uniform_sphere(30, 4, rng)
        folds = [[(int(a), int(b), bool(rng.integers(2))) for a, b in rng.integers(0, 30, (12, 2))] for _ in range(5)]
        for fold in folds:
            fold[0] = (fold[0][0], fold[0][1], True)
            fold[1] = (fold[1][0], fold[1][1], False)
        assert kfold_accuracy(x, folds)[0] == pytest.approx(kfold_accuracy(x, folds[::-1])[0], abs=1e-15)

    def test_errors(self):
        with pytest.raises(DomainError):
            kfold_accuracy(np.eye(2), [[(0, 1, True)]])
        with pytest.raises(DomainError):
            kfold_accuracy(np.eye(2), [[(0, 1, True)], []])


class TestReport:
    def test_far_targets_always_present(self, rng):
        g, i = random_scores(rng)
        report = verification_report(ScoreSet(g, i), [0.05])
        assert set(report.tar_at_far) == {0.01, 0.001, 0.05}
        text = report_text(report, g.size, i.size)
        assert "tar@far=0.01 " in text and "tar@far=0.001 " in text

    def test_csv_formats(self):
        pairs = [(0, 1, True), (1, 2, False)]
        text = scores_csv(pairs, [0.5, -0.25])
        assert text.splitlines() == ["pair_a,pair_b,label,score", "0,1,1,0.5", "1,2,0,-0.25"]
        assert roc_csv([(0.0, 0.5), (1.0, 1.0)]).splitlines() == ["far,tar", "0.0,0.5", "1.0,1.0"]
