import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import trapezoid

from sgld_privacy.attacks import (AttackScoreSet, fixed_threshold_attack, mean_train_loss_threshold,
                                  normalized_losses, read_scores, roc_auc, roc_curve, score_samples,
                                  threshold_attack, write_report, write_roc, write_scores)
from sgld_privacy.errors import InputError
from sgld_privacy.net_core import LossBound, MlpArchitecture, ModelParams, forward
from sgld_privacy.posterior import EnsemblePredictor, PosteriorSampleSet


def score_set(members, nonmembers):
    scores = np.r_[members, nonmembers]
    membership = np.r_[np.ones(len(members), int), np.zeros(len(nonmembers), int)]
    return AttackScoreSet([str(i) for i in range(scores.size)], scores, membership)


def pairwise_auc(members, nonmembers):
    """Brute-force count over every (member, nonmember) pair, ties worth one half."""
    total = 0.0
    for m in members:
        for n in nonmembers:
            total += 1.0 if m < n else 0.5 if m == n else 0.0
    return total / (len(members) * len(nonmembers))


def constant_model(p_true: float):
    """Callable predicting probability ``p_true`` for class 1 on every input."""
    return lambda X: np.tile([1 - p_true, p_true], (len(np.atleast_2d(X)), 1))


class TestRocAuc:
    @pytest.mark.parametrize("members, nonmembers, expected", [
        ([0.1, 0.2], [0.8, 0.9], 1.0),
        ([0.4, 0.4], [0.4, 0.4, 0.4], 0.5),
        ([0.1, 0.7], [0.5, 0.9], 0.75),
        ([0.8, 0.9], [0.1, 0.2], 0.0),
    ])
    def test_examples(self, members, nonmembers, expected):
        assert roc_auc(score_set(members, nonmembers)) == expected

    @pytest.mark.parametrize("trial", range(25))
    def test_matches_pairwise_oracle(self, trial):
        rng = np.random.default_rng(trial)
        n_m, n_n = rng.integers(1, 300, 2)
        # Coarse rounding forces plenty of ties.
        members = np.round(rng.uniform(0, 1, n_m), 2)
        nonmembers = np.round(rng.uniform(0.1, 1, n_n), 2)
        assert abs(roc_auc(score_set(members, nonmembers)) - pairwise_auc(members, nonmembers)) < 1e-12

    @given(m=st.lists(st.integers(0, 10**6), min_size=1, max_size=30),
           n=st.lists(st.integers(0, 10**6), min_size=1, max_size=30))
    def test_invariances(self, m, n):
        m, n = np.array(m) / 1e6, np.array(n) / 1e6
        auc = roc_auc(score_set(m, n))
        assert 0 <= auc <= 1
        assert roc_auc(score_set(m ** 2, n ** 2)) == pytest.approx(auc, abs=1e-12)
        assert roc_auc(score_set(2 * m + 1, 2 * n + 1)) == pytest.approx(auc, abs=1e-12)
        flipped = score_set(n, m)
        assert roc_auc(flipped) == pytest.approx(1 - auc, abs=1e-12)

    def test_single_class(self):
        with pytest.raises(InputError):
            roc_auc(AttackScoreSet(["a", "b"], [0.1, 0.2], [1, 1]))

    def test_roc_curve_area_matches_auc(self):
        rng = np.random.default_rng(5)
        s = score_set(rng.uniform(0, 0.8, 40), np.round(rng.uniform(0.2, 1, 50), 1))
        fpr, tpr, _ = roc_curve(s)
        assert fpr[0] == 0 and tpr[0] == 0 and fpr[-1] == 1 and tpr[-1] == 1
        assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)
        # Trapezoids through tied thresholds give the ties-count-half convention.
        assert trapezoid(tpr, fpr) == pytest.approx(roc_auc(s), abs=1e-12)


class TestFixedThreshold:
    def test_confusion_matrix(self):
        report = fixed_threshold_attack(score_set([0.1, 0.3], [0.5, 0.15]), 0.2)
        assert (report.tp, report.fn, report.fp, report.tn) == (1, 1, 1, 1)
        assert report.accuracy == 0.5 and report.f1 == 0.5 and report.threshold == 0.2

    def test_tie_counts_as_member(self):
        report = fixed_threshold_attack(score_set([0.2], [0.3]), 0.2)
        assert report.tp == 1 and report.tn == 1

    def test_threshold_above_all(self):
        report = fixed_threshold_attack(score_set([0.1, 0.2, 0.3], [0.5]), 1.0)
        assert report.tp == 3 and report.fp == 1 and report.accuracy == 0.75

    def test_threshold_below_all(self):
        report = fixed_threshold_attack(score_set([0.1, 0.2], [0.5]), 0.0)
        assert report.f1 == 0.0 and report.tp == 0

    @given(m=st.lists(st.floats(0, 1), min_size=1, max_size=20),
           n=st.lists(st.floats(0, 1), min_size=1, max_size=20), t=st.floats(-0.5, 1.5))
    def test_counts_consistent(self, m, n, t):
        r = fixed_threshold_attack(score_set(m, n), t)
        assert r.tp + r.fn == len(m) and r.fp + r.tn == len(n)
        assert r.accuracy == pytest.approx((r.tp + r.tn) / (len(m) + len(n)))
        prec = r.tp / (r.tp + r.fp) if r.tp + r.fp else 0.0
        rec = r.tp / (r.tp + r.fn)
        assert r.f1 == pytest.approx(2 * prec * rec / (prec + rec) if prec + rec else 0.0)


class TestScoring:
    def test_normalized_loss(self):
        bound = LossBound(5.0)
        p = np.exp(-0.5)
        n = normalized_losses(constant_model(p), np.zeros((1, 2)), [1], bound)
        assert n[0] == pytest.approx(0.1, rel=1e-12)

    def test_equal_max_loss_no_signal(self):
        s = score_samples(constant_model(0.0), (np.zeros((2, 1)), [1, 1]), (np.zeros((3, 1)), [1, 1, 1]))
        assert np.all(s.scores == 1.0)
        assert roc_auc(s) == 0.5

    def test_empty_class(self):
        with pytest.raises(InputError):
            score_samples(constant_model(0.5), (np.zeros((0, 1)), []), (np.zeros((1, 1)), [0]))

    def test_ensemble_scores_use_averaged_prediction(self):
        arch = MlpArchitecture((1, 2))
        nets = [ModelParams(arch, np.array([0.0, 0.0, 0.0, g])) for g in (2.0, -1.0)]
        ens = EnsemblePredictor(PosteriorSampleSet.from_params(nets, [0.5, 0.5]))
        x = np.zeros((1, 1))
        p1 = 0.5 * (forward(nets[0], x) + forward(nets[1], x))[0, 1]
        assert normalized_losses(ens, x, [1])[0] == pytest.approx(-np.log(p1) / 5.0, rel=1e-12)
        single = EnsemblePredictor(PosteriorSampleSet.from_params(nets[:1], [0.1]))
        np.testing.assert_allclose(normalized_losses(single, x, [1]), normalized_losses(nets[0], x, [1]))

    def test_mean_train_loss_threshold(self):
        # Losses 0.4 and 0.8 normalised by B = 2.
        bound = LossBound(2.0)
        X = np.zeros((2, 1))
        model = lambda X: np.array([[1 - np.exp(-0.4), np.exp(-0.4)], [1 - np.exp(-0.8), np.exp(-0.8)]])
        assert mean_train_loss_threshold(model, X, [1, 1], bound) == pytest.approx(0.3, rel=1e-12)

    def test_constant_loss_threshold(self):
        p = np.exp(-0.7)
        assert mean_train_loss_threshold(constant_model(p), np.zeros((4, 1)), [1] * 4) == pytest.approx(0.14)

    def test_full_attack_and_io(self, tmp_path):
        rng = np.random.default_rng(0)
        arch = MlpArchitecture((2, 2))
        model = ModelParams(arch, rng.normal(size=arch.n_params))
        train = (rng.normal(size=(20, 2)), rng.integers(0, 2, 20))
        test = (rng.normal(size=(15, 2)), rng.integers(0, 2, 15))
        report = threshold_attack(model, train, test)
        scores = score_samples(model, train, test)
        t = report.threshold
        assert scores.member_scores.min() <= t <= scores.member_scores.max()
        assert report.auc == roc_auc(scores)
        write_scores(scores, tmp_path / "s.csv")
        back = read_scores(tmp_path / "s.csv")
        assert back.ids == scores.ids
        np.testing.assert_array_equal(back.scores, scores.scores)
        np.testing.assert_array_equal(back.membership, scores.membership)
        write_roc(scores, tmp_path / "roc.csv")
        assert (tmp_path / "roc.csv").read_text().startswith("fpr,tpr\n")
        write_report(report, tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text().splitlines()[0] == "auc,f1,accuracy,threshold,tp,fp,tn,fn"
