import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgld_privacy.errors import ConfigError, InputError, NumericError
from sgld_privacy.net_core import LossBound, MlpArchitecture, ModelParams, Sample, init_params
from sgld_privacy.posterior import EnsemblePredictor, PosteriorSampleSet
from sgld_privacy.privacy import (DiscretePosterior, ShadowDataset, audit_samples, default_loss_fn,
                                  dp_mpl_bound,
                                  ensemble_measure_score, exact_loo_check, exact_posterior,
                                  loo_error_bound, measure_score, membership_posterior, mpl_lipschitz_bound,
                                  mpl_loss, read_mpl_reports, uniform_mpl_bound, write_mpl_reports)

LAMBDAS = [0.1, 0.25, 0.5, 0.75, 0.9]


def table_loss(table):
    """Loss function reading l(z, theta) from ``table[z][theta]`` (ints index both)."""
    return lambda z, theta: table[z][theta]


def random_loo_instance(rng):
    """Random small support, dataset and loss table, bounded by B <= 1."""
    B = float(rng.uniform(0.05, 1.0))
    m, n = int(rng.integers(1, 6)), int(rng.integers(1, 7))
    table = rng.uniform(0.0, B, (n, m))
    prior = rng.dirichlet(np.ones(m))
    return B, table, prior


def loo_check_instance(B, table, prior, drop):
    n, m = table.shape
    loss = table_loss(table)
    support = list(range(m))
    D = list(range(n))
    S = [i for i in D if i != drop]
    post_D = exact_posterior(support, prior, D, loss)
    post_S = exact_posterior(support, prior, S, loss)
    return exact_loo_check(post_D, post_S, drop, B, loss)


class TestScores:
    @pytest.mark.parametrize("tp, l, s", [(0.3, 0.3, 0.0), (0.5, 0.1, 0.4), (0.1, 0.5, -0.4)])
    def test_measure_score(self, tp, l, s):
        assert measure_score(tp, l) == pytest.approx(s, abs=1e-15)

    def test_ensemble_measure_score(self):
        s = ensemble_measure_score(0.5, 0.2)
        assert s == pytest.approx(0.3, abs=1e-15)
        assert mpl_lipschitz_bound(s) == pytest.approx(0.075, abs=1e-15)

    def test_single_snapshot_ensemble_score_is_zero(self, tiny_params):
        ss = PosteriorSampleSet.from_params([tiny_params], [0.1])
        reports = audit_samples(ss, np.ones((2, 3)), [0, 1], ensemble=EnsemblePredictor(ss))
        assert all(abs(r.score) < 1e-12 for r in reports)


class TestMembershipPosterior:
    def test_fixed_point(self):
        for lam in LAMBDAS:
            P = membership_posterior(0.0, lam)
            assert P == pytest.approx(lam, abs=1e-15)
            assert mpl_loss(P, lam) == pytest.approx(0.0, abs=1e-15)

    def test_sigmoid_value(self):
        assert membership_posterior(0.4, ShadowDataset([], 0.5)) == pytest.approx(0.598687660112452, rel=1e-14)

    def test_limit(self):
        assert membership_posterior(-1e3, 0.5) == pytest.approx(0.0, abs=1e-300)

    @pytest.mark.parametrize("lam", [0.0, 1.0, -0.2, 1.5])
    def test_lambda_rejected(self, lam):
        with pytest.raises(ConfigError):
            ShadowDataset([], lam)
        with pytest.raises(ConfigError):
            membership_posterior(0.0, lam)

    def test_shadow_dataset(self):
        z1, z2 = Sample(np.zeros(2), 0), Sample(np.ones(2), 1)
        shadow = ShadowDataset([(z1, 1), (z2, 0)], lam=0.25)
        assert shadow.members == [z1] and shadow.nonmembers == [z2]
        assert abs(shadow.t_lambda - math.log(1 / 3)) < 1e-12

    @given(lam=st.sampled_from(LAMBDAS), a=st.floats(-20, 20), b=st.floats(-20, 20))
    def test_monotone(self, lam, a, b):
        lo, hi = sorted((a, b))
        assert membership_posterior(lo, lam) <= membership_posterior(hi, lam)
        assert mpl_loss(membership_posterior(lo, lam), lam) <= mpl_loss(membership_posterior(hi, lam), lam)


class TestMplLoss:
    @pytest.mark.parametrize("P, lam, expected", [(0.75, 0.5, 0.25), (0.3, 0.5, 0.0), (0.5, 0.5, 0.0)])
    def test_examples(self, P, lam, expected):
        assert mpl_loss(P, lam) == pytest.approx(expected, abs=1e-15)

    def test_lipschitz_example(self):
        mpl = mpl_loss(membership_posterior(0.4, 0.5), 0.5)
        assert mpl == pytest.approx(0.0986876601124520, rel=1e-13)
        assert mpl <= mpl_lipschitz_bound(0.4) == pytest.approx(0.1)

    @pytest.mark.parametrize("s", [-3.0, -0.01, 0.0])
    def test_non_positive_score(self, s):
        assert mpl_lipschitz_bound(s) == 0.0
        assert mpl_loss(membership_posterior(s, 0.5), 0.5) == 0.0

    def test_vacuous_bound(self):
        assert mpl_lipschitz_bound(4.0) == 1.0

    def test_bound_grid(self):
        s = np.round(np.arange(-1000, 1001) * 0.01, 10)
        for lam in LAMBDAS:
            mpl = mpl_loss(membership_posterior(s, lam), lam)
            assert np.all(mpl <= mpl_lipschitz_bound(s) + 1e-12)
            assert np.all(mpl <= 1 - lam)

    @given(s=st.floats(-50, 50), lam=st.floats(0.01, 0.99))
    def test_bound_random(self, s, lam):
        assert mpl_loss(membership_posterior(s, lam), lam) <= mpl_lipschitz_bound(s) + 1e-12


class TestClosedFormBounds:
    def test_uniform_bound_leading_term(self):
        assert uniform_mpl_bound(0.5, 1.0) == pytest.approx(0.214785228557380654, rel=1e-14)

    def test_uniform_bound_vanishes_with_b(self):
        assert uniform_mpl_bound(1e-12, 1.0) == pytest.approx(0.0, abs=1e-20)

    def test_uniform_bound_correction(self):
        lead = uniform_mpl_bound(0.3, 2.0)
        assert uniform_mpl_bound(0.3, 2.0, 0.5, 0.1) == pytest.approx(lead + 0.1 * 1.5 / 2.0, rel=1e-14)

    def test_uniform_bound_decreases_with_total_step(self):
        values = [uniform_mpl_bound(0.3, S, 0.2, 1.0) for S in (1, 10, 100, 1000)]
        assert all(a > b for a, b in zip(values, values[1:]))
        assert values[-1] > uniform_mpl_bound(0.3, 1.0)

    @pytest.mark.parametrize("args", [(0.0, 1.0), (0.5, 0.0), (0.5, 1.0, 0.0, -1.0)])
    def test_uniform_bound_invalid(self, args):
        with pytest.raises(ConfigError):
            uniform_mpl_bound(*args)

    def test_loo_bound(self):
        assert loo_error_bound(0.5) == pytest.approx(0.859140914229522617, rel=1e-14)
        assert loo_error_bound(1e-12) == pytest.approx(0.0, abs=1e-20)

    @given(a=st.floats(1e-6, 5), b=st.floats(1e-6, 5))
    def test_loo_bound_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert loo_error_bound(lo) <= loo_error_bound(hi)

    @pytest.mark.parametrize("eps, expected", [(1.0, 0.25), (0.0, 0.0), (0.4, 0.1)])
    def test_dp_bound(self, eps, expected):
        assert dp_mpl_bound(eps) == pytest.approx(expected, abs=1e-15)

    def test_dp_bound_negative(self):
        with pytest.raises(ConfigError):
            dp_mpl_bound(-0.1)


class TestExactLooCheck:
    def test_hand_example(self):
        # Two-point support, three samples; the third is removed.
        table = np.array([[0.1, 0.3], [0.2, 0.1], [0.4, 0.05]])
        check = loo_check_instance(0.5, table, np.array([0.5, 0.5]), drop=2)
        assert check.loo_error == pytest.approx(0.030504490927658332, rel=1e-12)
        assert check.bound == pytest.approx(0.859140914229522617, rel=1e-14)
        assert check.holds

    def test_same_dataset_zero_error(self):
        rng = np.random.default_rng(0)
        B, table, prior = random_loo_instance(rng)
        loss = table_loss(table)
        post = exact_posterior(list(range(table.shape[1])), prior, list(range(table.shape[0])), loss)
        check = exact_loo_check(post, post, 0, B, loss)
        assert check.loo_error == 0.0 and check.holds

    def test_randomized_instances(self):
        rng = np.random.default_rng(123)
        for _ in range(200):
            B, table, prior = random_loo_instance(rng)
            check = loo_check_instance(B, table, prior, int(rng.integers(table.shape[0])))
            assert check.holds and check.bound == loo_error_bound(B)

    def test_network_support(self):
        rng = np.random.default_rng(8)
        arch = MlpArchitecture((2, 3, 2))
        support = [ModelParams(arch, rng.normal(0, 0.3, arch.n_params)) for _ in range(4)]
        data = [Sample(rng.normal(size=2), int(rng.integers(2))) for _ in range(5)]
        bound = LossBound(5.0)
        loss = default_loss_fn(bound)
        post_D = exact_posterior(support, np.full(4, 0.25), data, loss)
        post_S = exact_posterior(support, np.full(4, 0.25), data[:-1], loss)
        assert exact_loo_check(post_D, post_S, data[-1], bound).holds

    def test_zero_weight_posterior(self):
        with pytest.raises(NumericError):
            exact_posterior([0, 1], [0.0, 0.0], [], lambda z, t: 0.0)

    def test_numeric_bound_needs_loss_fn(self):
        post = DiscretePosterior([0], [1.0])
        with pytest.raises(InputError):
            exact_loo_check(post, post, 0, 0.5)

    def test_support_mismatch(self):
        a = DiscretePosterior([0, 1], [0.5, 0.5])
        b = DiscretePosterior([0], [1.0])
        with pytest.raises(InputError):
            exact_loo_check(a, b, 0, LossBound(), lambda z, t: 0.0)

    def test_weights_validated(self):
        with pytest.raises(InputError):
            DiscretePosterior([0, 1], [0.5, 0.6])


class TestAudit:
    def test_reports_respect_bounds_and_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        arch = MlpArchitecture((3, 4, 2))
        base = init_params(arch, 0).theta
        ss = PosteriorSampleSet(arch, base + rng.normal(0, 0.3, (6, arch.n_params)), np.full(6, 0.01))
        X, y = rng.normal(size=(10, 3)), rng.integers(0, 2, 10)
        for ensemble in (None, EnsemblePredictor(ss, "last_k", 3)):
            reports = audit_samples(ss, X, y, lam=0.3, ensemble=ensemble, membership=np.arange(10) % 2)
            for r in reports:
                assert 0 <= r.mpl <= r.bound + 1e-12
                assert r.mpl <= 0.7
            write_mpl_reports(reports, tmp_path / "r.csv")
            assert read_mpl_reports(tmp_path / "r.csv") == reports
