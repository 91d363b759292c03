"""Particle filters: resampling, likelihood estimates, Kalman oracle."""

import math
import warnings
from types import SimpleNamespace

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from tumorsde import model
from tumorsde.model import (
    Dataset,
    ModelError,
    ObservationDesign,
    SubjectData,
    Theta,
    obs_logdensity,
)
from tumorsde.smc import (
    AUXILIARY,
    BOOTSTRAP,
    SmcConfig,
    auxiliary_filter,
    bootstrap_filter,
    dataset_loglik,
    kalman_oracle_loglik,
    stratified_resample,
)


def fixed_phi_one_compartment(beta=0.4, gamma=0.2, sigma_eps=0.3):
    return Theta(model_kind=model.ONE_COMPARTMENT, mean_log_beta=math.log(beta),
                 sigma_beta=0.0, gamma=gamma, sigma_eps=sigma_eps)


def deterministic_two_compartment(sigma_eps=0.25):
    return Theta(
        model_kind=model.TWO_COMPARTMENT,
        mean_log_beta=math.log(0.9), mean_log_delta=math.log(0.6), mean_alpha=0.35,
        gamma=0.0, tau=0.0, sigma_beta=0.0, sigma_delta=0.0, sigma_alpha=0.0,
        sigma_eps=sigma_eps)


def make_subject(times, y, subject_id="s01"):
    return SubjectData(subject_id=subject_id, times=np.asarray(times, dtype=float),
                       y=np.asarray(y, dtype=float))


class TestStratifiedResample:
    def test_uniform_weights_give_one_per_stratum(self):
        idx = stratified_resample(np.full(4, 0.25), np.random.default_rng(0))
        assert sorted(idx.tolist()) == [0, 1, 2, 3]

    def test_point_mass_selects_only_that_index(self):
        idx = stratified_resample([1.0, 0.0, 0.0, 0.0], np.random.default_rng(1))
        assert np.all(idx == 0)

    def test_expected_counts_and_bound(self):
        w = np.array([0.5, 0.3, 0.2])
        rng = np.random.default_rng(2)
        reps = 10 ** 5
        counts = np.zeros((reps, 3))
        for r in range(reps):
            idx = stratified_resample(w, rng)
            counts[r] = np.bincount(idx, minlength=3)
        means = counts.mean(axis=0)
        ses = counts.std(axis=0, ddof=1) / math.sqrt(reps)
        np.testing.assert_array_less(np.abs(means - 3 * w), 3 * ses + 1e-12)
        assert set(np.unique(counts[:, 0])) <= {1.0, 2.0}

    def test_invalid_weights_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ModelError):
            stratified_resample([0.5, 0.4], rng)
        with pytest.raises(ModelError):
            stratified_resample([-0.1, 1.1], rng)
        with pytest.raises(ModelError):
            stratified_resample([np.nan, 1.0], rng)

    @given(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=2, max_size=40),
           st.integers(min_value=0, max_value=2 ** 31))
    @settings(max_examples=60, deadline=None)
    def test_count_bound_property(self, raw, seed):
        raw = np.asarray(raw)
        if raw.sum() <= 0:
            raw = raw + 1.0
        w = raw / raw.sum()
        idx = stratified_resample(w, np.random.default_rng(seed))
        counts = np.bincount(idx, minlength=len(w))
        assert np.all(np.abs(counts - len(w) * w) < 1.0 + 1e-9)


class TestDeterministicReduction:
    """With every variance zero the filters reduce to the exact likelihood."""

    def expected_loglik(self, theta, subject, v0):
        alpha, beta, delta = theta.mean_alpha, math.exp(theta.mean_log_beta), \
            math.exp(theta.mean_log_delta)
        t = subject.times - subject.times[0]
        totals = ((1 - alpha) * v0 * np.exp(beta * t)
                  + alpha * v0 * np.exp(-delta * t))
        return float(obs_logdensity(subject.y, np.log(totals), theta.sigma_eps).sum())

    @pytest.mark.parametrize("particles", [2, 16, 301])
    @pytest.mark.parametrize("kind", [BOOTSTRAP, AUXILIARY])
    def test_exact_product_for_any_particle_count(self, particles, kind):
        theta = deterministic_two_compartment()
        subject = make_subject([0.0, 1.0, 2.0, 3.5], [4.1, 4.4, 4.9, 5.6])
        config = SmcConfig(particles=particles, first_stage_particles=3,
                           filter_kind=kind)
        est = (bootstrap_filter if kind == BOOTSTRAP else auxiliary_filter)(
            subject, 70.0, theta, config, np.random.default_rng(3))
        expected = self.expected_loglik(theta, subject, 70.0)
        assert est == pytest.approx(expected, rel=1e-10)

    def test_filters_agree_with_each_other(self):
        theta = deterministic_two_compartment()
        subject = make_subject([0.0, 0.5, 1.25], [4.0, 4.2, 4.6])
        boot = bootstrap_filter(subject, 55.0, theta,
                                SmcConfig(particles=32, filter_kind=BOOTSTRAP),
                                np.random.default_rng(4))
        aux = auxiliary_filter(subject, 55.0, theta,
                               SmcConfig(particles=32, filter_kind=AUXILIARY),
                               np.random.default_rng(5))
        assert boot == pytest.approx(aux, rel=1e-10)


class TestUnbiasedness:
    """Mean of the natural-scale estimate matches the Kalman value."""

    def setup_subject(self):
        theta = fixed_phi_one_compartment()
        times = np.array([0.0, 1.0, 2.0, 3.0, 4.5, 6.0])
        rng = np.random.default_rng(6)
        paths = model.simulate_log_total_paths(theta, 50.0, times, 1, rng)
        y = paths[0] + theta.sigma_eps * rng.standard_normal(len(times))
        return theta, make_subject(times, y)

    def run_filter_many(self, filter_fn, subject, theta, config, runs, seed):
        rng = np.random.default_rng(seed)
        return np.array([filter_fn(subject, 50.0, theta, config, r)
                         for r in rng.spawn(runs)])

    @pytest.mark.parametrize("kind,first_stage", [
        (BOOTSTRAP, 1), (AUXILIARY, 1), (AUXILIARY, 5)])
    def test_mean_estimate_matches_kalman(self, kind, first_stage):
        theta, subject = self.setup_subject()
        exact = kalman_oracle_loglik(subject, 50.0, 0.4, theta.gamma, theta.sigma_eps)
        config = SmcConfig(particles=256, first_stage_particles=first_stage,
                           filter_kind=kind)
        filter_fn = bootstrap_filter if kind == BOOTSTRAP else auxiliary_filter
        log_est = self.run_filter_many(filter_fn, subject, theta, config, 1000, 7)
        values = np.exp(log_est)
        se = values.std(ddof=1) / math.sqrt(len(values))
        assert abs(values.mean() - math.exp(exact)) < 3 * se

    def test_auxiliary_variance_not_worse_soft(self):
        theta, subject = self.setup_subject()
        boot = self.run_filter_many(
            bootstrap_filter, subject, theta,
            SmcConfig(particles=256, filter_kind=BOOTSTRAP), 1000, 8)
        aux = self.run_filter_many(
            auxiliary_filter, subject, theta,
            SmcConfig(particles=256, first_stage_particles=5, filter_kind=AUXILIARY),
            1000, 9)
        if aux.var(ddof=1) > boot.var(ddof=1):
            warnings.warn(
                "auxiliary filter log-estimate variance "
                f"{aux.var(ddof=1):.4g} exceeded bootstrap {boot.var(ddof=1):.4g}")

    def test_single_observation_matches_direct_monte_carlo(self):
        # With one observation at the time origin the latent total is the
        # known initial volume, so both the filter and a plain Monte Carlo
        # average of the observation density collapse to the same number.
        theta = fixed_phi_one_compartment()
        subject = SimpleNamespace(times=np.array([0.0]), y=np.array([4.1]), n_obs=1)
        est = bootstrap_filter(subject, 50.0, theta,
                               SmcConfig(particles=128, filter_kind=BOOTSTRAP),
                               np.random.default_rng(10))
        mc = np.exp(obs_logdensity(4.1, np.full(10 ** 6, math.log(50.0)),
                                   theta.sigma_eps))
        se = mc.std(ddof=1) / 1000.0
        assert abs(math.exp(est) - mc.mean()) <= 3 * se + 1e-12


class TestDegenerateWeights:
    def test_far_observation_gives_huge_but_finite_log_weight(self):
        # Log-space arithmetic keeps a many-sigma observation finite; the
        # MH layer rejects it through the ratio rather than a degenerate 0.
        theta = fixed_phi_one_compartment(sigma_eps=0.01)
        subject = make_subject([0.0, 1.0], [math.log(50.0), 1e4])
        est = bootstrap_filter(subject, 50.0, theta,
                               SmcConfig(particles=16, filter_kind=BOOTSTRAP),
                               np.random.default_rng(11))
        assert np.isfinite(est) and est < -1e9

    def test_all_minus_inf_weights_return_minus_inf(self):
        # A squared residual that overflows makes every log weight -inf:
        # the filter reports a degenerate step instead of NaN.
        theta = fixed_phi_one_compartment(sigma_eps=0.01)
        subject = make_subject([0.0, 1.0], [math.log(50.0), 1e200])
        for fn, kind in ((bootstrap_filter, BOOTSTRAP), (auxiliary_filter, AUXILIARY)):
            est = fn(subject, 50.0, theta,
                     SmcConfig(particles=16, filter_kind=kind),
                     np.random.default_rng(11))
            assert est == -math.inf

    def test_runaway_growth_rate_degenerates_cleanly(self):
        # beta = e^600 overflows the latent log volume to +inf; the filter
        # must return -inf, never NaN.
        theta = Theta(model_kind=model.ONE_COMPARTMENT, mean_log_beta=600.0,
                      sigma_beta=0.0, gamma=1.0, sigma_eps=0.2)
        subject = make_subject([0.0, 1.0], [4.0, 5.0])
        for fn, kind in ((bootstrap_filter, BOOTSTRAP), (auxiliary_filter, AUXILIARY)):
            est = fn(subject, 50.0, theta,
                     SmcConfig(particles=16, filter_kind=kind),
                     np.random.default_rng(12))
            assert est == -math.inf


class TestDatasetLoglik:
    def small_dataset(self, n_subjects=2):
        theta = Theta(
            model_kind=model.TWO_COMPARTMENT,
            mean_log_beta=math.log(0.8), mean_log_delta=math.log(0.5),
            mean_alpha=0.4, gamma=0.4, tau=0.6, sigma_beta=0.3, sigma_delta=0.3,
            sigma_alpha=0.15, sigma_eps=0.2)
        design = ObservationDesign.shared_times(
            n_subjects, [0.0, 1.0, 2.0, 3.0], 60.0)
        ds = model.simulate_dataset(theta, design, np.random.default_rng(12))
        return theta, ds

    def test_single_subject_equals_subject_estimate(self):
        theta, ds = self.small_dataset(1)
        config = SmcConfig(particles=64, filter_kind=BOOTSTRAP)
        total = dataset_loglik(ds, theta, config, np.random.default_rng(13))
        solo = bootstrap_filter(ds.subjects[0], ds.design.v0[0], theta, config,
                                np.random.default_rng(13).spawn(1)[0])
        assert total.log_value == pytest.approx(solo, rel=1e-12)
        assert total.per_subject[0] == pytest.approx(solo, rel=1e-12)

    def test_duplicated_subject_estimates_exchangeable(self):
        theta, ds = self.small_dataset(1)
        twin = Dataset(
            subjects=(ds.subjects[0],
                      SubjectData("s02", ds.subjects[0].times, ds.subjects[0].y)),
            design=ObservationDesign(2, [ds.design.times[0]] * 2,
                                     np.repeat(ds.design.v0, 2)))
        config = SmcConfig(particles=64, filter_kind=BOOTSTRAP)
        rng = np.random.default_rng(14)
        per = np.array([dataset_loglik(twin, theta, config, r).per_subject
                        for r in rng.spawn(1000)])
        assert scipy.stats.ks_2samp(per[:, 0], per[:, 1]).pvalue > 0.001

    def test_deterministic_theta_gives_exact_sum(self):
        theta = deterministic_two_compartment()
        design = ObservationDesign.shared_times(3, [0.0, 1.0, 2.0], 80.0)
        ds = model.simulate_dataset(theta, design, np.random.default_rng(15))
        config = SmcConfig(particles=8, filter_kind=AUXILIARY)
        est = dataset_loglik(ds, theta, config, np.random.default_rng(16))
        expected = sum(
            TestDeterministicReduction().expected_loglik(theta, s, 80.0)
            for s in ds.subjects)
        assert est.log_value == pytest.approx(expected, rel=1e-10)
        assert est.log_value == pytest.approx(est.per_subject.sum(), rel=1e-12)

    def test_total_distribution_invariant_to_subject_order(self):
        theta, ds = self.small_dataset(2)
        flipped = Dataset(subjects=ds.subjects[::-1],
                          design=ObservationDesign(2, ds.design.times[::-1],
                                                   ds.design.v0[::-1]))
        config = SmcConfig(particles=32, filter_kind=BOOTSTRAP)
        rng = np.random.default_rng(17)
        a = np.array([dataset_loglik(ds, theta, config, r).log_value
                      for r in rng.spawn(400)])
        b = np.array([dataset_loglik(flipped, theta, config, r).log_value
                      for r in rng.spawn(400)])
        assert scipy.stats.ks_2samp(a, b).pvalue > 0.001

    def test_threads_do_not_change_results(self):
        theta, ds = self.small_dataset(3)
        serial = dataset_loglik(ds, theta, SmcConfig(particles=64, threads=1),
                                np.random.default_rng(18))
        threaded = dataset_loglik(ds, theta, SmcConfig(particles=64, threads=4),
                                  np.random.default_rng(18))
        np.testing.assert_array_equal(serial.per_subject, threaded.per_subject)
        assert serial.log_value == threaded.log_value


class TestKalmanOracle:
    def test_zero_diffusion_reduces_to_iid_gaussians(self):
        times = np.array([0.0, 1.0, 2.0, 4.0])
        y = np.array([3.9, 4.2, 4.8, 5.5])
        subject = make_subject(times, y)
        got = kalman_oracle_loglik(subject, 50.0, 0.4, 0.0, 0.3)
        expected = float(obs_logdensity(
            y, math.log(50.0) + 0.4 * (times - times[0]), 0.3).sum())
        assert got == pytest.approx(expected, rel=1e-12)

    def test_flat_likelihood_limit(self):
        subject = make_subject([0.0, 1.0, 2.0], [4.0, 4.5, 5.0])
        sigma = 1e6
        got = kalman_oracle_loglik(subject, 50.0, 0.4, 0.7, sigma)
        assert got == pytest.approx(3 * (-0.5 * math.log(2 * math.pi * sigma ** 2)),
                                    abs=1e-6)

    def test_against_dense_multivariate_normal(self):
        # Joint y covariance: gamma^2 min(t_j, t_k) + sigma_eps^2 on the diagonal.
        times = np.array([0.0, 1.0, 2.5])
        y = np.array([4.0, 4.6, 5.3])
        subject = make_subject(times, y)
        v0, beta, gamma, sigma_eps = 50.0, 0.4, 0.7, 0.3
        got = kalman_oracle_loglik(subject, v0, beta, gamma, sigma_eps)
        mean = math.log(v0) + beta * times
        cov = gamma ** 2 * np.minimum.outer(times, times) + sigma_eps ** 2 * np.eye(3)
        oracle = scipy.stats.multivariate_normal.logpdf(y, mean=mean, cov=cov)
        assert got == pytest.approx(oracle, rel=1e-12)

    def test_input_validation(self):
        subject = make_subject([0.0, 1.0], [4.0, 4.5])
        with pytest.raises(ModelError):
            kalman_oracle_loglik(subject, -1.0, 0.4, 0.5, 0.3)
        with pytest.raises(ModelError):
            kalman_oracle_loglik(subject, 50.0, 0.4, 0.5, 0.0)


class TestLogSumExpSafety:
    def test_weights_spanning_600_nats(self):
        # Very small measurement noise yields log-weights spanning hundreds
        # of nats; the estimate must stay finite.
        theta = fixed_phi_one_compartment(gamma=1.5, sigma_eps=0.05)
        times = np.array([0.0, 1.0, 2.0])
        rng = np.random.default_rng(19)
        paths = model.simulate_log_total_paths(theta, 50.0, times, 1, rng)
        y = paths[0] + 0.05 * rng.standard_normal(3)
        subject = make_subject(times, y)
        est = bootstrap_filter(subject, 50.0, theta,
                               SmcConfig(particles=512, filter_kind=BOOTSTRAP),
                               np.random.default_rng(20))
        assert np.isfinite(est)
