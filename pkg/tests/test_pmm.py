"""Adaptive proposals and the pseudo-marginal MH loop on stub targets."""

import math

import numpy as np
import pytest
import scipy.stats

from tumorsde import model
from tumorsde.model import ObservationDesign, Theta, default_priors
from tumorsde.pmm import (
    AdaptiveProposal,
    Chain,
    ChainState,
    InitializationError,
    McmcConfig,
    adaptive_propose,
    run_pmm,
    run_pseudo_marginal_mh,
)
from tumorsde.smc import SmcConfig


def flat_prior(u):
    return 0.0


def box_prior(u, half_width=3.0):
    return 0.0 if np.all(np.abs(u) <= half_width) else -math.inf


class TestAdaptiveProposal:
    def test_empty_history_uses_initial_diagonal(self):
        config = McmcConfig(iterations=10, burnin=0, adapt_start=5,
                            initial_proposal_sd=0.25)
        rng = np.random.default_rng(0)
        draws = np.array([adaptive_propose([], np.zeros(2), config,
                                           np.random.default_rng(s))
                          for s in range(4000)])
        assert abs(draws.std(axis=0) - 0.25).max() < 0.02
        del rng

    def test_identical_history_gives_jitter_covariance(self):
        proposal = AdaptiveProposal(dim=2, initial_sd=0.1, adapt_start=5,
                                    scale=1.0, jitter=1e-4)
        for _ in range(10):
            proposal.update(np.array([1.0, -2.0]))
        np.testing.assert_allclose(proposal.covariance(), np.zeros((2, 2)), atol=1e-15)
        np.testing.assert_allclose(proposal.proposal_covariance(),
                                   1e-4 * np.eye(2), atol=1e-18)

    def test_incremental_matches_batch_covariance(self):
        rng = np.random.default_rng(1)
        cov = np.array([[2.0, 0.6, -0.2], [0.6, 1.0, 0.3], [-0.2, 0.3, 0.5]])
        sample = rng.multivariate_normal(np.array([1.0, -1.0, 0.5]), cov, size=10 ** 4)
        proposal = AdaptiveProposal(dim=3, initial_sd=0.1, adapt_start=5)
        for x in sample:
            proposal.update(x)
        batch = np.cov(sample, rowvar=False)
        np.testing.assert_allclose(proposal.covariance(), batch, atol=1e-8)
        assert np.linalg.norm(proposal.covariance() - cov) < 0.05 * np.linalg.norm(cov)

    def test_adaptation_kicks_in_at_threshold(self):
        proposal = AdaptiveProposal(dim=1, initial_sd=7.0, adapt_start=3,
                                    scale=1.0, jitter=1e-12)
        proposal.update([0.0])
        proposal.update([1.0])
        assert proposal.proposal_covariance()[0, 0] == pytest.approx(49.0)
        proposal.update([2.0])
        assert proposal.proposal_covariance()[0, 0] == pytest.approx(1.0, rel=1e-6)


class TestMhLoopStubs:
    def test_flat_target_in_box_accepts_every_inside_proposal(self):
        config = McmcConfig(iterations=2000, burnin=0, adapt_start=10 ** 9,
                            initial_proposal_sd=0.5)
        chain = run_pseudo_marginal_mh(
            box_prior, lambda u, r, rng: 0.0, np.zeros(2), config,
            np.random.default_rng(2))
        draws = chain.unconstrained_draws()
        # every rejection must coincide with a (previous-state) repeat caused
        # by an out-of-box proposal; inside proposals always accept
        accepted = chain.accepted_flags()
        assert np.all(np.abs(draws) <= 3.0)
        assert 0.5 < accepted.mean() <= 1.0
        repeats = np.all(draws[1:] == draws[:-1], axis=1)
        assert np.array_equal(repeats, ~accepted[1:])

    def test_conjugate_gaussian_posterior_mean(self):
        # prior N(0, I), likelihood N(s_obs; u, I) -> posterior N(s_obs/2, I/2)
        s_obs = np.array([1.0, -1.0])

        def log_prior(u):
            return float(-0.5 * u @ u)

        def log_lik(u, r, rng):
            return float(-0.5 * (s_obs - u) @ (s_obs - u))

        config = McmcConfig(iterations=20000, burnin=2000, adapt_start=200,
                            initial_proposal_sd=0.8)
        chain = run_pseudo_marginal_mh(log_prior, log_lik, np.zeros(2), config,
                                       np.random.default_rng(3))
        draws = chain.unconstrained_draws()[config.burnin:]
        from tumorsde.diagnostics import effective_sample_size
        for k in range(2):
            ess = effective_sample_size(draws[:, k])
            se = draws[:, k].std(ddof=1) / math.sqrt(ess)
            assert abs(draws[:, k].mean() - s_obs[k] / 2.0) < 3 * se

    def test_translation_invariance_of_acceptances(self):
        def make_lik(shift):
            def log_lik(u, r, rng):
                return float(-0.5 * u @ u) + shift
            return log_lik

        config = McmcConfig(iterations=500, burnin=0, adapt_start=50,
                            initial_proposal_sd=0.5)
        flags = []
        for shift in (0.0, 137.5):
            chain = run_pseudo_marginal_mh(flat_prior, make_lik(shift),
                                           np.zeros(2), config,
                                           np.random.default_rng(4))
            flags.append(chain.accepted_flags())
        np.testing.assert_array_equal(flags[0], flags[1])

    def test_incumbent_estimate_immutable_between_acceptances(self):
        def noisy_lik(u, r, rng):
            return float(-0.5 * u @ u + 0.5 * rng.standard_normal())

        config = McmcConfig(iterations=800, burnin=0, adapt_start=100,
                            initial_proposal_sd=1.5)
        chain = run_pseudo_marginal_mh(flat_prior, noisy_lik, np.zeros(2), config,
                                       np.random.default_rng(5))
        lls = chain.log_lik_estimates()
        accepted = chain.accepted_flags()
        assert not accepted.all() and accepted.any()
        same = lls[1:] == lls[:-1]
        np.testing.assert_array_equal(same, ~accepted[1:])

    def test_minus_inf_proposal_estimate_always_rejected(self):
        def sometimes_degenerate(u, r, rng):
            return -math.inf if np.any(u > 0.3) else 0.0

        config = McmcConfig(iterations=500, burnin=0, adapt_start=50,
                            initial_proposal_sd=0.5)
        chain = run_pseudo_marginal_mh(flat_prior, sometimes_degenerate,
                                       np.array([-1.0, -1.0]), config,
                                       np.random.default_rng(6))
        draws = chain.unconstrained_draws()
        assert np.all(draws <= 0.3)
        assert np.all(np.isfinite(chain.log_lik_estimates()))

    def test_discretized_toy_target_occupancy(self):
        # Exact standard normal likelihood: an ordinary MH sampler whose
        # bin occupancies must match the target (chi-square over 8 bins).
        def log_lik(u, r, rng):
            return float(-0.5 * u @ u)

        config = McmcConfig(iterations=10 ** 5, burnin=5000, adapt_start=200,
                            initial_proposal_sd=1.0)
        chain = run_pseudo_marginal_mh(flat_prior, log_lik, np.zeros(1), config,
                                       np.random.default_rng(7))
        draws = chain.unconstrained_draws()[config.burnin::25, 0]
        edges = scipy.stats.norm.ppf(np.linspace(0.0, 1.0, 9))
        counts, _ = np.histogram(draws, bins=edges)
        stat = ((counts - len(draws) / 8.0) ** 2 / (len(draws) / 8.0)).sum()
        # 0.9999 quantile of chi2(7); thinned draws are nearly independent
        assert stat < scipy.stats.chi2.ppf(0.9999, df=7)

    def test_initialization_failure_raises(self):
        config = McmcConfig(iterations=10, burnin=0, init_retries=5)
        with pytest.raises(InitializationError):
            run_pseudo_marginal_mh(flat_prior, lambda u, r, rng: -math.inf,
                                   np.zeros(2), config, np.random.default_rng(8))
        with pytest.raises(InitializationError):
            run_pseudo_marginal_mh(lambda u: -math.inf, lambda u, r, rng: 0.0,
                                   np.zeros(2), config, np.random.default_rng(9))

    def test_chain_bookkeeping(self):
        config = McmcConfig(iterations=100, burnin=10, adapt_start=20,
                            initial_proposal_sd=0.5)
        chain = run_pseudo_marginal_mh(flat_prior,
                                       lambda u, r, rng: float(-0.5 * u @ u),
                                       np.zeros(2), config,
                                       np.random.default_rng(10), seed=42)
        assert len(chain) == 100
        assert chain.seed == 42
        assert chain.acceptance_rate == pytest.approx(
            chain.accepted_flags().mean())


class TestRunPmm:
    def small_problem(self):
        theta = Theta(
            model_kind=model.TWO_COMPARTMENT,
            mean_log_beta=math.log(0.9), mean_log_delta=math.log(0.6),
            mean_alpha=0.4, gamma=0.5, tau=0.7, sigma_beta=0.3,
            sigma_delta=0.3, sigma_alpha=0.15, sigma_eps=0.2)
        design = ObservationDesign.shared_times(3, [0.0, 0.5, 1.0, 1.5, 2.0], 60.0)
        dataset = model.simulate_dataset(theta, design, np.random.default_rng(11))
        return dataset

    def test_smoke_two_compartment(self):
        dataset = self.small_problem()
        priors = default_priors(model.TWO_COMPARTMENT)
        chain = run_pmm(dataset, priors, SmcConfig(particles=60),
                        McmcConfig(iterations=60, burnin=10, adapt_start=30),
                        np.random.default_rng(12))
        assert len(chain) == 60
        assert chain.model_kind == model.TWO_COMPARTMENT
        assert chain.param_names()[0] == "beta_bar"
        assert np.isfinite(chain.log_lik_estimates()).all()
        assert 0.0 <= chain.acceptance_rate <= 1.0

    def test_seed_int_accepted_and_reproducible(self):
        dataset = self.small_problem()
        priors = default_priors(model.TWO_COMPARTMENT)
        cfg = McmcConfig(iterations=30, burnin=5, adapt_start=15)
        smc = SmcConfig(particles=40)
        a = run_pmm(dataset, priors, smc, cfg, 777)
        b = run_pmm(dataset, priors, smc, cfg, 777)
        assert a.seed == 777
        np.testing.assert_array_equal(a.unconstrained_draws(), b.unconstrained_draws())

    def test_one_compartment_smoke(self):
        theta = Theta(model_kind=model.ONE_COMPARTMENT, mean_log_beta=math.log(0.8),
                      sigma_beta=0.3, gamma=0.5, sigma_eps=0.2)
        design = ObservationDesign.shared_times(2, [0.0, 1.0, 2.0], 50.0)
        dataset = model.simulate_dataset(theta, design, np.random.default_rng(13))
        priors = default_priors(model.ONE_COMPARTMENT)
        chain = run_pmm(dataset, priors, SmcConfig(particles=40),
                        McmcConfig(iterations=40, burnin=10, adapt_start=20),
                        np.random.default_rng(14))
        assert chain.constrained_draws().shape == (40, 4)
