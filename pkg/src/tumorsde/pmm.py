"""Pseudo-marginal Metropolis-Hastings with adaptive random-walk proposals.

The sampler traverses the unconstrained parameter scale. Proposals are
Gaussian and symmetric, so the acceptance ratio reduces to the difference
of log posteriors; the prior term absorbs the reparameterization Jacobian.
The incumbent likelihood estimate is pseudo-marginal state: it is computed
once when a value is accepted and never refreshed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from tumorsde.model import (
    ModelError,
    PriorSpec,
    Theta,
    default_start,
    inverse_reparameterize,
    log_prior_unconstrained,
    param_names,
    reparameterize,
    report_names,
)
from tumorsde.smc import SmcConfig, dataset_loglik


class InitializationError(RuntimeError):
    """The chain could not obtain a finite starting likelihood estimate."""


@dataclass(frozen=True)
class McmcConfig:
    """Chain length, burn-in and proposal adaptation settings.

    ``adapt_scale`` defaults to 2.38^2 / d at run time; before
    ``adapt_start`` draws have been collected the proposal is a diagonal
    Gaussian with per-coordinate scale ``initial_proposal_sd``.
    """

    iterations: int = 20000
    burnin: int = 10000
    adapt_start: int = 500
    adapt_scale: Optional[float] = None
    jitter: float = 1e-6
    initial_theta: Optional[Theta] = None
    initial_proposal_sd: float = 0.05
    init_retries: int = 100

    def __post_init__(self):
        if self.iterations < 1:
            raise ModelError("iterations must be >= 1")
        if not 0 <= self.burnin < self.iterations:
            raise ModelError("burnin must lie in [0, iterations)")
        if self.adapt_start < 2:
            raise ModelError("adapt_start must be >= 2")
        if self.jitter <= 0:
            raise ModelError("jitter must be positive")
        if np.any(np.asarray(self.initial_proposal_sd) <= 0):
            raise ModelError("initial_proposal_sd must be positive")
        if self.init_retries < 1:
            raise ModelError("init_retries must be >= 1")


@dataclass(frozen=True)
class ChainState:
    """One MCMC iteration: current draw plus pseudo-marginal bookkeeping."""

    theta_unconstrained: np.ndarray
    log_prior: float
    log_lik_estimate: float
    accepted: bool


@dataclass(frozen=True)
class Chain:
    """A finished run: one state per iteration plus run metadata."""

    states: tuple[ChainState, ...]
    acceptance_rate: float
    config: McmcConfig
    seed: Optional[int] = None
    model_kind: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))

    def __len__(self):
        return len(self.states)

    def unconstrained_draws(self) -> np.ndarray:
        return np.array([s.theta_unconstrained for s in self.states])

    def constrained_draws(self) -> np.ndarray:
        """Draws on the natural reporting scale (exp of every coordinate)."""
        draws = self.unconstrained_draws()
        return np.exp(draws) if self.model_kind is not None else draws

    def param_names(self) -> tuple[str, ...]:
        if self.model_kind is None:
            d = len(self.states[0].theta_unconstrained)
            return tuple(f"p{i}" for i in range(d))
        return report_names(self.model_kind)

    def log_lik_estimates(self) -> np.ndarray:
        return np.array([s.log_lik_estimate for s in self.states])

    def accepted_flags(self) -> np.ndarray:
        return np.array([s.accepted for s in self.states], dtype=bool)


class AdaptiveProposal:
    """Gaussian random walk whose covariance tracks the chain history.

    The running mean and scatter are updated incrementally (O(d^2) per
    draw); once at least ``adapt_start`` history points exist the proposal
    covariance is ``scale * cov(history) + jitter * I``, before that a
    diagonal Gaussian with the initial per-coordinate scales.
    """

    def __init__(self, dim: int, initial_sd, adapt_start: int,
                 scale: Optional[float] = None, jitter: float = 1e-6):
        self.dim = dim
        self.initial_sd = np.broadcast_to(np.asarray(initial_sd, dtype=float),
                                          (dim,)).copy()
        self.adapt_start = adapt_start
        self.scale = (2.38 ** 2 / dim) if scale is None else scale
        self.jitter = jitter
        self.count = 0
        self._mean = np.zeros(dim)
        self._scatter = np.zeros((dim, dim))

    def update(self, x) -> None:
        x = np.asarray(x, dtype=float)
        self.count += 1
        delta = x - self._mean
        self._mean += delta / self.count
        self._scatter += np.outer(delta, x - self._mean)

    def covariance(self) -> np.ndarray:
        """Running empirical covariance of the history seen so far."""
        if self.count < 2:
            return np.zeros((self.dim, self.dim))
        return self._scatter / (self.count - 1)

    def proposal_covariance(self) -> np.ndarray:
        if self.count < self.adapt_start:
            return np.diag(self.initial_sd ** 2)
        return self.scale * self.covariance() + self.jitter * np.eye(self.dim)

    def propose(self, current, rng) -> np.ndarray:
        current = np.asarray(current, dtype=float)
        z = rng.standard_normal(self.dim)
        if self.count < self.adapt_start:
            return current + self.initial_sd * z
        chol = np.linalg.cholesky(self.proposal_covariance())
        return current + chol @ z


def adaptive_propose(history, current, config: McmcConfig, rng) -> np.ndarray:
    """Functional form of the adaptive proposal, built from a history array."""
    current = np.asarray(current, dtype=float)
    proposal = AdaptiveProposal(
        dim=len(current), initial_sd=config.initial_proposal_sd,
        adapt_start=config.adapt_start, scale=config.adapt_scale,
        jitter=config.jitter)
    for x in np.atleast_2d(np.asarray(history, dtype=float)) if len(history) else []:
        proposal.update(x)
    return proposal.propose(current, rng)


def run_pseudo_marginal_mh(log_prior_fn: Callable[[np.ndarray], float],
                           log_lik_fn: Callable[[np.ndarray, int, np.random.Generator], float],
                           u0, config: McmcConfig, rng,
                           seed: Optional[int] = None,
                           model_kind: Optional[str] = None) -> Chain:
    """Generic pseudo-marginal Metropolis-Hastings loop.

    ``log_lik_fn(u, iteration, rng)`` returns a fresh stochastic estimate
    (or an exact value, making this an ordinary MH sampler). A proposal
    whose prior is -inf is rejected without spending a likelihood
    evaluation; a -inf estimate is always rejected.
    """
    u0 = np.asarray(u0, dtype=float)
    proposal_rng, lik_rng = rng.spawn(2)
    log_prior = log_prior_fn(u0)
    if not np.isfinite(log_prior):
        raise InitializationError("initial value has zero prior density")
    log_lik = -np.inf
    for _ in range(config.init_retries):
        log_lik = log_lik_fn(u0, 0, lik_rng)
        if np.isfinite(log_lik):
            break
    else:
        raise InitializationError(
            f"no finite likelihood estimate at the start after "
            f"{config.init_retries} attempts")

    proposal = AdaptiveProposal(
        dim=len(u0), initial_sd=config.initial_proposal_sd,
        adapt_start=config.adapt_start, scale=config.adapt_scale,
        jitter=config.jitter)
    proposal.update(u0)

    current = u0.copy()
    states = []
    n_accepted = 0
    for r in range(1, config.iterations + 1):
        candidate = proposal.propose(current, proposal_rng)
        cand_prior = log_prior_fn(candidate)
        accepted = False
        if cand_prior > -np.inf:
            cand_lik = log_lik_fn(candidate, r, lik_rng)
            log_ratio = (cand_prior + cand_lik) - (log_prior + log_lik)
            if log_ratio >= 0 or math.log(proposal_rng.uniform()) < log_ratio:
                accepted = True
                current, log_prior, log_lik = candidate, cand_prior, cand_lik
        if accepted:
            n_accepted += 1
        states.append(ChainState(theta_unconstrained=current.copy(),
                                 log_prior=log_prior,
                                 log_lik_estimate=log_lik,
                                 accepted=accepted))
        proposal.update(current)
    return Chain(states=tuple(states),
                 acceptance_rate=n_accepted / config.iterations,
                 config=config, seed=seed, model_kind=model_kind)


def run_pmm(dataset, priors: PriorSpec, smc_config: SmcConfig,
            mcmc_config: McmcConfig, rng, seed: Optional[int] = None) -> Chain:
    """Exact-approximate posterior sampling with particle-filter estimates."""
    if isinstance(rng, (int, np.integer)):
        seed = int(rng) if seed is None else seed
        rng = np.random.default_rng(rng)
    model_kind = priors.model_kind
    start = mcmc_config.initial_theta or default_start(model_kind)
    if start.model_kind != model_kind:
        raise ModelError("initial theta and priors disagree on model kind")
    u0 = reparameterize(start)

    def log_prior_fn(u):
        return log_prior_unconstrained(u, priors, model_kind)

    def log_lik_fn(u, iteration, lik_rng):
        theta = inverse_reparameterize(u, model_kind)
        return dataset_loglik(dataset, theta, smc_config, lik_rng).log_value

    return run_pseudo_marginal_mh(log_prior_fn, log_lik_fn, u0, mcmc_config,
                                  rng, seed=seed, model_kind=model_kind)
