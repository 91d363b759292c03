"""Sequential Monte Carlo likelihood estimation for the mixed-effects models.

Both filters draw per-particle random effects, propagate the latent
compartments with the exact transition from :mod:`tumorsde.model`, and
accumulate the likelihood factors in log space. The bootstrap filter weights
blind propagations by the observation density and resamples at every
observation time. The auxiliary filter adds a look-ahead stage: each particle
is trial-propagated a few times, the mean of the trial log total volumes
forms a first-stage summary whose observation density pre-selects promising
ancestors, and the second-stage weights correct the selection so the
estimate stays unbiased on the natural scale.

All per-particle state lives in log volumes, so weight computations survive
the huge dynamic range that exponential growth produces.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from tumorsde.model import (
    ModelError,
    SubjectData,
    Theta,
    draw_random_effects_batch,
    initial_log_compartments,
    obs_logdensity,
    step_log_compartments,
)

BOOTSTRAP = "bootstrap"
AUXILIARY = "auxiliary"


@dataclass(frozen=True)
class SmcConfig:
    """Particle filter settings.

    ``particles`` is the number of particles per subject; the auxiliary
    filter additionally trial-propagates ``first_stage_particles`` copies of
    each particle to build its look-ahead summary. ``threads`` controls how
    many subjects are filtered concurrently (streams are pre-split, so the
    result is identical for every thread count).
    """

    particles: int = 2000
    first_stage_particles: int = 5
    filter_kind: str = AUXILIARY
    threads: int = 1

    def __post_init__(self):
        if self.particles < 2:
            raise ModelError("particles must be >= 2")
        if self.first_stage_particles < 1:
            raise ModelError("first_stage_particles must be >= 1")
        if self.filter_kind not in (BOOTSTRAP, AUXILIARY):
            raise ModelError(f"unknown filter kind: {self.filter_kind!r}")
        if self.threads < 1:
            raise ModelError("threads must be >= 1")


@dataclass(frozen=True)
class LikelihoodEstimate:
    """Unbiased stochastic log likelihood, with per-subject contributions."""

    log_value: float
    per_subject: np.ndarray = field(default_factory=lambda: np.array([]))

    def __post_init__(self):
        object.__setattr__(self, "per_subject", np.asarray(self.per_subject, dtype=float))


def stratified_resample(weights, rng) -> np.ndarray:
    """Stratified resampling: a randomly shifted uniform grid of lookup
    points, one per stratum, mapped through the inverse weight CDF.

    The shared random origin makes the offspring count of every index
    deterministically within one of its expected count ``n * w`` while
    keeping the expectation exact, so filter unbiasedness is preserved.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or len(w) < 1:
        raise ModelError("weights must be a nonempty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ModelError("weights must be finite and nonnegative")
    total = w.sum()
    if abs(total - 1.0) > 1e-10:
        raise ModelError(f"weights must sum to 1, got {total!r}")
    n = len(w)
    u = (np.arange(n) + rng.uniform()) / n
    cuts = np.cumsum(w)
    cuts[-1] = max(cuts[-1], 1.0)
    return np.minimum(np.searchsorted(cuts, u, side="right"), n - 1)


def _subject_deltas(times) -> np.ndarray:
    """Time gaps between observations; the first entry is zero because the
    state at the first sampling time is the initial split."""
    dts = np.empty(len(times))
    dts[0] = 0.0
    dts[1:] = np.diff(times)
    return dts


def bootstrap_filter(subject: SubjectData, v0: float, theta: Theta,
                     config: SmcConfig, rng) -> float:
    """Bootstrap-filter log likelihood estimate for one subject.

    Returns -inf when every particle weight underflows at some step, which
    the MCMC layer treats as a rejection.
    """
    n_particles = config.particles
    two = theta.is_two_compartment
    alpha, beta, delta = draw_random_effects_batch(theta, n_particles, rng)
    log_vs, log_vk = initial_log_compartments(alpha, v0, two)
    gamma, tau = theta.gamma, (theta.tau if two else 0.0)
    dts = _subject_deltas(subject.times)

    log_lik = 0.0
    for j in range(subject.n_obs):
        if dts[j] > 0:
            log_vs, log_vk = step_log_compartments(
                log_vs, log_vk, beta, delta, gamma, tau, dts[j], rng, two)
        log_w = obs_logdensity(subject.y[j], np.logaddexp(log_vs, log_vk),
                               theta.sigma_eps)
        log_sum = logsumexp(log_w)
        if not np.isfinite(log_sum):
            return -np.inf
        log_lik += log_sum - math.log(n_particles)
        w = np.exp(log_w - log_sum)
        idx = stratified_resample(w / w.sum(), rng)
        log_vs, log_vk = log_vs[idx], log_vk[idx]
        beta, delta = beta[idx], delta[idx]
    return log_lik


def auxiliary_filter(subject: SubjectData, v0: float, theta: Theta,
                     config: SmcConfig, rng) -> float:
    """Auxiliary-particle-filter log likelihood estimate for one subject.

    The first-stage summary of a particle is the mean of the log total
    volumes of its trial propagations. Resampled ancestor indices select the
    two compartments, the attached random effects and the ancestor's
    first-stage summary jointly; the second-stage weight divides by the
    observation density at that selected summary.
    """
    n_particles = config.particles
    n_trial = config.first_stage_particles
    two = theta.is_two_compartment
    alpha, beta, delta = draw_random_effects_batch(theta, n_particles, rng)
    log_vs, log_vk = initial_log_compartments(alpha, v0, two)
    gamma, tau = theta.gamma, (theta.tau if two else 0.0)
    dts = _subject_deltas(subject.times)
    log_wtilde = np.full(n_particles, -math.log(n_particles))

    log_lik = 0.0
    for j in range(subject.n_obs):
        dt = dts[j]
        if dt > 0:
            sqrt_dt = math.sqrt(dt)
            trial_vs = (log_vs[:, None] + beta[:, None] * dt
                        + gamma * sqrt_dt * rng.standard_normal((n_particles, n_trial)))
            if two:
                trial_vk = (log_vk[:, None] - delta[:, None] * dt
                            + tau * sqrt_dt * rng.standard_normal((n_particles, n_trial)))
                trial_totals = np.logaddexp(trial_vs, trial_vk)
            else:
                trial_totals = trial_vs
            x_bar = trial_totals.mean(axis=1)
        else:
            x_bar = np.logaddexp(log_vs, log_vk)

        log_omega = obs_logdensity(subject.y[j], x_bar, theta.sigma_eps) + log_wtilde
        log_sum_omega = logsumexp(log_omega)
        if not np.isfinite(log_sum_omega):
            return -np.inf
        omega = np.exp(log_omega - log_sum_omega)
        idx = stratified_resample(omega / omega.sum(), rng)
        log_vs, log_vk = log_vs[idx], log_vk[idx]
        beta, delta = beta[idx], delta[idx]
        x_bar_sel = x_bar[idx]

        if dt > 0:
            log_vs, log_vk = step_log_compartments(
                log_vs, log_vk, beta, delta, gamma, tau, dt, rng, two)
        log_x = np.logaddexp(log_vs, log_vk)
        with np.errstate(invalid="ignore"):  # -inf minus -inf on degenerate steps
            log_w = (obs_logdensity(subject.y[j], log_x, theta.sigma_eps)
                     - obs_logdensity(subject.y[j], x_bar_sel, theta.sigma_eps))
        log_sum_w = logsumexp(log_w)
        if not np.isfinite(log_sum_w):
            return -np.inf
        log_lik += log_sum_w - math.log(n_particles) + log_sum_omega
        log_wtilde = log_w - log_sum_w
    return log_lik


_FILTERS = {BOOTSTRAP: bootstrap_filter, AUXILIARY: auxiliary_filter}


def subject_loglik(subject: SubjectData, v0: float, theta: Theta,
                   config: SmcConfig, rng) -> float:
    """Dispatch to the configured filter."""
    return _FILTERS[config.filter_kind](subject, v0, theta, config, rng)


def dataset_loglik(dataset, theta: Theta, config: SmcConfig, rng) -> LikelihoodEstimate:
    """Sum of per-subject log likelihood estimates over a dataset.

    Subjects use independent sub-streams pre-split from ``rng`` by subject
    index, so the result does not depend on evaluation order or thread
    count. Any degenerate subject makes the total -inf.
    """
    rngs = rng.spawn(dataset.n_subjects)
    jobs = [(dataset.subjects[i], dataset.design.v0[i], rngs[i])
            for i in range(dataset.n_subjects)]
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            per_subject = list(pool.map(
                lambda job: subject_loglik(job[0], job[1], theta, config, job[2]),
                jobs))
    else:
        per_subject = [subject_loglik(s, v0, theta, config, r) for s, v0, r in jobs]
    per_subject = np.asarray(per_subject)
    total = float(per_subject.sum()) if np.all(np.isfinite(per_subject)) else -np.inf
    return LikelihoodEstimate(log_value=total, per_subject=per_subject)


def kalman_oracle_loglik(subject: SubjectData, v0: float, beta: float,
                         gamma: float, sigma_eps: float) -> float:
    """Exact log likelihood for the one-compartment model with fixed growth rate.

    Conditional on the random effect, the log volume is linear-Gaussian:
    x_j = x_{j-1} + beta dt_j + gamma sqrt(dt_j) xi. The state at the first
    sampling time is deterministic (log v0), so this is a plain scalar
    Kalman prediction-update recursion. Used as a test oracle for the
    particle filters.
    """
    if not v0 > 0:
        raise ModelError(f"v0 must be positive, got {v0}")
    if not sigma_eps > 0:
        raise ModelError(f"sigma_eps must be > 0, got {sigma_eps}")
    if gamma < 0:
        raise ModelError(f"gamma must be >= 0, got {gamma}")
    dts = _subject_deltas(subject.times)
    obs_var = sigma_eps * sigma_eps
    mean, var = math.log(v0), 0.0
    log_lik = 0.0
    for j in range(subject.n_obs):
        mean += beta * dts[j]
        var += gamma * gamma * dts[j]
        innov_var = var + obs_var
        resid = subject.y[j] - mean
        log_lik += -0.5 * math.log(2 * math.pi * innov_var) - resid ** 2 / (2 * innov_var)
        gain = var / innov_var
        mean += gain * resid
        var *= 1.0 - gain
    return log_lik
