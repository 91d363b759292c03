"""Chain post-processing: convergence, summaries, posterior predictive draws."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from tumorsde.bsl import BslConfig, SummaryLayout, estimate_moments, \
    simulate_summary_batch, summarize_dataset
from tumorsde.model import Dataset, ModelError, inverse_reparameterize
from tumorsde.pmm import Chain


def gelman_rubin(chains) -> np.ndarray | float:
    """Potential scale reduction factor from several equal-length chains.

    ``chains`` has shape (m, n) for one parameter or (m, n, d) for d
    parameters sampled by m chains of length n. Uses the classic
    between/within variance decomposition; identical constant chains give
    the degenerate-limit value sqrt((n-1)/n) and zero within-chain variance
    with distinct means reports +inf rather than raising.
    """
    chains = np.asarray(chains, dtype=float)
    scalar = chains.ndim == 2
    if scalar:
        chains = chains[:, :, None]
    if chains.ndim != 3:
        raise ModelError("chains must have shape (m, n) or (m, n, d)")
    m, n, _ = chains.shape
    if m < 2 or n < 2:
        raise ModelError("need at least 2 chains of length >= 2")
    within = chains.var(axis=1, ddof=1).mean(axis=0)
    between_over_n = chains.mean(axis=1).var(axis=0, ddof=1)
    pooled = (n - 1) / n * within + between_over_n
    limit = math.sqrt((n - 1) / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(pooled / within)
    rhat = np.where(within > 0, rhat,
                    np.where(between_over_n > 0, np.inf, limit))
    return float(rhat[0]) if scalar else rhat


@dataclass(frozen=True)
class ChainSummary:
    """Posterior means and central 95% intervals on the reporting scale."""

    param_names: tuple[str, ...]
    means: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    acceptance_rate: float

    def as_rows(self):
        for k, name in enumerate(self.param_names):
            yield name, self.means[k], self.lower[k], self.upper[k]


def chain_summary(chain: Chain, burnin: int) -> ChainSummary:
    """Post-burnin means and 2.5/97.5 percent quantiles per parameter.

    Quantiles interpolate linearly between order statistics (position
    p*(n-1)+1), applied to the constrained draws.
    """
    if not 0 <= burnin < len(chain):
        raise ModelError(f"burnin {burnin} leaves no draws in a chain of length {len(chain)}")
    draws = chain.constrained_draws()[burnin:]
    quantiles = np.quantile(draws, [0.025, 0.975], axis=0, method="linear")
    accepted = chain.accepted_flags()[burnin:]
    return ChainSummary(
        param_names=chain.param_names(),
        means=draws.mean(axis=0),
        lower=quantiles[0],
        upper=quantiles[1],
        acceptance_rate=float(accepted.mean()),
    )


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Cholesky factor, falling back to an eigenvalue-clipped square root."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        eigvals, eigvecs = np.linalg.eigh(cov)
        return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def posterior_predictive_draws(chain: Chain, dataset: Dataset,
                               bsl_config: BslConfig, rng,
                               burnin: int = 0, thin: int = 1):
    """Summary-space posterior predictive sample.

    For every retained post-burnin draw, synthetic datasets are simulated on
    the observed layout, their summary moments estimated, and one summary
    vector drawn from the fitted Gaussian (the plug-in form). Returns the
    draw matrix and the observed summary vector for overlay.
    """
    if thin < 1:
        raise ModelError("thin must be >= 1")
    if chain.model_kind is None:
        raise ModelError("posterior predictive draws need a model chain")
    layout = SummaryLayout.from_dataset(dataset, chain.model_kind)
    s_obs = summarize_dataset(dataset, chain.model_kind)
    retained = chain.unconstrained_draws()[burnin::thin]
    if len(retained) == 0:
        raise ModelError("no draws retained after burnin and thinning")
    out = np.empty((len(retained), layout.dimension))
    for row, u in enumerate(retained):
        theta = inverse_reparameterize(u, chain.model_kind)
        summaries = simulate_summary_batch(theta, layout, bsl_config.simulations, rng)
        mu_hat, sigma_hat = estimate_moments(summaries)
        out[row] = mu_hat + _psd_factor(sigma_hat) @ rng.standard_normal(len(s_obs))
    return out, s_obs


def normal_qq_points(samples) -> tuple[np.ndarray, np.ndarray]:
    """Standard-normal quantiles at plotting positions (i - 0.5)/n paired
    with the ordered sample, ready to plot."""
    samples = np.asarray(samples, dtype=float)
    n = len(samples)
    if n < 3:
        raise ModelError("need at least 3 samples for a qq plot")
    positions = (np.arange(1, n + 1) - 0.5) / n
    return ndtri(positions), np.sort(samples)


def effective_sample_size(x) -> float:
    """Autocorrelation-based effective sample size of a scalar chain.

    Sums autocorrelations by Geyer's initial-positive-sequence rule; a
    constant chain reports its full length.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4:
        return float(n)
    centered = x - x.mean()
    var = centered @ centered / n
    if var == 0:
        return float(n)
    size = 1 << (2 * n - 1).bit_length()
    spectrum = np.fft.rfft(centered, size)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), size)[:n].real / n
    rho = acov / acov[0]
    # integrated autocorrelation time 1 + 2 sum rho_k, summed in Geyer pairs
    # (rho_2m + rho_2m+1) while they stay positive
    tau = -1.0
    for lag in range(0, n - 1, 2):
        pair = rho[lag] + (rho[lag + 1] if lag + 1 < n else 0.0)
        if pair <= 0:
            break
        tau += 2.0 * pair
    ess = n / max(tau, 1.0 / n)
    return float(min(ess, n))
