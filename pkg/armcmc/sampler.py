"""Metropolis-Hastings kernel with the variable jump proposal, and the minimum
sample counts that make a chain precise and reliable enough."""
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import linalg, stats
from scipy.special import logsumexp

from .core import PosteriorEnsemble, as_param_vector
from .exceptions import (ConvergenceError, ParameterError, ProposalError,
                         UnreachableReliabilityError, ZeroDensityError)

Branch = Enum("Branch", "previous_posterior gaussian", module=__name__)

# relative bandwidth floor of the previous-posterior density, in units of the Gaussian scale
KDE_BANDWIDTH_FLOOR = 1e-3

# candidates evaluated against the KDE support per block
KDE_CHUNK = 1024


@dataclass(frozen=True)
class PrecisionReliability:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ParameterError(f"precision must be in (0,1], got {self.epsilon}")
        if self.delta >= 1:
            raise UnreachableReliabilityError(f"unreachable reliability {self.delta}, must be below 1")
        if self.delta < 0:
            raise ParameterError(f"reliability must be in [0,1), got {self.delta}")


def _sample_bound(epsilon: float, denominator: float) -> float:
    return math.log(2.0 / denominator) / (2.0 * epsilon**2)


def chernoff_min_samples(pr: PrecisionReliability) -> int:
    """Smallest k with (1/(2 eps^2)) ln(2/(1-delta)) <= k"""
    return max(1, math.ceil(_sample_bound(pr.epsilon, 1.0 - pr.delta)))


def armcmc_bound(pr: PrecisionReliability, lambda_t: float, k: float) -> float:
    """Right-hand side of the implicit sample-count relation at k"""
    eps2 = pr.epsilon**2
    denominator = lambda_t * (1.0 - pr.delta) + 2.0 * (1.0 - lambda_t) * math.exp(-2.0 * eps2 * (1.0 - lambda_t) * k)
    return _sample_bound(pr.epsilon, denominator)


def armcmc_min_samples(pr: PrecisionReliability, lambda_t: float,
                       damping: float = 0.5, tol: float = 0.5, max_iter: int = 10000) -> int:
    """Minimum chain length when a fraction lambda_t of proposals reuses the previous posterior.

    Solves k = armcmc_bound(k) by damped fixed-point iteration started from the Chernoff
    count. lambda_t = 0 degenerates to an identity and lambda_t = 1 reduces to the
    Chernoff count, both return chernoff_min_samples().

    Raises:
        ConvergenceError: no convergence within max_iter iterations, last iterate attached
    """
    if not 0 <= lambda_t <= 1:
        raise ParameterError(f"forgetting factor must be in [0,1], got {lambda_t}")
    if lambda_t == 0 or lambda_t == 1:
        return chernoff_min_samples(pr)

    k = float(chernoff_min_samples(pr))
    for _ in range(max_iter):
        k_next = k + damping * (armcmc_bound(pr, lambda_t, k) - k)
        if abs(k_next - k) < tol:
            return max(1, math.ceil(k_next))
        k = k_next
    raise ConvergenceError(f"sample count for lambda={lambda_t} did not converge", last_iterate=k, iterations=max_iter)


def acceptance_probability(log_post_cnd: float, log_post_prev: float,
                           log_q_prev_given_cnd: float, log_q_cnd_given_prev: float) -> float:
    """min(1, P(cnd) q(prev|cnd) / (P(prev) q(cnd|prev))), computed in log space"""
    if log_post_prev == -math.inf:
        raise ZeroDensityError("chain at zero-density state")
    if math.isnan(log_post_cnd) or math.isnan(log_post_prev) or \
            math.isnan(log_q_prev_given_cnd) or math.isnan(log_q_cnd_given_prev):
        raise ProposalError("NaN in acceptance ratio")
    if log_post_cnd == -math.inf or log_q_prev_given_cnd == -math.inf:
        return 0.0
    if log_q_cnd_given_prev == -math.inf:
        return 1.0
    log_ratio = (log_post_cnd - log_q_cnd_given_prev) - (log_post_prev - log_q_prev_given_cnd)
    if math.isnan(log_ratio):
        raise ProposalError("undefined acceptance ratio")
    if log_ratio >= 0:
        return 1.0
    return math.exp(log_ratio)


@dataclass(frozen=True)
class ProposalSpec:
    """Variable jump distribution: with probability lambda_t a draw from the previous
    posterior, otherwise a Gaussian around gaussian_center.

    The Gaussian branch has independent components with gaussian_scale, or the full
    gaussian_cov if one is given. With smoothed set, the previous-posterior density uses
    full-covariance kernels and its draws carry kernel noise, so that draws follow the
    density used in the acceptance ratio; otherwise draws are plain resamples.

    The proposal does not depend on the current chain state.
    """
    lambda_t: float
    prev_ensemble: Optional[PosteriorEnsemble]
    gaussian_center: np.ndarray
    gaussian_scale: np.ndarray
    kde_max_points: int = 512
    gaussian_cov: Optional[np.ndarray] = None
    smoothed: bool = False

    def __post_init__(self):
        if not 0 <= self.lambda_t <= 1:
            raise ProposalError(f"forgetting factor must be in [0,1], got {self.lambda_t}")
        if self.lambda_t > 0 and self.prev_ensemble is None:
            raise ProposalError("a positive forgetting factor needs a previous ensemble")
        center = as_param_vector(self.gaussian_center)
        scale = as_param_vector(self.gaussian_scale, dim=center.shape[0])
        if np.any(scale <= 0):
            raise ProposalError(f"Gaussian scale must be positive, got {scale}")
        if self.prev_ensemble is not None and self.prev_ensemble.dim != center.shape[0]:
            raise ProposalError("previous ensemble and Gaussian center differ in dimension")
        if self.kde_max_points < 1:
            raise ProposalError("kde_max_points must be positive")
        if self.gaussian_cov is not None:
            cov = np.array(self.gaussian_cov, dtype=float)
            if cov.shape != (center.shape[0],) * 2 or not np.allclose(cov, cov.T):
                raise ProposalError(f"Gaussian covariance must be a symmetric {center.shape[0]}x{center.shape[0]} matrix")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as exc:
                raise ProposalError("Gaussian covariance is not positive definite", exc)
            cov.flags.writeable = False
            object.__setattr__(self, "gaussian_cov", cov)
        center.flags.writeable = False
        scale.flags.writeable = False
        object.__setattr__(self, "gaussian_center", center)
        object.__setattr__(self, "gaussian_scale", scale)

    @property
    def dim(self) -> int:
        return self.gaussian_center.shape[0]

    @property
    def support(self) -> np.ndarray:
        """Post-burn-in samples of the previous ensemble"""
        if self.prev_ensemble is None:
            return np.empty((0, self.dim))
        return self.prev_ensemble.post_burn_in

    @cached_property
    def kde_points(self) -> np.ndarray:
        support = self.support
        if len(support) <= self.kde_max_points:
            return support
        idx = np.round(np.linspace(0, len(support) - 1, self.kde_max_points)).astype(int)
        return support[idx]

    @cached_property
    def kde_bandwidth(self) -> np.ndarray:
        """Per-component Silverman bandwidth, floored at a fraction of the Gaussian scale"""
        points = self.kde_points
        n, d = points.shape
        floor = KDE_BANDWIDTH_FLOOR * self.gaussian_scale
        if n < 2:
            return floor
        return np.maximum(_silverman_factor(n, d) * points.std(axis=0, ddof=1), floor)

    @cached_property
    def kde_kernel_chol(self) -> np.ndarray:
        """Lower Cholesky factor of the kernel covariance.

        Diagonal with kde_bandwidth, or for a smoothed proposal the Silverman-scaled sample
        covariance of the support plus the squared bandwidth floor.
        """
        if not self.smoothed:
            return np.diag(self.kde_bandwidth)
        points = self.kde_points
        n, d = points.shape
        cov = np.diag((KDE_BANDWIDTH_FLOOR * self.gaussian_scale)**2)
        if n >= 2:
            cov = cov + _silverman_factor(n, d)**2 * np.atleast_2d(np.cov(points, rowvar=False))
        return np.linalg.cholesky(cov)

    @cached_property
    def gaussian_chol(self) -> np.ndarray:
        if self.gaussian_cov is None:
            return np.diag(self.gaussian_scale)
        return np.linalg.cholesky(self.gaussian_cov)

    def kde_log_density(self, thetas: np.ndarray) -> np.ndarray:
        points = self.kde_points
        chol = self.kde_kernel_chol
        norm_const = _log_norm_const(chol) + math.log(len(points))
        out = np.empty(thetas.shape[0])
        for start in range(0, thetas.shape[0], KDE_CHUNK):
            chunk = thetas[start:start + KDE_CHUNK]
            offsets = (chunk[:, None, :] - points[None, :, :]).reshape(-1, self.dim)
            whitened = linalg.solve_triangular(chol, offsets.T, lower=True)
            log_kernels = -0.5 * np.sum(whitened**2, axis=0).reshape(len(chunk), len(points))
            out[start:start + KDE_CHUNK] = logsumexp(log_kernels, axis=1) - norm_const
        return out

    def gaussian_log_density(self, thetas: np.ndarray) -> np.ndarray:
        if self.gaussian_cov is None:
            return stats.norm.logpdf(thetas, loc=self.gaussian_center, scale=self.gaussian_scale).sum(axis=1)
        whitened = linalg.solve_triangular(self.gaussian_chol, (thetas - self.gaussian_center).T, lower=True)
        return -0.5 * np.sum(whitened**2, axis=0) - _log_norm_const(self.gaussian_chol)

    def gaussian_draws(self, rng: np.random.Generator, k: int) -> np.ndarray:
        return self.gaussian_center + rng.standard_normal((k, self.dim)) @ self.gaussian_chol.T

    def previous_draws(self, rng: np.random.Generator, k: int) -> np.ndarray:
        if not self.smoothed:
            support = self.support
            return support[rng.integers(len(support), size=k)]
        points = self.kde_points
        return points[rng.integers(len(points), size=k)] + rng.standard_normal((k, self.dim)) @ self.kde_kernel_chol.T


def _silverman_factor(n: int, d: int) -> float:
    return (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))


def _log_norm_const(chol: np.ndarray) -> float:
    """log of (2 pi)^(d/2) |L|"""
    return float(np.log(np.diag(chol)).sum() + 0.5 * chol.shape[0] * math.log(2 * math.pi))


def variable_jump_sample(spec: ProposalSpec, rng: np.random.Generator) -> Tuple[np.ndarray, Branch]:
    """Draws one candidate. Returns (theta, branch)."""
    lambda_k = rng.uniform()
    if spec.lambda_t > 0 and lambda_k <= spec.lambda_t:
        return spec.previous_draws(rng, 1)[0].copy(), Branch.previous_posterior
    return spec.gaussian_draws(rng, 1)[0], Branch.gaussian


def variable_jump_sample_many(spec: ProposalSpec, rng: np.random.Generator, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Draws k candidates at once. Returns (thetas (k,d), mask of previous-posterior draws)."""
    lambda_k = rng.uniform(size=k)
    gaussian = spec.gaussian_draws(rng, k)
    if spec.lambda_t == 0:
        return gaussian, np.zeros(k, dtype=bool)
    previous = lambda_k <= spec.lambda_t
    return np.where(previous[:, None], spec.previous_draws(rng, k), gaussian), previous


def variable_jump_log_density_many(thetas, spec: ProposalSpec) -> np.ndarray:
    """Log-density of the mixture lambda*KDE(previous) + (1-lambda)*N(center, scale) at each row"""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if spec.lambda_t == 0:
        return spec.gaussian_log_density(thetas)
    log_kde = spec.kde_log_density(thetas)
    if spec.lambda_t == 1:
        return log_kde
    return np.logaddexp(math.log(spec.lambda_t) + log_kde,
                        math.log1p(-spec.lambda_t) + spec.gaussian_log_density(thetas))


def variable_jump_log_density(theta, spec: ProposalSpec) -> float:
    theta = np.asarray(theta, dtype=float)
    return float(variable_jump_log_density_many(theta[None, :], spec)[0])


def mh_chain(initial, target_log_pdf: Callable, spec: ProposalSpec, k: int, rng: np.random.Generator,
             vectorized: bool = False, pack_index: int = 0) -> PosteriorEnsemble:
    """Runs a Metropolis-Hastings chain of length k.

    Since the variable jump proposal ignores the current state, all k-1 candidates
    and their proposal and target densities are computed up front; the accept/reject
    sweep then walks through them in order, repeating the current sample on rejection.

    Args:
        initial: starting point, must have non-zero target density
        target_log_pdf (Callable): log of the (unnormalized) target. Takes one parameter
            vector, or a (k,d) array if vectorized is set
        spec (ProposalSpec): proposal
        k (int): chain length
        rng (np.random.Generator): random source
        vectorized (bool): target_log_pdf evaluates a batch of parameter vectors
        pack_index (int): recorded in the ensemble

    Raises:
        ZeroDensityError: initial point has zero target density

    Returns:
        PosteriorEnsemble: the chain, with the number of accepted moves
    """
    if int(k) != k or k < 1:
        raise ParameterError(f"chain length must be a positive integer, got {k}")
    k = int(k)
    theta = as_param_vector(initial, dim=spec.dim)

    def evaluate(thetas):
        if vectorized:
            return np.asarray(target_log_pdf(thetas), dtype=float)
        return np.array([target_log_pdf(th) for th in thetas], dtype=float)

    log_post = float(evaluate(theta[None, :])[0])
    if not log_post > -math.inf:
        raise ZeroDensityError("chain at zero-density state: initial point has zero target density")

    samples = np.empty((k, spec.dim))
    samples[0] = theta
    accepted = 0
    if k > 1:
        candidates, _ = variable_jump_sample_many(spec, rng, k - 1)
        log_q_cnd = variable_jump_log_density_many(candidates, spec)
        log_post_cnd = evaluate(candidates)
        log_post_cnd[np.isnan(log_post_cnd)] = -math.inf
        uniforms = rng.uniform(size=k - 1)
        log_q = variable_jump_log_density(theta, spec)

        for i in range(k - 1):
            alpha = acceptance_probability(log_post_cnd[i], log_post, log_q, log_q_cnd[i])
            if uniforms[i] < alpha:
                theta = candidates[i]
                log_post = log_post_cnd[i]
                log_q = log_q_cnd[i]
                accepted += 1
            samples[i + 1] = theta

    return PosteriorEnsemble(samples, pack_index=pack_index, accepted=accepted)
