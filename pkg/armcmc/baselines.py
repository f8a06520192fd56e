"""Baseline estimators: recursive least squares and a SISR particle filter."""
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .exceptions import ParameterError, ParticleDegeneracyError, RlsUpdateError
from .models import actuator_pressure_rate, rk4_step

SYMMETRY_TOL = 1e-9
WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class RlsState:
    theta: np.ndarray
    P: np.ndarray
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        d = theta.shape[0]
        if P.shape != (d, d):
            raise ParameterError(f"covariance must be {d}x{d}, got {P.shape}")
        scale = max(1.0, float(np.abs(P).max()))
        if np.abs(P - P.T).max() > SYMMETRY_TOL * scale:
            raise ParameterError("covariance is not symmetric")
        if not np.all(np.diag(P) > 0):
            raise ParameterError("covariance has a non-positive diagonal")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "P", P)
        for name in ("lower", "upper"):
            bound = getattr(self, name)
            if bound is not None:
                bound = np.broadcast_to(np.asarray(bound, dtype=float), (d,)).copy()
                object.__setattr__(self, name, bound)

    def clamp(self, theta: np.ndarray) -> np.ndarray:
        if self.lower is not None:
            theta = np.maximum(theta, self.lower)
        if self.upper is not None:
            theta = np.minimum(theta, self.upper)
        return theta


def rls_update(state: RlsState, U, y: float) -> RlsState:
    """One RLS update with regressor U and scalar output y.

    The covariance update is written in Joseph form and symmetrized, which is
    algebraically P - K U' P. The estimate is clamped to the saturation bounds.

    Raises:
        RlsUpdateError: the update produced non-finite values; carries the state before the update
    """
    U = np.asarray(U, dtype=float)
    if U.shape != state.theta.shape:
        raise ParameterError(f"regressor must have {state.theta.shape[0]} components, got shape {U.shape}")
    P = state.P
    PU = P @ U
    gain = PU / (1.0 + U @ PU)
    error = y - state.theta @ U
    theta = state.theta + gain * error
    A = np.eye(len(U)) - np.outer(gain, U)
    P = A @ P @ A.T + np.outer(gain, gain)
    P = 0.5 * (P + P.T)
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(P))):
        raise RlsUpdateError(f"non-finite RLS update (error {error})", state=state)
    if not np.all(np.diag(P) > 0):
        raise RlsUpdateError("RLS covariance lost positive definiteness", state=state)
    return replace(state, theta=state.clamp(theta), P=P)


class RecursiveLeastSquares:
    """RLS in scaled coordinates.

    With input_scale s, the filter runs on U' = s U and theta' = theta / s, and
    the covariance given as P0 is in the scaled coordinates. theta, bounds and
    predictions are reported in the original coordinates.
    """
    def __init__(self, theta0, P0, input_scale: float = 1.0,
                 lower=None, upper=None):
        if not input_scale > 0:
            raise ParameterError(f"input scale must be positive, got {input_scale}")
        self.input_scale = float(input_scale)
        theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
        d = theta0.shape[0]
        P0 = np.asarray(P0, dtype=float)
        if P0.ndim == 0:
            P0 = float(P0) * np.eye(d)
        s = self.input_scale
        self.state = RlsState(theta0 / s, P0,
                              None if lower is None else np.asarray(lower, dtype=float) / s,
                              None if upper is None else np.asarray(upper, dtype=float) / s)

    @property
    def theta(self) -> np.ndarray:
        return self.state.theta * self.input_scale

    @property
    def P(self) -> np.ndarray:
        """Covariance of theta in the original coordinates"""
        return self.state.P * self.input_scale**2

    def update(self, U, y: float) -> np.ndarray:
        self.state = rls_update(self.state, self.input_scale * np.asarray(U, dtype=float), y)
        return self.theta

    def predict(self, U) -> np.ndarray:
        return (self.input_scale * np.asarray(U, dtype=float)) @ self.state.theta


@dataclass(frozen=True)
class ParticleSet:
    """Particles (N, n) with normalized weights.

    estimate and ess_before hold the weighted mean and effective sample size of
    the step that produced the set, taken before resampling.
    """
    particles: np.ndarray
    weights: np.ndarray
    estimate: Optional[np.ndarray] = None
    ess_before: Optional[float] = None

    def __post_init__(self):
        particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (particles.shape[0],):
            raise ParameterError("one weight per particle is required")
        if np.any(weights < 0):
            raise ParameterError("particle weights must be non-negative")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ParameterError(f"particle weights sum to {weights.sum()}, not 1")
        object.__setattr__(self, "particles", particles)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, particles) -> "ParticleSet":
        particles = np.atleast_2d(np.asarray(particles, dtype=float))
        n = particles.shape[0]
        return cls(particles, np.full(n, 1.0 / n))

    def __len__(self):
        return self.particles.shape[0]

    @property
    def ess(self) -> float:
        return 1.0 / float(np.sum(self.weights**2))

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.particles


def systematic_resample(weights, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling: one uniform offset, N evenly spaced positions"""
    weights = np.asarray(weights, dtype=float)
    n = len(weights)
    positions = (rng.uniform() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.minimum(np.searchsorted(cumulative, positions, side="right"), n - 1)


def pf_step(ps: ParticleSet, y, transition: Callable, likelihood: Callable, rng: np.random.Generator,
            log_likelihood: bool = False, resample: str = "always", ess_threshold: float = 0.5) -> ParticleSet:
    """One SISR step: propagate, weight by the likelihood of y, normalize, resample.

    Args:
        ps (ParticleSet): current particles
        y: observation
        transition (Callable): (particles, rng) -> propagated particles, vectorized over rows
        likelihood (Callable): (particles, y) -> per-particle likelihood (or log-likelihood)
        rng (np.random.Generator): random source
        log_likelihood (bool): likelihood returns log values
        resample (str): "always", or "ess" to resample only when ESS < ess_threshold N

    Raises:
        ParticleDegeneracyError: all weights are zero

    Returns:
        ParticleSet: new particles; estimate holds the weighted mean before resampling
    """
    if resample not in ("always", "ess"):
        raise ParameterError(f"unknown resampling policy '{resample}'")
    n = len(ps)
    particles = np.asarray(transition(ps.particles, rng), dtype=float)
    values = np.asarray(likelihood(particles, y), dtype=float)

    with np.errstate(divide="ignore"):
        if log_likelihood:
            log_w = np.log(ps.weights) + np.where(np.isnan(values), -np.inf, values)
        else:
            if np.any(values < 0):
                raise ParameterError("likelihood must be non-negative")
            log_w = np.log(ps.weights * np.where(np.isfinite(values), values, 0.0))
    log_w[np.isnan(log_w)] = -np.inf
    if not np.any(np.isfinite(log_w)):
        raise ParticleDegeneracyError("particle degeneracy: all weights are zero",
                                      diagnostics=dict(particles=n, finite_likelihoods=int(np.isfinite(values).sum()),
                                                       max_likelihood=float(np.nanmax(values)) if np.any(~np.isnan(values)) else math.nan))
    weights = np.exp(log_w - logsumexp(log_w))
    weights /= weights.sum()
    estimate = weights @ particles
    ess = 1.0 / float(np.sum(weights**2))

    if resample == "always" or ess < ess_threshold * n:
        particles = particles[systematic_resample(weights, rng)]
        weights = np.full(n, 1.0 / n)
    return ParticleSet(particles, weights, estimate=estimate, ess_before=ess)


class ActuatorParticleFilter:
    """Particle filter over x = [alpha, alpha_dot, p, theta1, theta2] for the fluid actuator.

    The pressure ODE and the angle dynamics are discretized with one RK4 step per
    sample, with the valve commands held over the step. theta1 and theta2 follow a
    random walk. The measurement is [p, p_dot] with Gaussian noise.
    """
    def __init__(self, q1: float, q2: float, q3: float, p_atm: float, p_s: float, dt: float,
                 prior_mean: Sequence[float], prior_scale: Sequence[float],
                 measurement_sigma: Sequence[float], process_sigma: Sequence[float] = (0.0, 0.0, 0.0),
                 particles: int = 100, jitter_fraction: float = 0.01,
                 resample: str = "always", ess_threshold: float = 0.5):
        self.q1, self.q2, self.q3 = q1, q2, q3
        self.p_atm, self.p_s, self.dt = p_atm, p_s, dt
        self.prior_mean = np.asarray(prior_mean, dtype=float)
        self.prior_scale = np.asarray(prior_scale, dtype=float)
        self.measurement_sigma = np.asarray(measurement_sigma, dtype=float)
        self.process_sigma = np.asarray(process_sigma, dtype=float)
        if self.measurement_sigma.shape != (2,) or np.any(self.measurement_sigma <= 0):
            raise ParameterError("measurement_sigma needs two positive entries (p, p_dot)")
        if self.process_sigma.shape != (3,):
            raise ParameterError("process_sigma needs three entries (alpha, alpha_dot, p)")
        self.n_particles = particles
        self.jitter = jitter_fraction * self.prior_scale
        self.resample = resample
        self.ess_threshold = ess_threshold
        self.particle_set: Optional[ParticleSet] = None

    def initialize(self, p0: float, rng: np.random.Generator) -> ParticleSet:
        n = self.n_particles
        particles = np.zeros((n, 5))
        particles[:, 2] = p0
        particles[:, 3:] = self.prior_mean + self.prior_scale * rng.standard_normal((n, 2))
        self.particle_set = ParticleSet.uniform(particles)
        return self.particle_set

    def pressure_rate(self, p, theta1, theta2, u_c: float, u_d: float) -> np.ndarray:
        return actuator_pressure_rate(p, theta1, theta2, u_c, u_d, self.p_s, self.p_atm)

    def transition(self, u_c: float, u_d: float) -> Callable:
        def propagate(particles, rng):
            theta1, theta2 = particles[:, 3], particles[:, 4]

            def deriv(t, y):
                alpha, alpha_dot, p = y
                return np.stack([alpha_dot,
                                 self.q1 * (p - self.p_atm) - self.q2 * alpha_dot - self.q3 * alpha,
                                 self.pressure_rate(p, theta1, theta2, u_c, u_d)])

            state = rk4_step(deriv, 0.0, particles[:, :3].T, self.dt).T
            n = len(particles)
            state = state + self.process_sigma * rng.standard_normal((n, 3))
            state[:, 2] = np.clip(state[:, 2], 0.0, 2 * self.p_s)
            thetas = particles[:, 3:] + self.jitter * rng.standard_normal((n, 2))
            return np.column_stack([state, thetas])
        return propagate

    def log_likelihood(self, u_c: float, u_d: float) -> Callable:
        def evaluate(particles, y):
            p = particles[:, 2]
            p_dot = self.pressure_rate(p, particles[:, 3], particles[:, 4], u_c, u_d)
            z = (np.asarray(y) - np.column_stack([p, p_dot])) / self.measurement_sigma
            loglik = -0.5 * np.sum(z**2, axis=1)
            return np.where(np.isfinite(loglik), loglik, -np.inf)
        return evaluate

    def step(self, u_c: float, u_d: float, p: float, p_dot: float, rng: np.random.Generator) -> ParticleSet:
        """Assimilates one sample; returns the new particle set"""
        if self.particle_set is None:
            self.initialize(p, rng)
        self.particle_set = pf_step(self.particle_set, (p, p_dot), self.transition(u_c, u_d),
                                    self.log_likelihood(u_c, u_d), rng, log_likelihood=True,
                                    resample=self.resample, ess_threshold=self.ess_threshold)
        return self.particle_set

    @property
    def theta(self) -> np.ndarray:
        estimate = self.particle_set.estimate
        return (estimate if estimate is not None else self.particle_set.mean)[3:]
