"""Adaptive recursive MCMC: one posterior update per data pack.

Each step measures how well the previous posterior predicts the new pack. A
good fit reinforces the previous posterior (proposals mostly reuse its samples
and fewer samples are needed); a poor fit restarts the estimate from the prior.
"""
import math
import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, stats

import armcmc
from .core import DataPack, NoiseModel, ParametricModel, PosteriorEnsemble, as_param_vector
from .exceptions import ConvergenceError, ParameterError, PredictionError, RecursionStepError, ZeroDensityError
from .sampler import (PrecisionReliability, ProposalSpec, armcmc_min_samples, chernoff_min_samples,
                      mh_chain)

Mode = Enum("Mode", "modification reinforcement", module=__name__)


@dataclass(frozen=True)
class ArmcmcConfig:
    pr: PrecisionReliability
    zeta_th: float
    rho: float
    noise: NoiseModel
    pack_size: int
    prior_mean: np.ndarray
    prior_scale: np.ndarray
    proposal_scale: Optional[np.ndarray] = None
    mismatch: str = "signed"
    fixed_samples: Optional[int] = None
    reestimate_noise: bool = False
    kde_max_points: int = 512
    histogram_bins: int = 64
    # Gaussian branch fitted to the target's local curvature, smoothed previous-posterior draws
    adaptive_proposal: bool = False
    proposal_inflation: float = 1.5
    # restart from the prior at every step (plain MCMC)
    force_modification: bool = False
    name: str = "armcmc"

    def __post_init__(self):
        if not 0 <= self.rho <= 1:
            raise ParameterError(f"rho must be in [0,1], got {self.rho}")
        if not self.zeta_th > 0:
            raise ParameterError(f"mismatch threshold must be positive, got {self.zeta_th}")
        if self.pack_size < 1:
            raise ParameterError(f"pack size must be positive, got {self.pack_size}")
        if self.mismatch not in ("signed", "absolute"):
            raise ParameterError(f"unknown mismatch index '{self.mismatch}'")
        if not self.proposal_inflation > 0:
            raise ParameterError(f"proposal inflation must be positive, got {self.proposal_inflation}")
        mean = as_param_vector(self.prior_mean)
        scale = as_param_vector(self.prior_scale, dim=mean.shape[0])
        proposal = scale if self.proposal_scale is None or not len(self.proposal_scale) else \
            as_param_vector(self.proposal_scale, dim=mean.shape[0])
        if np.any(scale <= 0) or np.any(proposal <= 0):
            raise ParameterError("prior and proposal scales must be positive")
        object.__setattr__(self, "prior_mean", mean)
        object.__setattr__(self, "prior_scale", scale)
        object.__setattr__(self, "proposal_scale", proposal)

    @property
    def dim(self) -> int:
        return self.prior_mean.shape[0]

    @classmethod
    def from_section(cls, section, **kw) -> "ArmcmcConfig":
        """Builds the config from the 'armcmc' section of a run config"""
        noise = NoiseModel(section.mu_nu, section.sigma_nu, section.noise_family, section.noise_dof)
        args = dict(pr=PrecisionReliability(section.epsilon, section.delta),
                    zeta_th=section.zeta_th, rho=section.rho, noise=noise,
                    pack_size=section.pack_size,
                    prior_mean=section.prior_mean, prior_scale=section.prior_scale,
                    proposal_scale=section.proposal_scale or None,
                    mismatch=section.mismatch, fixed_samples=section.fixed_samples,
                    reestimate_noise=section.reestimate_noise,
                    kde_max_points=section.kde_max_points, histogram_bins=section.histogram_bins,
                    adaptive_proposal=section.adaptive_proposal, proposal_inflation=section.proposal_inflation)
        args.update(**kw)
        return cls(**args)


@dataclass(frozen=True)
class StepDiagnostics:
    pack_index: int
    zeta: float
    lam: float
    mode: Mode
    k_min: int
    acceptance_rate: float
    point_maps: np.ndarray
    point_aps: np.ndarray
    mu_nu: float = 0.0
    sigma_nu: float = 1.0
    wall_ms: float = 0.0

    def as_row(self, param_names: Optional[Sequence[str]] = None, timing: bool = False) -> Dict[str, Any]:
        names = param_names or [f"theta{i+1}" for i in range(len(self.point_maps))]
        row = dict(pack_index=int(self.pack_index), zeta=float(self.zeta), **{"lambda": float(self.lam)},
                   mode=self.mode.name, k_min=int(self.k_min), acceptance_rate=float(self.acceptance_rate))
        row.update({f"maps_{name}": float(value) for name, value in zip(names, self.point_maps)})
        row.update({f"aps_{name}": float(value) for name, value in zip(names, self.point_aps)})
        row.update(mu_nu=float(self.mu_nu), sigma_nu=float(self.sigma_nu))
        if timing:
            row['wall_ms'] = float(self.wall_ms)
        return row


@dataclass(frozen=True)
class ArmcmcState:
    noise: NoiseModel
    ensemble: Optional[PosteriorEnsemble] = None
    pack_index: int = -1
    last_diagnostics: Optional[StepDiagnostics] = None

    @classmethod
    def initial(cls, cfg: ArmcmcConfig) -> "ArmcmcState":
        return cls(noise=cfg.noise)


def model_mismatch_index(prev: Optional[PosteriorEnsemble], pack: DataPack, model: ParametricModel,
                         absolute: bool = False) -> float:
    """Mean residual of the previous posterior's predictive mean on a new pack.

    The predictive mean averages the model output over the post-burn-in samples.
    Without a previous posterior the index is infinite. With absolute set, the mean
    of absolute residuals is returned instead of the signed mean.

    Raises:
        PredictionError: a posterior sample gives non-finite predictions
    """
    if prev is None or len(prev) == 0:
        return math.inf
    predictions = model.predict_many(prev.post_burn_in, pack.inputs)
    finite = np.isfinite(predictions).reshape(predictions.shape[0], -1).all(axis=1)
    if not finite.all():
        bad = int(np.argmin(finite))
        raise PredictionError(f"non-finite model prediction on pack {pack.index}", sample_index=prev.burn_in + bad)
    residuals = pack.outputs - predictions.mean(axis=0)
    if absolute:
        return float(np.abs(residuals).mean())
    return float(residuals.mean())


def temporal_forgetting_factor(zeta: float, mu_nu: float, zeta_th: float) -> Tuple[float, Mode]:
    """Maps the mismatch index to (lambda, mode).

    Mismatch at or above the threshold (or infinite) gives modification with lambda 0,
    otherwise reinforcement with lambda = exp(-|mu_nu - zeta|). A lambda that underflows
    to 0 is treated as modification.
    """
    if not zeta_th > 0:
        raise ParameterError(f"mismatch threshold must be positive, got {zeta_th}")
    if math.isnan(zeta) or math.isinf(zeta) or zeta >= zeta_th:
        return 0.0, Mode.modification
    lam = math.exp(-abs(mu_nu - zeta))
    if lam == 0.0:
        return 0.0, Mode.modification
    return lam, Mode.reinforcement


def temporal_weights(n: int, rho: float) -> np.ndarray:
    """exp(-rho (N_s - n)) for n = 1..N_s, the newest observation last with weight 1"""
    return np.exp(-rho * (n - np.arange(1, n + 1)))


def weighted_log_likelihood_many(thetas, pack: DataPack, model: ParametricModel, noise: NoiseModel,
                                 rho: float) -> np.ndarray:
    """Weighted log-likelihood of each row of thetas. Non-finite predictions give -inf."""
    if not 0 <= rho <= 1:
        raise ParameterError(f"rho must be in [0,1], got {rho}")
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    with np.errstate(all="ignore"):
        predictions = model.predict_many(thetas, pack.inputs)
        residuals = (pack.outputs[None, :, :] - predictions) * temporal_weights(len(pack), rho)[None, :, None]
        loglik = noise.log_pdf(residuals).reshape(thetas.shape[0], -1).sum(axis=1)
    loglik[~np.isfinite(loglik)] = -math.inf
    return loglik


def weighted_log_likelihood(theta, pack: DataPack, model: ParametricModel, noise: NoiseModel, rho: float) -> float:
    theta = np.asarray(theta, dtype=float)
    return float(weighted_log_likelihood_many(theta[None, :], pack, model, noise, rho)[0])


def log_prior_many(thetas, cfg: ArmcmcConfig) -> np.ndarray:
    """Independent Gaussian prior"""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    return stats.norm.logpdf(thetas, loc=cfg.prior_mean, scale=cfg.prior_scale).sum(axis=1)


def required_samples(cfg: ArmcmcConfig, lam: float) -> int:
    """Chain length for one step: the fixed override, else the Chernoff count in modification
    and the implicit bound in reinforcement"""
    if cfg.fixed_samples is not None:
        return int(cfg.fixed_samples)
    if lam == 0:
        return chernoff_min_samples(cfg.pr)
    try:
        return armcmc_min_samples(cfg.pr, lam)
    except ConvergenceError as exc:
        # the iteration decreases from the Chernoff count, so its last value is an upper bound
        armcmc.log.warning(f"{exc}, using {math.ceil(exc.last_iterate)} samples")
        return max(1, math.ceil(exc.last_iterate))


def ar_maps(ensemble: PosteriorEnsemble, mode: Mode, bins: int = 64) -> np.ndarray:
    """Point estimate: per-component histogram mode in modification, median in reinforcement.

    The histogram mode is the centre of the fullest of 'bins' equal bins spanning the
    range of the post-burn-in samples; ties go to the lowest bin.
    """
    post = ensemble.post_burn_in
    if mode is Mode.reinforcement:
        return np.median(post, axis=0)
    estimate = np.empty(post.shape[1])
    for j in range(post.shape[1]):
        column = post[:, j]
        lo, hi = column.min(), column.max()
        if hi == lo:
            estimate[j] = lo
            continue
        edges = np.linspace(lo, hi, bins + 1)
        which = np.clip(np.searchsorted(edges, column, side="right") - 1, 0, bins - 1)
        modal = np.argmax(np.bincount(which, minlength=bins))
        estimate[j] = 0.5 * (edges[modal] + edges[modal + 1])
    return estimate


def ar_aps(ensemble: PosteriorEnsemble) -> np.ndarray:
    """Point estimate: per-component mean of the post-burn-in samples"""
    return ensemble.post_burn_in.mean(axis=0)


def local_gaussian_fit(target_many: Callable, start, scale, step: float = 1e-3,
                       max_iter: int = 20, tol: float = 1e-8) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Gaussian approximation of a log-density around its mode.

    Newton ascent from start in coordinates z = (theta - start) / scale, with gradient
    and Hessian from central differences of width 'step' (in z units). Returns
    (mode, covariance), the covariance being the inverse negative Hessian at the mode,
    or None if the stencil reaches zero density or the Hessian is not negative definite.
    """
    start = as_param_vector(start)
    scale = as_param_vector(scale, dim=start.shape[0])
    d = start.shape[0]
    eye = np.eye(d)
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    stencil = np.vstack([np.zeros((1, d))] +
                        [sign * step * eye[i][None, :] for i in range(d) for sign in (1, -1)] +
                        [step * (a * eye[i] + b * eye[j])[None, :] for i, j in pairs
                         for a, b in ((1, 1), (1, -1), (-1, 1), (-1, -1))])

    def evaluate(z):
        return np.asarray(target_many(start + scale * np.atleast_2d(z)), dtype=float)

    def derivatives(z):
        f = evaluate(z + stencil)
        if not np.all(np.isfinite(f)):
            return None
        plus, minus = f[1:2 * d + 1:2], f[2:2 * d + 1:2]
        grad = (plus - minus) / (2 * step)
        hess = np.diag((plus - 2 * f[0] + minus) / step**2)
        for (i, j), (pp, pm, mp, mm) in zip(pairs, f[2 * d + 1:].reshape(-1, 4)):
            hess[i, j] = hess[j, i] = (pp - pm - mp + mm) / (4 * step**2)
        try:
            chol = linalg.cho_factor(-hess, lower=True)
        except linalg.LinAlgError:
            return None
        return f[0], grad, chol

    z = np.zeros(d)
    for _ in range(max_iter):
        found = derivatives(z)
        if found is None:
            return None
        f0, grad, chol = found
        direction = linalg.cho_solve(chol, grad)
        if grad @ direction < tol:
            break
        t = 1.0
        while t > 1e-6 and not evaluate(z + t * direction)[0] >= f0:
            t *= 0.5
        if t <= 1e-6:
            break
        z = z + t * direction
    found = derivatives(z)
    if found is None:
        return None
    cov_z = linalg.cho_solve(found[2], eye)
    return start + scale * z, scale[:, None] * cov_z * scale[None, :]


def armcmc_step(state: ArmcmcState, pack: DataPack, model: ParametricModel, cfg: ArmcmcConfig,
                rng: np.random.Generator) -> ArmcmcState:
    """Updates the posterior with one data pack.

    Raises:
        RecursionStepError: pack out of order, or model and config disagree in dimension
    """
    if pack.index != state.pack_index + 1:
        raise RecursionStepError(f"expected pack {state.pack_index + 1}, got pack {pack.index}")
    if model.dim != cfg.dim:
        raise RecursionStepError(f"model has {model.dim} parameters but the prior has {cfg.dim}")
    started = time.perf_counter()
    noise = state.noise

    zeta = model_mismatch_index(state.ensemble, pack, model, absolute=cfg.mismatch == "absolute")
    if cfg.force_modification:
        lam, mode = 0.0, Mode.modification
    else:
        lam, mode = temporal_forgetting_factor(zeta, noise.mu_nu, cfg.zeta_th)
    k_min = required_samples(cfg, lam)

    center = cfg.prior_mean if state.last_diagnostics is None else state.last_diagnostics.point_maps

    def target(thetas):
        return weighted_log_likelihood_many(thetas, pack, model, noise, cfg.rho) + log_prior_many(thetas, cfg)

    initial = center
    if not target(initial[None, :])[0] > -math.inf:
        initial = cfg.prior_mean
        if not target(initial[None, :])[0] > -math.inf:
            raise ZeroDensityError(f"pack {pack.index}: prior mean has zero posterior density")

    scale, cov = cfg.proposal_scale, None
    if cfg.adaptive_proposal:
        fit = local_gaussian_fit(target, initial, cfg.proposal_scale)
        if fit is None:
            armcmc.log.debug(f"{cfg.name} pack {pack.index}: no local Gaussian fit, using the configured proposal scale")
        else:
            center = initial = fit[0]
            cov = fit[1] * cfg.proposal_inflation**2
            scale = np.sqrt(np.diag(cov))
    spec = ProposalSpec(lam, state.ensemble if lam > 0 else None, center, scale,
                        kde_max_points=cfg.kde_max_points, gaussian_cov=cov, smoothed=cfg.adaptive_proposal)

    ensemble = mh_chain(initial, target, spec, k_min, rng, vectorized=True, pack_index=pack.index)
    point_maps = ar_maps(ensemble, mode, cfg.histogram_bins)
    point_aps = ar_aps(ensemble)

    if cfg.reestimate_noise:
        residuals = pack.outputs - model.predict_pack(point_aps, pack.inputs)
        mu, sigma = float(residuals.mean()), float(residuals.std(ddof=1)) if residuals.size > 1 else 0.0
        if math.isfinite(mu) and math.isfinite(sigma) and sigma > 0:
            noise = replace(noise, mu_nu=mu, sigma_nu=sigma)

    diagnostics = StepDiagnostics(pack.index, zeta, lam, mode, k_min, ensemble.acceptance_rate,
                                  point_maps, point_aps, noise.mu_nu, noise.sigma_nu,
                                  wall_ms=(time.perf_counter() - started) * 1000)
    armcmc.log.info(f"{cfg.name} pack {pack.index}: {mode.name}, zeta={zeta:.4g} lambda={lam:.3f} "
                    f"k={k_min} acceptance={ensemble.acceptance_rate:.3f}",
                    extra=dict(color="WARNING" if mode is Mode.modification else "GREEN",
                               method=cfg.name,
                               diagnostics=dict(method=cfg.name, **diagnostics.as_row(model.param_names, timing=True))))
    return ArmcmcState(noise=noise, ensemble=ensemble, pack_index=pack.index, last_diagnostics=diagnostics)
