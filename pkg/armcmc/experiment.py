"""Experiment orchestration: simulate or load a run, identify it with each selected
method pack by pack, and score the estimates against the truth."""
import math
import os
import os.path
import time
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

import armcmc
from .baselines import ActuatorParticleFilter, RecursiveLeastSquares
from .config import RunConfigSchema, save_config
from .core import ObservationStream, ParametricModel, partition_stream, read_stream_csv, write_stream_csv
from .exceptions import ArmcmcBaseException, ConvergenceError, ExperimentError, MetricsError, ParameterError
from .logging_utils import diagnostics_stream
from .models import (ActuatorRegressionModel, HuntCrossleyModel, actuator_angle_simulate, actuator_pressure_rate,
                     hc_regressors, hc_theta_from_lin, hc_theta_lin, rk4_step)
from .recursive import ArmcmcConfig, ArmcmcState, armcmc_step
from .sampler import PrecisionReliability, armcmc_min_samples, chernoff_min_samples
from .sim import (ActuatorSimConfig, NeedleEnvConfig, SimulationRun, simulate_actuator,
                  simulate_needle_run)

# used when the run config leaves the armcmc prior empty
DEFAULT_PRIORS = dict(
    actuator=([-1.5e-4, 0.0], [1.0e-4, 1.0e-8]),
    hunt_crossley=([1.0, 1.0, 1.0], [0.1, 0.1, 0.1]),
)

DEFAULT_LAMBDAS = [round(0.05 * i, 2) for i in range(21)]

PREDICTION_METRICS = dict(actuator="angle_l2", hunt_crossley="force_mae")


def build_model(name: str) -> ParametricModel:
    if name == "actuator":
        return ActuatorRegressionModel()
    elif name == "hunt_crossley":
        return HuntCrossleyModel()
    raise ParameterError(f"unknown model '{name}'")


def method_rng(seed: int, name: str) -> np.random.Generator:
    """Independent generator per method, so that adding a method leaves the others unchanged"""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def prior_of(conf: RunConfigSchema):
    mean, scale = conf.armcmc.prior_mean, conf.armcmc.prior_scale
    if not mean:
        mean, scale = DEFAULT_PRIORS[conf.model]
    return np.asarray(mean, dtype=float), np.asarray(scale, dtype=float)


def simulate(conf: RunConfigSchema, rng: Optional[np.random.Generator] = None) -> SimulationRun:
    """Runs the simulator selected by conf.model"""
    rng = rng or method_rng(conf.seed, "simulate")
    if conf.model == "actuator":
        return simulate_actuator(ActuatorSimConfig.from_section(conf.actuator, conf.sample_time), conf.duration, rng)
    return simulate_needle_run(NeedleEnvConfig.from_section(conf.needle, conf.sample_time), None, conf.duration, rng)


def write_simulation(run: SimulationRun, output_dir: str):
    os.makedirs(output_dir, exist_ok=True)
    write_stream_csv(run.stream, os.path.join(output_dir, "observations.csv"))
    run.truth.to_csv(os.path.join(output_dir, "truth.csv"), index=False, float_format="%.17g")


def load_dataset(conf: RunConfigSchema, model: ParametricModel) -> SimulationRun:
    """Reads conf.dataset, and the truth.csv next to it if there is one"""
    stream = read_stream_csv(conf.dataset, model.input_names, model.output_names)
    truth_path = os.path.join(os.path.dirname(os.path.abspath(conf.dataset)), "truth.csv")
    truth = pd.read_csv(truth_path) if os.path.exists(truth_path) else None
    if truth is not None and len(truth) != len(stream):
        armcmc.log.warning(f"{truth_path} has {len(truth)} rows for {len(stream)} observations, ignoring it")
        truth = None
    required = list(model.param_names) + ["alpha" if conf.model == "actuator" else "f_e"]
    if truth is not None and any(col not in truth.columns for col in required):
        armcmc.log.warning(f"{truth_path} lacks some of the columns {', '.join(required)}, ignoring it")
        truth = None
    return SimulationRun(stream, truth)


@dataclass
class MethodTrace:
    """Per-pack output of one identification method.

    estimates[t] is the estimate after pack t, predict_with[t] the estimate that was
    available before pack t (used for one-step-ahead prediction).
    """
    name: str
    estimates: np.ndarray
    predict_with: np.ndarray
    wall_ms: np.ndarray
    extra: Dict[str, np.ndarray] = field(default_factory=dict)
    diagnostics: List[Dict] = field(default_factory=list)
    heatmap: Optional[pd.DataFrame] = None


def _expand(estimates: np.ndarray, initial: np.ndarray, factor: int, npacks: int):
    """Maps estimates made on packs of factor x base size back onto base packs"""
    after = np.repeat(estimates, factor, axis=0)
    before = np.repeat(np.vstack([initial[None, :], estimates[:-1]]), factor, axis=0)
    if len(after) < npacks:
        pad = npacks - len(after)
        last = estimates[-1] if len(estimates) else initial
        after = np.vstack([after, np.tile(last, (pad, 1))])
        before = np.vstack([before, np.tile(last, (pad, 1))])
    return after[:npacks], before[:npacks]


def heatmap_rows(ensemble_post: np.ndarray, pack_index: int, param_names: Sequence[str],
                 ranges: Dict[str, Sequence[float]], bins: int) -> pd.DataFrame:
    """Long-format density of the post-burn-in samples over a fixed grid per parameter.

    Densities are normalized by the full sample count, so mass outside the range is lost.
    """
    frames = []
    n = len(ensemble_post)
    for j, name in enumerate(param_names):
        lo, hi = ranges[name]
        counts, edges = np.histogram(ensemble_post[:, j], bins=bins, range=(lo, hi))
        width = edges[1] - edges[0]
        frames.append(pd.DataFrame(dict(pack_index=pack_index, parameter=name,
                                        bin_center=0.5 * (edges[:-1] + edges[1:]),
                                        density=counts / (n * width))))
    return pd.concat(frames, ignore_index=True)


def heatmap_ranges(conf: RunConfigSchema, model: ParametricModel) -> Dict[str, List[float]]:
    mean, scale = prior_of(conf)
    ranges = {name: [m - 4 * s, m + 4 * s] for name, m, s in zip(model.param_names, mean, scale)}
    ranges.update({name: list(value) for name, value in conf.heatmap.ranges.items() if name in ranges})
    return ranges


def _armcmc_config(conf: RunConfigSchema, **kw) -> ArmcmcConfig:
    mean, scale = prior_of(conf)
    return ArmcmcConfig.from_section(conf.armcmc, prior_mean=mean, prior_scale=scale,
                                     proposal_scale=conf.armcmc.proposal_scale or None, **kw)


def run_armcmc_method(stream: ObservationStream, model: ParametricModel, cfg: ArmcmcConfig,
                      rng: np.random.Generator, heatmap: Optional[Dict] = None):
    """Runs the recursion over the stream. Returns (packs, per-pack AR-MAPS, AR-APS, wall ms,
    diagnostics rows, heatmap frame)."""
    packs = partition_stream(stream, cfg.pack_size)
    state = ArmcmcState.initial(cfg)
    maps, aps, wall, rows, grids = [], [], [], [], []
    for pack in packs:
        try:
            state = armcmc_step(state, pack, model, cfg, rng)
        except ArmcmcBaseException as exc:
            raise ExperimentError(f"{cfg.name} failed", pack_index=pack.index, nested=exc)
        diag = state.last_diagnostics
        maps.append(diag.point_maps)
        aps.append(diag.point_aps)
        wall.append(diag.wall_ms)
        rows.append(diag.as_row(model.param_names))
        if heatmap is not None:
            grids.append(heatmap_rows(state.ensemble.post_burn_in, pack.index, model.param_names,
                                      heatmap['ranges'], heatmap['bins']))
    dim = cfg.dim
    frame = pd.concat(grids, ignore_index=True) if grids else None
    return (packs, np.array(maps).reshape(-1, dim), np.array(aps).reshape(-1, dim),
            np.array(wall), rows, frame)


def identify_armcmc(conf: RunConfigSchema, stream: ObservationStream, model: ParametricModel,
                    npacks: int) -> List[MethodTrace]:
    cfg = _armcmc_config(conf)
    heatmap = dict(ranges=heatmap_ranges(conf, model), bins=conf.heatmap.bins) if conf.heatmap.enabled else None
    _, maps, aps, wall, rows, grids = run_armcmc_method(stream, model, cfg, method_rng(conf.seed, "armcmc"), heatmap)
    maps_after, maps_before = _expand(maps, cfg.prior_mean, 1, npacks)
    aps_after, aps_before = _expand(aps, cfg.prior_mean, 1, npacks)
    extra = {key: np.array([row[key] for row in rows]) for key in ("zeta", "lambda", "k_min", "acceptance_rate")}
    return [MethodTrace("armcmc-maps", maps_after, maps_before, wall, extra, rows, grids),
            MethodTrace("armcmc-aps", aps_after, aps_before, wall, extra)]


def identify_mcmc_plain(conf: RunConfigSchema, stream: ObservationStream, model: ParametricModel,
                        npacks: int) -> List[MethodTrace]:
    """Plain MCMC comparators: every step restarts from the prior, with a fixed chain length
    or a pack enlarged by pack_factor"""
    traces = []
    for variant in conf.mcmc_plain.variants:
        cfg = _armcmc_config(conf, force_modification=True, fixed_samples=variant.samples,
                             pack_size=conf.armcmc.pack_size * variant.pack_factor, name=variant.name)
        _, _, aps, wall, rows, _ = run_armcmc_method(stream, model, cfg, method_rng(conf.seed, variant.name))
        after, before = _expand(aps, cfg.prior_mean, variant.pack_factor, npacks)
        traces.append(MethodTrace(variant.name, after, before, wall / variant.pack_factor,
                                  dict(k_min=np.array([row['k_min'] for row in rows])), rows))
    return traces


def _rls_bounds(conf: RunConfigSchema, mean: np.ndarray, scale: np.ndarray):
    factor = conf.rls.saturation_factor
    if factor is None:
        return None, None
    return mean - factor * scale, mean + factor * scale


def identify_rls(conf: RunConfigSchema, stream: ObservationStream, model: ParametricModel,
                 npacks: int) -> List[MethodTrace]:
    """Sample-wise RLS, on the pressure regression for the actuator and on the log-linearized
    force model for Hunt-Crossley. Estimates are sampled at pack boundaries."""
    mean, scale = prior_of(conf)
    theta0 = np.asarray(conf.rls.initial_theta or mean, dtype=float)
    pack_size = conf.armcmc.pack_size
    packs = partition_stream(stream, pack_size)
    estimates, before, wall = [], [], []

    if conf.model == "actuator":
        lower, upper = _rls_bounds(conf, mean, scale)
        rls = RecursiveLeastSquares(theta0, conf.rls.initial_covariance, conf.rls.input_scale, lower, upper)
        current = lambda: rls.theta
    else:
        lin_mean = hc_theta_lin(mean)
        lower, upper = _rls_bounds(conf, lin_mean, scale)
        rls = RecursiveLeastSquares(hc_theta_lin(theta0), conf.rls.initial_covariance, conf.rls.input_scale,
                                    lower, upper)
        current = lambda: hc_theta_from_lin(rls.theta)

    for pack in packs:
        before.append(current())
        started = time.perf_counter()
        try:
            if conf.model == "actuator":
                U = model.regressors(pack.inputs)
                for u, y in zip(U, pack.outputs[:, 0]):
                    rls.update(u, y)
            else:
                _, U, y_lin = hc_regressors(pack.inputs, pack.outputs)
                for u, y in zip(U, y_lin):
                    rls.update(u, y)
        except ArmcmcBaseException as exc:
            raise ExperimentError("rls failed", pack_index=pack.index, nested=exc)
        wall.append((time.perf_counter() - started) * 1000)
        estimates.append(current())

    dim = model.dim
    after, _ = _expand(np.array(estimates).reshape(-1, dim), theta0, 1, npacks)
    prior, _ = _expand(np.array(before).reshape(-1, dim), theta0, 1, npacks)
    return [MethodTrace("rls", after, prior, np.array(wall))]


def identify_pf(conf: RunConfigSchema, stream: ObservationStream, model: ParametricModel,
                npacks: int) -> List[MethodTrace]:
    if conf.model != "actuator":
        raise ExperimentError(f"the particle filter is only available for the actuator, not {conf.model}")
    mean, scale = prior_of(conf)
    act = conf.actuator
    pf = ActuatorParticleFilter(act.q1, act.q2, act.q3, act.p_atm, act.p_s, conf.sample_time,
                                mean, scale, conf.pf.measurement_sigma or [1.0, 10.0],
                                conf.pf.process_sigma or [0.0, 0.0, 0.0], conf.pf.particles,
                                conf.pf.jitter_fraction, conf.pf.resample, conf.pf.ess_threshold)
    rng = method_rng(conf.seed, "pf")
    packs = partition_stream(stream, conf.armcmc.pack_size)
    estimates, before, wall, ess = [], [], [], []
    theta = mean
    for pack in packs:
        before.append(theta)
        started = time.perf_counter()
        try:
            for u_c, u_d, p, p_dot in pack.inputs:
                particle_set = pf.step(u_c, u_d, p, p_dot, rng)
        except ArmcmcBaseException as exc:
            raise ExperimentError("pf failed", pack_index=pack.index, nested=exc)
        wall.append((time.perf_counter() - started) * 1000)
        theta = pf.theta.copy()
        estimates.append(theta)
        ess.append(particle_set.ess_before)

    after, _ = _expand(np.array(estimates).reshape(-1, 2), mean, 1, npacks)
    prior, _ = _expand(np.array(before).reshape(-1, 2), mean, 1, npacks)
    return [MethodTrace("pf", after, prior, np.array(wall), dict(ess=np.array(ess)))]


IDENTIFIERS = dict(armcmc=identify_armcmc, rls=identify_rls, pf=identify_pf, mcmc_plain=identify_mcmc_plain)


def pack_truth(truth: pd.DataFrame, param_names: Sequence[str], pack_size: int, npacks: int) -> np.ndarray:
    """Per-pack mean of the true parameters"""
    values = truth[list(param_names)].to_numpy()[:npacks * pack_size]
    return values.reshape(npacks, pack_size, -1).mean(axis=1)


def active_packs(conf: RunConfigSchema, stream: ObservationStream, npacks: int) -> np.ndarray:
    """Packs that count towards the parameter MAE: contact packs (most samples with x >= 0)
    for the needle, packs with a valve open most of the time for the actuator"""
    pack_size = conf.armcmc.pack_size
    inputs = stream.inputs[:npacks * pack_size]
    if conf.model == "hunt_crossley":
        active = inputs[:, 0] >= 0
    else:
        active = ActuatorRegressionModel.valve_mode(inputs) != 0
    return active.reshape(npacks, pack_size).mean(axis=1) > 0.5


def predict_actuator_angle(stream: ObservationStream, thetas: np.ndarray, pack_size: int,
                           sim: ActuatorSimConfig) -> np.ndarray:
    """Angle predicted from per-pack parameter estimates.

    Within each pack the pressure is integrated from the measured pressure at the pack
    start under the measured valve commands and thetas[t]; the angle is then integrated
    over the whole predicted pressure trace.
    """
    npacks = len(thetas)
    p_hat = np.empty(npacks * pack_size)
    inputs = stream.inputs
    for t in range(npacks):
        theta1, theta2 = thetas[t]
        p = inputs[t * pack_size, 2]
        for i in range(t * pack_size, (t + 1) * pack_size):
            p_hat[i] = p
            u_c, u_d = inputs[i, 0], inputs[i, 1]

            def deriv(s, x):
                return actuator_pressure_rate(x, theta1, theta2, u_c, u_d, sim.p_s, sim.p_atm)

            p = float(np.clip(rk4_step(deriv, 0.0, p, sim.dt), 0.0, 2 * sim.p_s))
    return actuator_angle_simulate(p_hat, sim.q1, sim.q2, sim.q3, sim.dt, sim.p_atm)


@dataclass(frozen=True)
class MethodMetrics:
    method: str
    mae: Dict[str, float]
    l2: Dict[str, float]
    prediction_error: Optional[float] = None


@dataclass(frozen=True)
class MetricsReport:
    """Per-method errors. Methods that were not run have no entry."""
    param_names: List[str]
    methods: Dict[str, MethodMetrics]
    prediction_metric: str = "force_mae"
    wall_ms: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for metrics in self.methods.values():
            values = list(metrics.mae.values()) + list(metrics.l2.values())
            if metrics.prediction_error is not None:
                values.append(metrics.prediction_error)
            if any(v < 0 for v in values if not math.isnan(v)):
                raise MetricsError(f"negative metric for {metrics.method}")

    def to_frame(self, timing: bool = False) -> pd.DataFrame:
        rows = []
        for name, metrics in self.methods.items():
            row = dict(method=name)
            row.update({f"mae_{p}": metrics.mae[p] for p in self.param_names if p in metrics.mae})
            row.update({f"l2_{p}": metrics.l2[p] for p in self.param_names if p in metrics.l2})
            if metrics.prediction_error is not None:
                row[self.prediction_metric] = metrics.prediction_error
            if timing and name in self.wall_ms:
                row['ms_per_step'] = self.wall_ms[name]
            rows.append(row)
        return pd.DataFrame(rows)


def compute_metrics(estimates: Dict[str, np.ndarray], truth: Optional[np.ndarray],
                    param_names: Sequence[str],
                    predictions: Optional[Dict[str, np.ndarray]] = None,
                    reference: Optional[np.ndarray] = None,
                    mask: Optional[np.ndarray] = None,
                    prediction_metric: str = "force_mae",
                    wall_ms: Optional[Dict[str, float]] = None) -> MetricsReport:
    """Scores per-step estimate traces against the truth.

    Args:
        estimates (Dict[str, np.ndarray]): method name -> (T, d) estimates, one row per step
        truth (Optional[np.ndarray]): (T, d) true parameters; None skips the parameter errors
        param_names (Sequence[str]): names of the d components
        predictions (Optional[Dict[str, np.ndarray]]): method name -> predicted signal
        reference (Optional[np.ndarray]): true signal, same length as the predictions
        mask (Optional[np.ndarray]): (T,) steps counted in the MAE; the L2 norm uses all steps
        prediction_metric (str): "force_mae" (mean absolute error) or "angle_l2" (L2 norm)
        wall_ms (Optional[Dict[str, float]]): mean wall-clock per step and method

    Raises:
        MetricsError: lengths or dimensions do not match

    Returns:
        MetricsReport: errors per method
    """
    param_names = list(param_names)
    if prediction_metric not in ("force_mae", "angle_l2"):
        raise MetricsError(f"unknown prediction metric '{prediction_metric}'")
    if truth is not None:
        truth = np.atleast_2d(np.asarray(truth, dtype=float))
        if truth.shape[1] != len(param_names):
            truth = truth.reshape(-1, len(param_names))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
    methods = {}
    for name, est in estimates.items():
        est = np.asarray(est, dtype=float).reshape(-1, len(param_names))
        mae, l2 = {}, {}
        if truth is not None:
            if est.shape != truth.shape:
                raise MetricsError(f"{name}: {est.shape[0]} estimates for {truth.shape[0]} truth values")
            diff = est - truth
            if mask is not None and mask.shape != (len(diff),):
                raise MetricsError(f"{name}: mask has {mask.shape[0]} entries for {len(diff)} steps")
            sel = diff if mask is None else diff[mask]
            for j, pname in enumerate(param_names):
                mae[pname] = float(np.abs(sel[:, j]).mean()) if len(sel) else math.nan
                l2[pname] = float(np.linalg.norm(diff[:, j]))
        prediction_error = None
        if predictions is not None and name in predictions and reference is not None:
            pred = np.asarray(predictions[name], dtype=float).ravel()
            ref = np.asarray(reference, dtype=float).ravel()
            if pred.shape != ref.shape:
                raise MetricsError(f"{name}: {len(pred)} predictions for {len(ref)} reference values")
            if prediction_metric == "force_mae":
                prediction_error = float(np.abs(pred - ref).mean())
            else:
                prediction_error = float(np.linalg.norm(pred - ref))
        methods[name] = MethodMetrics(name, mae, l2, prediction_error)
    return MetricsReport(param_names, methods, prediction_metric, dict(wall_ms or {}))


def emit_kmin_curve(prs: Sequence[PrecisionReliability], lambdas: Sequence[float] = DEFAULT_LAMBDAS,
                    path: Optional[str] = None) -> pd.DataFrame:
    """Tabulates the minimum sample count over a lambda grid for each (epsilon, delta).

    Rows where the solver does not converge keep the last iterate and are flagged
    with converged=False.
    """
    if not len(prs) or not len(lambdas):
        raise ParameterError("k_min curve needs at least one (epsilon, delta) pair and one lambda")
    rows = []
    for pr in prs:
        for lam in lambdas:
            try:
                k_min, converged = armcmc_min_samples(pr, lam), True
            except ConvergenceError as exc:
                armcmc.log.warning(f"eps={pr.epsilon} delta={pr.delta}: {exc}")
                k_min, converged = max(1, math.ceil(exc.last_iterate)), False
            rows.append(dict(epsilon=pr.epsilon, delta=pr.delta, **{"lambda": lam}, k_min=k_min,
                             chernoff=chernoff_min_samples(pr), converged=converged))
    frame = pd.DataFrame(rows)
    if path is not None:
        frame.to_csv(path, index=False)
    return frame


@dataclass
class ExperimentResult:
    report: MetricsReport
    traces: Dict[str, MethodTrace]
    run: SimulationRun
    output_dir: Optional[str] = None


def _trace_frame(trace: MethodTrace, param_names: Sequence[str], truth: Optional[np.ndarray],
                 pack_size: int) -> pd.DataFrame:
    frame = pd.DataFrame(dict(pack_index=np.arange(len(trace.estimates)),
                              time_index=(np.arange(len(trace.estimates)) + 1) * pack_size - 1))
    for j, name in enumerate(param_names):
        frame[f"est_{name}"] = trace.estimates[:, j]
    if truth is not None:
        for j, name in enumerate(param_names):
            frame[f"true_{name}"] = truth[:, j]
    for key, values in trace.extra.items():
        if len(values) == len(frame):
            frame[key] = values
    return frame


def _write_outputs(result: ExperimentResult, conf: RunConfigSchema, model: ParametricModel,
                   truth: Optional[np.ndarray], write_report: bool):
    out = result.output_dir
    pack_size = conf.armcmc.pack_size
    timing = []
    for name, trace in result.traces.items():
        _trace_frame(trace, model.param_names, truth, pack_size).to_csv(
            os.path.join(out, f"{name}_trace.csv"), index=False, float_format="%.17g")
        if trace.diagnostics:
            pd.DataFrame(trace.diagnostics).to_csv(os.path.join(out, f"{name}_diagnostics.csv"),
                                                   index=False, float_format="%.17g")
        if trace.heatmap is not None:
            trace.heatmap.to_csv(os.path.join(out, f"{name}_heatmap.csv"), index=False, float_format="%.17g")
        timing.append(dict(method=name, steps=len(trace.wall_ms), total_ms=float(trace.wall_ms.sum()),
                           ms_per_step=float(trace.wall_ms.mean()) if len(trace.wall_ms) else math.nan))
    pd.DataFrame(timing).to_csv(os.path.join(out, "timing.csv"), index=False)
    if write_report:
        result.report.to_frame().to_csv(os.path.join(out, "report.csv"), index=False, float_format="%.17g")


def run_experiment(conf: RunConfigSchema, output_dir: Optional[str] = None,
                   write_report: bool = True) -> ExperimentResult:
    """Generates or loads the observations, runs every selected method and scores them.

    Outputs (when output_dir or conf.output_dir is set): config.yml, observations.csv
    and truth.csv for simulated runs, <method>_trace.csv, diagnostics and heatmaps for
    the MCMC methods, armcmc_diagnostics.jsonl, timing.csv and report.csv. Everything
    except timing.csv and the JSON-lines stream is identical for a fixed config and seed.

    Raises:
        ExperimentError: a method failed, with the index of the failing pack
    """
    model = build_model(conf.model)
    out = output_dir if output_dir is not None else conf.output_dir
    if out:
        os.makedirs(out, exist_ok=True)
        save_config(conf, os.path.join(out, "config.yml"))

    if conf.dataset:
        run = load_dataset(conf, model)
    else:
        try:
            run = simulate(conf)
        except ArmcmcBaseException as exc:
            raise ExperimentError("simulation failed", nested=exc)
        if out:
            write_simulation(run, out)

    stream = run.stream
    pack_size = conf.armcmc.pack_size
    npacks = len(stream) // pack_size
    if npacks == 0:
        raise ExperimentError(f"{len(stream)} observations make no pack of {pack_size}")
    armcmc.log.info(f"identifying {conf.model}: {len(stream)} observations in {npacks} packs, "
                    f"methods {', '.join(conf.methods)}", extra=dict(boldface=True))

    traces: Dict[str, MethodTrace] = {}
    for method in conf.methods:
        if out and method == "armcmc":
            with diagnostics_stream(armcmc.log, os.path.join(out, "armcmc_diagnostics.jsonl"), method="armcmc"):
                results = IDENTIFIERS[method](conf, stream, model, npacks)
        else:
            results = IDENTIFIERS[method](conf, stream, model, npacks)
        for trace in results:
            traces[trace.name] = trace
            armcmc.log.info(f"{trace.name}: {len(trace.wall_ms)} steps, "
                            f"{trace.wall_ms.mean():.2f} ms per step", extra=dict(color="GREEN"))

    truth = mask = reference = None
    predictions = {}
    if run.truth is not None:
        truth = pack_truth(run.truth, model.param_names, pack_size, npacks)
        mask = active_packs(conf, stream, npacks)
    if conf.model == "actuator":
        sim = ActuatorSimConfig.from_section(conf.actuator, conf.sample_time)
        if run.truth is not None:
            reference = run.truth['alpha'].to_numpy()[:npacks * pack_size]
            for name, trace in traces.items():
                predictions[name] = predict_actuator_angle(stream, trace.predict_with, pack_size, sim)
    else:
        packs = partition_stream(stream, pack_size)
        reference = (run.truth['f_e'].to_numpy() if run.truth is not None
                     else stream.outputs[:, 0])[:npacks * pack_size]
        for name, trace in traces.items():
            predictions[name] = np.concatenate([model.predict_pack(trace.predict_with[pack.index], pack.inputs)[:, 0]
                                                for pack in packs])

    report = compute_metrics({name: trace.estimates for name, trace in traces.items()}, truth, model.param_names,
                             predictions, reference, mask, PREDICTION_METRICS[conf.model],
                             {name: float(trace.wall_ms.mean()) for name, trace in traces.items()})
    result = ExperimentResult(report, traces, run, out or None)
    if out:
        _write_outputs(result, conf, model, truth, write_report)
    return result
