"""Ground-truth data generators: the fluid soft bending actuator and a needle
insertion environment with puncture, Karnopp friction and cutting force."""
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
import pandas as pd

import armcmc
from .config import ControlSegment
from .core import ObservationStream
from .exceptions import ParameterError, SingularDynamicsError
from .models import ActuatorRegressionModel, HuntCrossleyModel, actuator_output, actuator_pressure_rate, rk4_step


@dataclass(frozen=True)
class SimulationRun:
    """Observations plus a parallel truth table, one row per sample"""
    stream: ObservationStream
    truth: pd.DataFrame


@dataclass(frozen=True)
class ActuatorSimConfig:
    """Actuator simulation.

    Valve commands are signed: with the default coefficients a negative charging
    command raises the pressure toward p_s and a positive discharging command lowers
    it toward p_atm.
    """
    q1: float = 1408.50
    q2: float = 132.28
    q3: float = 3319.40
    q4: float = -2.14e-4
    q5: float = 6.12e-9
    q6: float = -9.76e-5
    q7: float = -1.90e-9
    p_atm: float = 101.3
    p_s: float = 800.0
    dt: float = 0.001
    schedule: Tuple[ControlSegment, ...] = ()
    noise_sigma: float = 0.0
    input_noise_sigma: float = 0.0
    p0: Optional[float] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError(f"time step must be positive, got {self.dt}")
        object.__setattr__(self, "schedule", tuple(self.schedule))
        charge = [seg for seg in self.schedule if seg.channel == "charge"]
        discharge = [seg for seg in self.schedule if seg.channel == "discharge"]
        for a in charge:
            for b in discharge:
                if a.start < b.end and b.start < a.end:
                    raise ParameterError(f"charge segment [{a.start}, {a.end}] overlaps discharge segment "
                                         f"[{b.start}, {b.end}]: valves are mutually exclusive")

    @classmethod
    def from_section(cls, section, dt: float) -> "ActuatorSimConfig":
        return cls(q1=section.q1, q2=section.q2, q3=section.q3, q4=section.q4, q5=section.q5,
                   q6=section.q6, q7=section.q7, p_atm=section.p_atm, p_s=section.p_s, dt=dt,
                   schedule=tuple(section.schedule), noise_sigma=section.noise_sigma,
                   input_noise_sigma=section.input_noise_sigma, p0=section.p0)

    @property
    def charge_theta(self) -> np.ndarray:
        return np.array([self.q4, self.q5])

    @property
    def discharge_theta(self) -> np.ndarray:
        return np.array([self.q6, self.q7])


def actuator_controls(cfg: ActuatorSimConfig, t: float) -> Tuple[float, float]:
    """(u_c, u_d) at time t from the control schedule"""
    u_c = u_d = 0.0
    for seg in cfg.schedule:
        if seg.start <= t < seg.end:
            value = seg.amplitude * (1.0 + seg.modulation * math.sin(2 * math.pi * t / seg.mod_period))
            if seg.channel == "charge":
                u_c += value
            else:
                u_d += value
    return u_c, u_d


def pressure_rate(cfg: ActuatorSimConfig, p: float, u_c: float, u_d: float) -> float:
    """p_dot from the active valve equation: u sign(dp) sqrt(|dp|) / (theta1 + theta2 p)

    Raises:
        SingularDynamicsError: theta1 + theta2 p vanishes
    """
    theta = cfg.charge_theta if u_c != 0 else cfg.discharge_theta
    return float(actuator_pressure_rate(p, theta[0], theta[1], u_c, u_d, cfg.p_s, cfg.p_atm, strict=True))


def simulate_actuator(cfg: ActuatorSimConfig, duration: float, rng: np.random.Generator) -> SimulationRun:
    """Integrates the actuator with RK4, holding the valve commands over each sample.

    Each sample logs inputs [u_c, u_d, p, p_dot] and the output u sign(dp) sqrt(|dp|),
    with Gaussian noise on the output (and on the logged p, p_dot if input_noise_sigma
    is set). The truth table holds alpha, alpha_dot, p and the active (theta1, theta2);
    while both valves are closed the last active pair is kept.
    """
    n = int(round(duration / cfg.dt))
    p0 = cfg.p_atm if cfg.p0 is None else cfg.p0
    state = np.array([0.0, 0.0, p0])
    inputs = np.empty((n, 4))
    outputs = np.empty(n)
    truth = np.empty((n, 6))
    theta = cfg.charge_theta
    mode = 0

    for i in range(n):
        t = i * cfg.dt
        u_c, u_d = actuator_controls(cfg, t)
        p = state[2]
        p_dot = pressure_rate(cfg, p, u_c, u_d)
        if u_c != 0:
            theta, mode, y = cfg.charge_theta, 1, actuator_output(u_c, cfg.p_s - p)
        elif u_d != 0:
            theta, mode, y = cfg.discharge_theta, -1, actuator_output(u_d, p - cfg.p_atm)
        else:
            mode, y = 0, 0.0
        inputs[i] = u_c, u_d, p, p_dot
        outputs[i] = y
        truth[i] = state[0], state[1], p, theta[0], theta[1], mode

        def deriv(s, x):
            return np.array([x[1],
                             cfg.q1 * (x[2] - cfg.p_atm) - cfg.q2 * x[1] - cfg.q3 * x[0],
                             pressure_rate(cfg, x[2], u_c, u_d)])

        state = rk4_step(deriv, t, state, cfg.dt)
        if not np.all(np.isfinite(state)):
            raise SingularDynamicsError(f"actuator state diverged at t={t:.3f}s")

    if cfg.noise_sigma > 0:
        outputs = outputs + cfg.noise_sigma * rng.standard_normal(n)
    if cfg.input_noise_sigma > 0:
        inputs[:, 2:] += cfg.input_noise_sigma * rng.standard_normal((n, 2))

    stream = ObservationStream(inputs, outputs, np.arange(n),
                               ActuatorRegressionModel.input_names, ActuatorRegressionModel.output_names)
    frame = pd.DataFrame(dict(time_index=np.arange(n), time=np.arange(n) * cfg.dt,
                              alpha=truth[:, 0], alpha_dot=truth[:, 1], p=truth[:, 2],
                              theta1=truth[:, 3], theta2=truth[:, 4], mode=truth[:, 5].astype(int)))
    armcmc.log.info(f"simulated actuator: {n} samples, {np.count_nonzero(truth[:, 5] == 1)} charging, "
                    f"{np.count_nonzero(truth[:, 5] == -1)} discharging")
    return SimulationRun(stream, frame)


@dataclass(frozen=True)
class NeedleEnvConfig:
    """Needle insertion environment. Positions in mm, velocities in mm/s, forces in N."""
    x1: float = 16.65
    x2: float = 10.21
    K_e: float = 1.2
    B_e: float = 0.9
    p: float = 1.25
    C_n: float = -11.96e-3
    C_p: float = 10.57e-3
    D_n: float = -0.01823
    D_p: float = 0.01845
    dv_half: float = 0.005
    cutting_force: float = 0.94
    amplitude: float = 6.0
    offset: Optional[float] = None
    period: float = 10.0
    dt: float = 0.001
    noise_fraction: float = 0.01
    noise_sigma: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.x2 < self.x1:
            raise ParameterError(f"need 0 < x2 < x1, got x1={self.x1}, x2={self.x2}")
        if not self.dt > 0:
            raise ParameterError(f"time step must be positive, got {self.dt}")

    @classmethod
    def from_section(cls, section, dt: float) -> "NeedleEnvConfig":
        return cls(x1=section.x1, x2=section.x2, K_e=section.K_e, B_e=section.B_e, p=section.p,
                   C_n=section.C_n, C_p=section.C_p, D_n=section.D_n, D_p=section.D_p,
                   dv_half=section.dv_half, cutting_force=section.cutting_force,
                   amplitude=section.amplitude, offset=section.offset, period=section.period, dt=dt,
                   noise_fraction=section.noise_fraction, noise_sigma=section.noise_sigma)

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.K_e, self.B_e, self.p])

    @property
    def trajectory_offset(self) -> float:
        return 0.05 * self.amplitude if self.offset is None else self.offset


@dataclass(frozen=True)
class NeedleForce:
    f_e: float
    punctured: bool
    t_p: Optional[float]


def needle_force(x: float, x_dot: float, t: float, t_p: Optional[float], punctured: bool,
                 cfg: NeedleEnvConfig) -> NeedleForce:
    """Tip force as the sum of stiffness, friction and cutting terms.

    Out of contact (x < 0) the force is zero and the puncture state resets. Before
    the puncture the stiffness is K_e x^p; once x passes x1 the tissue is punctured,
    stiffness vanishes and the cutting force acts beyond x2. Within the Karnopp stick
    band the total force is max(D, F_a) with F_a the stiffness plus cutting force.
    """
    if x < 0:
        return NeedleForce(0.0, False, None)
    if not punctured and x > cfg.x1:
        punctured, t_p = True, t

    xp = x**cfg.p
    if punctured:
        stiffness = 0.0
        cutting = cfg.cutting_force if x > cfg.x2 else 0.0
    else:
        stiffness = cfg.K_e * xp
        cutting = 0.0
    applied = stiffness + cutting

    if x_dot <= -cfg.dv_half:
        friction = cfg.C_n * math.copysign(1.0, x_dot) + cfg.B_e * xp * x_dot
    elif x_dot >= cfg.dv_half:
        friction = cfg.C_p * math.copysign(1.0, x_dot) + cfg.B_e * xp * x_dot
    elif x_dot <= 0:
        friction = max(cfg.D_n, applied) - applied
    else:
        friction = max(cfg.D_p, applied) - applied

    return NeedleForce(applied + friction, punctured, t_p)


def default_trajectory(cfg: NeedleEnvConfig) -> Callable[[float], Tuple[float, float]]:
    """x(t) = A sin(2 pi t / period) - offset: insertion, retraction and a single exit
    from the tissue just before half a period"""
    amplitude, offset, omega = cfg.amplitude, cfg.trajectory_offset, 2 * math.pi / cfg.period

    def trajectory(t: float) -> Tuple[float, float]:
        return amplitude * math.sin(omega * t) - offset, amplitude * omega * math.cos(omega * t)

    return trajectory


def simulate_needle_run(cfg: NeedleEnvConfig, trajectory: Optional[Callable], duration: float,
                        rng: np.random.Generator) -> SimulationRun:
    """Samples the trajectory at period dt and records the noisy tip force.

    Inputs are [x, x_dot], the output is f_e. Noise is Gaussian with noise_sigma if
    given, else noise_fraction times the range of the noiseless force. The truth
    table holds the noiseless force, the puncture flag and the parameters in effect:
    (K_e, B_e, p) in contact, (0, B_e, p) once punctured and zeros in free motion.
    """
    trajectory = trajectory or default_trajectory(cfg)
    n = int(round(duration / cfg.dt))
    x = np.empty(n)
    x_dot = np.empty(n)
    force = np.empty(n)
    punctured_flags = np.zeros(n, dtype=bool)
    params = np.zeros((n, 3))
    punctured, t_p = False, None

    for i in range(n):
        t = i * cfg.dt
        x[i], x_dot[i] = trajectory(t)
        result = needle_force(x[i], x_dot[i], t, t_p, punctured, cfg)
        punctured, t_p = result.punctured, result.t_p
        force[i] = result.f_e
        punctured_flags[i] = punctured
        if x[i] >= 0:
            params[i] = (0.0 if punctured else cfg.K_e), cfg.B_e, cfg.p

    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(x_dot))):
        raise ParameterError("needle trajectory is not finite over the run")

    sigma = cfg.noise_sigma
    if sigma is None:
        sigma = cfg.noise_fraction * (force.max() - force.min()) if n else 0.0
    measured = force + sigma * rng.standard_normal(n) if sigma > 0 else force.copy()

    stream = ObservationStream(np.column_stack([x, x_dot]), measured, np.arange(n),
                               HuntCrossleyModel.input_names, HuntCrossleyModel.output_names)
    frame = pd.DataFrame(dict(time_index=np.arange(n), time=np.arange(n) * cfg.dt, x=x, x_dot=x_dot,
                              f_e=force, punctured=punctured_flags.astype(int),
                              K_e=params[:, 0], B_e=params[:, 1], p=params[:, 2]))
    armcmc.log.info(f"simulated needle run: {n} samples, {np.count_nonzero(x >= 0)} in contact, "
                    f"noise sigma {sigma:.4g} N")
    return SimulationRun(stream, frame)
