"""Parametric models: soft-actuator pressure regression and Hunt-Crossley contact force.

Units: pressures in kPa, needle positions in mm, velocities in mm/s, forces in N.
"""
import math
from typing import Callable, Tuple

import numpy as np

from .core import ParametricModel
from .exceptions import LinearizationError, ModelError, SingularDynamicsError

# |theta1 + theta2 p| below this makes the pressure equation singular
SINGULAR_TOL = 1e-15


def rk4_step(deriv: Callable, t: float, state: np.ndarray, dt: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step for d(state)/dt = deriv(t, state)"""
    k1 = deriv(t, state)
    k2 = deriv(t + 0.5 * dt, state + 0.5 * dt * k1)
    k3 = deriv(t + 0.5 * dt, state + 0.5 * dt * k2)
    k4 = deriv(t + dt, state + dt * k3)
    return state + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def actuator_predict(theta, p_dot, p):
    """theta1 p_dot + theta2 p_dot p"""
    return theta[0] * p_dot + theta[1] * p_dot * p


def actuator_output(u, delta_p):
    """Observed left-hand side u sign(dp) sqrt(|dp|)"""
    return u * np.sign(delta_p) * np.sqrt(np.abs(delta_p))


def actuator_pressure_rate(p, theta1, theta2, u_c: float, u_d: float, p_s: float, p_atm: float,
                           strict: bool = False):
    """p_dot from the active valve equation: u sign(dp) sqrt(|dp|) / (theta1 + theta2 p).

    Broadcasts over p and the thetas. With both valves closed the rate is 0. A vanishing
    denominator gives a zero rate, or raises SingularDynamicsError if strict is set.
    """
    if u_c != 0:
        u, delta_p = u_c, p_s - p
    elif u_d != 0:
        u, delta_p = u_d, p - p_atm
    else:
        return np.zeros(np.broadcast(p, theta1, theta2).shape)
    denominator = theta1 + theta2 * p
    singular = np.abs(denominator) < SINGULAR_TOL
    if strict and np.any(singular):
        raise SingularDynamicsError(f"pressure dynamics singular at p={p}")
    with np.errstate(all="ignore"):
        rate = actuator_output(u, delta_p) / np.where(singular, 1.0, denominator)
    return np.where(singular, 0.0, rate)


class ActuatorRegressionModel(ParametricModel):
    """Pressure regression of a fluid bending actuator.

    Inputs are [u_c, u_d, p, p_dot], the output is u sign(dp) sqrt(|dp|), and the
    prediction theta1 p_dot + theta2 p_dot p is linear in the parameters. Which
    (theta1, theta2) pair applies depends on the active valve.
    """
    param_names = ["theta1", "theta2"]
    input_names = ["u_c", "u_d", "p", "p_dot"]
    output_names = ["y"]

    def predict_many(self, thetas, inputs):
        thetas = np.atleast_2d(thetas)
        p, p_dot = inputs[:, 2], inputs[:, 3]
        return actuator_predict((thetas[:, 0:1], thetas[:, 1:2]), p_dot[None, :], p[None, :])[:, :, None]

    @staticmethod
    def regressors(inputs) -> np.ndarray:
        """(N, 2) regressor rows [p_dot, p_dot p]"""
        inputs = np.asarray(inputs, dtype=float)
        return np.column_stack([inputs[:, 3], inputs[:, 3] * inputs[:, 2]])

    @staticmethod
    def valve_mode(inputs) -> np.ndarray:
        """+1 where the charging valve is active, -1 where the discharging valve is, 0 otherwise"""
        inputs = np.asarray(inputs, dtype=float)
        return np.where(inputs[:, 0] != 0, 1, np.where(inputs[:, 1] != 0, -1, 0))


def hunt_crossley_force(theta, x: float, x_dot: float) -> float:
    """K_e x^p + B_e x^p x_dot in contact (x >= 0), 0 in free motion"""
    K_e, B_e, p = theta
    if x < 0:
        return 0.0
    if not math.isfinite(p):
        raise ModelError(f"non-finite Hunt-Crossley exponent {p}")
    xp = x**p
    return K_e * xp + B_e * xp * x_dot


class HuntCrossleyModel(ParametricModel):
    param_names = ["K_e", "B_e", "p"]
    input_names = ["x", "x_dot"]
    output_names = ["f_e"]

    def predict_many(self, thetas, inputs):
        thetas = np.atleast_2d(thetas)
        x, x_dot = inputs[:, 0], inputs[:, 1]
        contact = x >= 0
        with np.errstate(all="ignore"):
            xp = np.where(contact, x, 0.0)[None, :] ** thetas[:, 2:3]
            force = xp * (thetas[:, 0:1] + thetas[:, 1:2] * x_dot[None, :])
        return np.where(contact[None, :], force, 0.0)[:, :, None]


def hc_log_output(f_e: float, x_s: float, x_dot_s: float) -> Tuple[float, np.ndarray]:
    """Log-linear regression sample: y_lin = log f_e and U = [1, x_dot_s, log x_s].

    With theta_lin = [log K_e, B_e/K_e, p], U theta_lin approximates y_lin when
    B_e/K_e x_dot_s is small.
    """
    if not f_e > 0 or not x_s > 0:
        raise LinearizationError(f"log-linearization undefined for f_e={f_e}, x={x_s}")
    return math.log(f_e), np.array([1.0, x_dot_s, math.log(x_s)])


def hc_regressors(inputs, outputs) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized hc_log_output over a pack. Returns (mask, U, y_lin) for the rows where
    both force and position are positive."""
    x, x_dot = inputs[:, 0], inputs[:, 1]
    f = outputs[:, 0]
    mask = (f > 0) & (x > 0)
    U = np.column_stack([np.ones(mask.sum()), x_dot[mask], np.log(x[mask])])
    return mask, U, np.log(f[mask])


def hc_theta_lin(theta) -> np.ndarray:
    K_e, B_e, p = theta
    if not K_e > 0:
        raise LinearizationError(f"log-linear parameters need K_e > 0, got {K_e}")
    return np.array([math.log(K_e), B_e / K_e, p])


def hc_theta_from_lin(theta_lin) -> np.ndarray:
    log_K, ratio, p = theta_lin
    K_e = math.exp(log_K)
    return np.array([K_e, ratio * K_e, p])


def actuator_angle_simulate(p_traj, q1: float, q2: float, q3: float, dt: float,
                            p_atm: float = 101.3, alpha0: float = 0.0, alpha_dot0: float = 0.0) -> np.ndarray:
    """Integrates alpha'' = q1 (p - p_atm) - q2 alpha' - q3 alpha with RK4 over a pressure trace.

    Pressure is interpolated linearly between samples. Returns alpha at each sample
    of p_traj, starting from alpha0 (at rest at the origin by default).
    """
    p_traj = np.asarray(p_traj, dtype=float)
    if not dt > 0:
        raise ModelError(f"time step must be positive, got {dt}")
    if p_traj.ndim != 1 or len(p_traj) == 0:
        raise ModelError("pressure trajectory must be a non-empty 1-D sequence")
    alpha = np.empty(len(p_traj))
    state = np.array([alpha0, alpha_dot0])
    alpha[0] = alpha0
    for i in range(len(p_traj) - 1):
        p_start, p_end = p_traj[i], p_traj[i + 1]

        def deriv(s, y):
            p = p_start + (p_end - p_start) * s / dt
            return np.array([y[1], q1 * (p - p_atm) - q2 * y[1] - q3 * y[0]])

        state = rk4_step(deriv, 0.0, state, dt)
        alpha[i + 1] = state[0]
    return alpha
