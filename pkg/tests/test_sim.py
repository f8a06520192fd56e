import math
import numpy as np
import pytest
from armcmc.config import ControlSegment
from armcmc.exceptions import ParameterError, SingularDynamicsError
from armcmc.models import ActuatorRegressionModel
from armcmc.sim import (ActuatorSimConfig, NeedleEnvConfig, actuator_controls, default_trajectory,
                        needle_force, pressure_rate, simulate_actuator, simulate_needle_run)


def schedule(*segments):
    return tuple(ControlSegment(*segment) for segment in segments)


def test_controls():
    cfg = ActuatorSimConfig(schedule=schedule((0.0, 1.0, "charge", -0.01, 0.5, 0.4),
                                              (1.0, 2.0, "discharge", 0.02)))
    assert actuator_controls(cfg, 0.1) == pytest.approx((-0.01 * (1 + 0.5 * math.sin(2 * math.pi * 0.1 / 0.4)), 0.0))
    assert actuator_controls(cfg, 1.5) == (0.0, 0.02)
    assert actuator_controls(cfg, 2.5) == (0.0, 0.0)
    with pytest.raises(ParameterError):
        ActuatorSimConfig(schedule=schedule((0.0, 1.0, "charge", -0.01), (0.5, 2.0, "discharge", 0.01)))


def test_pressure_rate():
    cfg = ActuatorSimConfig()
    # charging command is negative with the default coefficients
    assert pressure_rate(cfg, 300.0, -0.01, 0.0) > 0
    assert pressure_rate(cfg, 300.0, 0.0, 0.01) < 0
    assert pressure_rate(cfg, 300.0, 0.0, 0.0) == 0.0
    with pytest.raises(SingularDynamicsError):
        pressure_rate(ActuatorSimConfig(q4=0.0, q5=0.0), 300.0, -0.01, 0.0)


def test_actuator_charge_discharge():
    cfg = ActuatorSimConfig(schedule=schedule((0.0, 1.0, "charge", -0.006), (1.0, 1.5, "discharge", 0.006)))
    run = simulate_actuator(cfg, 1.5, np.random.default_rng(0))
    p = run.truth['p'].to_numpy()
    assert len(run.stream) == 1500
    assert np.all(np.diff(p[:1000]) >= 0)
    assert p[999] > 600 and p[999] <= cfg.p_s
    assert np.all(np.diff(p[1001:]) <= 0)
    assert cfg.p_atm < p[-1] < 300
    assert list(run.truth['mode'][[0, 1200]]) == [1, -1]
    assert list(run.truth['theta1'][[0, 1200]]) == [cfg.q4, cfg.q6]
    # pressure drives the bending angle
    assert run.truth['alpha'].iloc[999] > 0


def test_actuator_self_consistency():
    cfg = ActuatorSimConfig(schedule=schedule((0.0, 0.5, "charge", -0.006, 0.3, 0.2),
                                              (0.7, 1.2, "discharge", 0.004, 0.3, 0.2)))
    run = simulate_actuator(cfg, 1.5, np.random.default_rng(0))
    model = ActuatorRegressionModel()
    thetas = run.truth[['theta1', 'theta2']].to_numpy()
    regressors = model.regressors(run.stream.inputs)
    predictions = np.sum(regressors * thetas, axis=1)
    assert np.max(np.abs(predictions - run.stream.outputs[:, 0])) < 1e-10
    # idle between the segments
    assert np.all(run.stream.outputs[550:650, 0] == 0)


def test_actuator_noise():
    cfg = ActuatorSimConfig(schedule=schedule((0.0, 1.0, "charge", -0.006)), noise_sigma=0.01)
    clean = simulate_actuator(ActuatorSimConfig(schedule=cfg.schedule), 1.0, np.random.default_rng(0))
    noisy = simulate_actuator(cfg, 1.0, np.random.default_rng(0))
    residual = noisy.stream.outputs[:, 0] - clean.stream.outputs[:, 0]
    assert 0.008 < residual.std() < 0.012
    assert np.array_equal(noisy.stream.inputs, clean.stream.inputs)


def test_needle_force_compositions():
    cfg = NeedleEnvConfig()
    K, B, p = cfg.K_e, cfg.B_e, cfg.p
    # free motion resets the puncture
    result = needle_force(-1.0, 2.0, 0.0, 1.0, True, cfg)
    assert (result.f_e, result.punctured, result.t_p) == (0.0, False, None)
    # sliding, before puncture
    assert abs(needle_force(2.0, 1.0, 0.0, None, False, cfg).f_e -
               (K * 2.0**p + cfg.C_p + B * 2.0**p * 1.0)) < 1e-12
    assert abs(needle_force(2.0, -1.0, 0.0, None, False, cfg).f_e -
               (K * 2.0**p - cfg.C_n - B * 2.0**p)) < 1e-12
    # stick band: static contact reproduces the stiffness
    assert abs(needle_force(2.0, 0.0, 0.0, None, False, cfg).f_e - K * 2.0**p) < 1e-12
    assert abs(needle_force(0.0, 0.001, 0.0, None, False, cfg).f_e - cfg.D_p) < 1e-12
    # crossing x1 punctures: cutting force instead of stiffness
    result = needle_force(17.0, 1.0, 3.0, None, False, cfg)
    assert result.punctured and result.t_p == 3.0
    assert abs(result.f_e - (cfg.cutting_force + cfg.C_p + B * 17.0**p)) < 1e-12
    # punctured and retracted below x2: friction only
    result = needle_force(5.0, -1.0, 4.0, 3.0, True, cfg)
    assert result.punctured and result.t_p == 3.0
    assert abs(result.f_e - (-cfg.C_n - B * 5.0**p)) < 1e-12


def test_needle_config():
    with pytest.raises(ParameterError):
        NeedleEnvConfig(x1=5.0, x2=10.0)
    assert NeedleEnvConfig().trajectory_offset == pytest.approx(0.3)
    x, x_dot = default_trajectory(NeedleEnvConfig())(2.5)
    assert x == pytest.approx(6.0 - 0.3)
    assert x_dot == pytest.approx(0.0, abs=1e-12)


def test_needle_run():
    cfg = NeedleEnvConfig(noise_sigma=0.0)
    run = simulate_needle_run(cfg, None, 10.0, np.random.default_rng(0))
    truth = run.truth
    assert len(run.stream) == 10000
    assert run.stream.input_names == ["x", "x_dot"]
    t = truth['time'].to_numpy()
    x = truth['x'].to_numpy()
    # a single exit from the tissue just before 5 s
    assert np.all(x[(t > 0.1) & (t < 4.9)] >= 0)
    assert np.all(x[t > 4.93] < 0)
    assert np.all(truth['f_e'][t > 4.93] == 0)
    assert np.all(truth['K_e'][t > 4.93] == 0)
    assert np.all(truth['K_e'][(t > 1) & (t < 4)] == cfg.K_e)
    assert not truth['punctured'].any()
    assert np.array_equal(run.stream.outputs[:, 0], truth['f_e'].to_numpy())


def test_needle_noise_and_puncture():
    cfg = NeedleEnvConfig(noise_fraction=0.01)
    run = simulate_needle_run(cfg, None, 10.0, np.random.default_rng(1))
    f = run.truth['f_e'].to_numpy()
    residual = run.stream.outputs[:, 0] - f
    assert residual.std() == pytest.approx(0.01 * (f.max() - f.min()), rel=0.1)

    deep = NeedleEnvConfig(amplitude=20.0, noise_sigma=0.0)
    run = simulate_needle_run(deep, None, 10.0, np.random.default_rng(1))
    truth = run.truth
    assert truth['punctured'].any()
    punctured = truth['punctured'] == 1
    assert np.all(truth['K_e'][punctured] == 0)
    assert np.all(truth['B_e'][punctured] == deep.B_e)
    assert truth['x'][punctured].max() > deep.x1


def test_shared_pressure_rate():
    from armcmc.baselines import ActuatorParticleFilter
    from armcmc.models import actuator_pressure_rate
    cfg = ActuatorSimConfig()
    pf = ActuatorParticleFilter(cfg.q1, cfg.q2, cfg.q3, cfg.p_atm, cfg.p_s, cfg.dt,
                                [-1.5e-4, 0.0], [1.0e-4, 1.0e-8], [1.0, 20.0])
    p = np.array([150.0, 300.0, 600.0])
    for u_c, u_d, theta in ((-0.01, 0.0, cfg.charge_theta), (0.0, 0.01, cfg.discharge_theta),
                            (0.0, 0.0, cfg.charge_theta)):
        expected = [pressure_rate(cfg, x, u_c, u_d) for x in p]
        assert pf.pressure_rate(p, theta[0], theta[1], u_c, u_d) == pytest.approx(expected, rel=1e-12)
    # a singular denominator gives zero unless strict
    rates = actuator_pressure_rate(p, np.array([0.0, 1e-4, 0.0]), 0.0, -0.01, 0.0, cfg.p_s, cfg.p_atm)
    assert rates[0] == 0.0 and rates[2] == 0.0 and rates[1] < 0
    with pytest.raises(SingularDynamicsError):
        actuator_pressure_rate(p, 0.0, 0.0, -0.01, 0.0, cfg.p_s, cfg.p_atm, strict=True)
