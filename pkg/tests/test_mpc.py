import numpy as np
import pytest

from chargelab import model, mpc
from chargelab.harness import AMBIENT_PRESETS
from chargelab.model import DEFAULT_PARAMS, celsius
from chargelab.mpc import MpcConfig, MpcSolution, WarmStart
from chargelab.nlp import Status


def test_dimensions():
    x0 = np.array([0.1, 0.1, celsius(25), celsius(25)])
    tr = mpc.build_problem(x0, celsius(25), MpcConfig(N=40))
    assert tr.problem.n == 240
    assert tr.problem.m_eq == 160


def test_objective_zero_at_target():
    x0 = np.array([0.9, 0.9, celsius(25), celsius(25)])
    cfg = MpcConfig()
    tr = mpc.build_problem(x0, celsius(25), cfg)
    X = np.tile(x0, (cfg.N + 1, 1))
    U = np.tile([1.2, -3.0], (cfg.N, 1))
    assert tr.objective_value(X, U) == pytest.approx(0.0, abs=1e-20)


def test_temperature_tracking_objective():
    ref = celsius(45)
    x0 = np.array([0.9, 0.9, ref - 5, ref - 5])
    cfg = MpcConfig(w4=0.5, T_core_ref=ref)
    tr = mpc.build_problem(x0, celsius(25), cfg)
    X = np.tile(x0, (cfg.N + 1, 1))
    U = np.zeros((cfg.N, 2))
    assert tr.objective_value(X, U) == pytest.approx(512.5, rel=1e-12)


def test_w4_requires_reference():
    with pytest.raises(ValueError):
        MpcConfig(w4=0.5)
    with pytest.raises(ValueError):
        MpcConfig(N=1)


def test_zero_input_guess_at_equilibrium():
    x0 = np.array([0.4, 0.4, celsius(25), celsius(25)])
    X, U = mpc.initial_guess(x0, celsius(25), MpcConfig())
    np.testing.assert_allclose(X, np.tile(x0, (41, 1)), atol=1e-15)
    assert not U.any()


def test_heated_rollout_saturates_when_cold():
    T_amb, x0 = AMBIENT_PRESETS["low"]
    X, U = mpc.initial_guess(np.array(x0), T_amb, MpcConfig(warm_start=WarmStart.HEATED_ROLLOUT))
    cold = X[:-1, model.TC] < celsius(45) - 5
    assert cold[0] and np.all(U[cold, 1] == 8.0)
    assert np.all(U[:, 0] == 3.0)


def test_at_target_gives_small_current():
    x0 = np.array([0.9, 0.9, celsius(25), celsius(25)])
    sol = mpc.step(x0, celsius(25), MpcConfig())
    assert sol.status is Status.OPTIMAL
    assert sol.objective < 1e-6
    assert np.max(np.abs(sol.controls[:, 0])) < 1e-2


def test_mild_first_step_rides_current_bound():
    T_amb, x0 = AMBIENT_PRESETS["mild"]
    sol = mpc.step(np.array(x0), T_amb, MpcConfig())
    assert sol.status is Status.OPTIMAL
    assert sol.controls[0, 0] == pytest.approx(3.0, abs=1e-6)


def test_high_ambient_without_thermal_control_is_infeasible():
    T_amb, x0 = AMBIENT_PRESETS["high"]
    cfg = MpcConfig(constraints=MpcConfig().constraints.with_overrides(pact_bounds=(0.0, 0.0)))
    sol = mpc.step(np.array(x0), T_amb, cfg)
    assert sol.status is Status.INFEASIBLE


def test_rate_form_first_step():
    T_amb, x0 = AMBIENT_PRESETS["mild"]
    cfg = MpcConfig(warm_start=WarmStart.HEATED_ROLLOUT)
    sol = mpc.step(np.array(x0 + (0.0,)), T_amb, cfg)
    assert sol.form == "rate" and sol.status is Status.OPTIMAL
    assert sol.states.shape == (41, 5)
    assert sol.applied_input(0)[0] == 0.0


def test_fixed_pact_pins_thermal_input():
    T_amb, x0 = AMBIENT_PRESETS["mild"]
    sol = mpc.step(np.array(x0), T_amb, MpcConfig(fixed_pact=2.5))
    np.testing.assert_array_equal(sol.controls[:, 1], 2.5)


def test_prediction_consistent_with_model():
    T_amb, x0 = AMBIENT_PRESETS["mild"]
    sol = mpc.step(np.array(x0), T_amb, MpcConfig())
    roll = model.rollout(np.array(x0), sol.controls, T_amb, 5.0, DEFAULT_PARAMS)
    np.testing.assert_allclose(roll, sol.states, atol=1e-7)


class TestInterpolate:
    sol = MpcSolution(controls=np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]),
                      states=np.zeros((4, 4)), objective=0.0, status=Status.OPTIMAL, solve_time=0.0)

    def test_hold(self):
        assert mpc.interpolate_control(self.sol, 10.0, 10.0, 5.0) == (1.0, 2.0)
        assert mpc.interpolate_control(self.sol, 14.9, 10.0, 5.0) == (1.0, 2.0)
        assert mpc.interpolate_control(self.sol, 15.0, 10.0, 5.0) == (3.0, 4.0)

    def test_outside_window(self):
        with pytest.raises(ValueError):
            mpc.interpolate_control(self.sol, 9.0, 10.0, 5.0)
        with pytest.raises(ValueError):
            mpc.interpolate_control(self.sol, 25.0, 10.0, 5.0)
