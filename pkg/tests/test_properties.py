"""Randomised identities of the model, constraints, filter and solver."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chargelab import constraints, ekf, model, nlp
from chargelab.model import DEFAULT_PARAMS as PAR, celsius
from chargelab.pid import PidState, pid_step

PROPS = settings(max_examples=200, deadline=None, derandomize=True)

unit = st.floats(0.0, 1.0)
temps = st.floats(celsius(-30.0), celsius(60.0))
currents = st.floats(-3.0, 3.0)


def random_states(rng, n, augmented=False):
    x = np.column_stack([rng.uniform(0, 1, n), rng.uniform(0, 1, n),
                         rng.uniform(celsius(-30), celsius(60), n),
                         rng.uniform(celsius(-30), celsius(60), n)])
    if augmented:
        x = np.column_stack([x, rng.uniform(0, 3, n)])
    return x


def central_difference(fun, x, rel_step=1e-3):
    """Richardson-extrapolated central differences (fourth order)."""
    x = np.asarray(x, dtype=float)

    def diff(k, h):
        e = np.zeros_like(x)
        e[k] = h
        return (np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h)

    cols = []
    for k in range(x.size):
        h = rel_step * max(1.0, abs(x[k]))
        cols.append((4 * diff(k, h / 2) - diff(k, h)) / 3)
    return np.column_stack(cols)


def assert_jacobian_close(J, J_fd, rtol=1e-5, floor=1e-8):
    err = np.abs(J - J_fd)
    assert np.all(err <= rtol * np.maximum(np.abs(J), floor)), np.max(err)


class TestModelProperties:
    def test_charge_conservation(self):
        rng = np.random.default_rng(101)
        x = random_states(rng, 10_000)
        u = np.column_stack([rng.uniform(-3, 3, x.shape[0]), rng.uniform(-8, 8, x.shape[0])])
        d = model.derivative(x, u, rng.uniform(celsius(-30), celsius(70), x.shape[0]))
        net = PAR.C_b * d[:, 0] + PAR.C_s * d[:, 1]
        scale = np.maximum.reduce([np.abs(u[:, 0]), np.abs(PAR.C_b * d[:, 0]), np.full(x.shape[0], 1e-300)])
        assert np.max(np.abs(net - u[:, 0]) / scale) <= 1e-12

    def test_soc_rate_follows_current(self):
        rng = np.random.default_rng(102)
        x = random_states(rng, 1000)
        I = rng.uniform(0, 3, 1000)
        d = model.derivative(x, np.column_stack([I, np.zeros(1000)]), celsius(25))
        cb, cs = model.soc_weights()
        np.testing.assert_allclose(cb * d[:, 0] + cs * d[:, 1], I / PAR.capacity, rtol=1e-10, atol=1e-18)

    @PROPS
    @given(temps, st.floats(1.0, 200.0))
    def test_arrhenius_positive(self, T, kappa):
        assert model.arrhenius(T, kappa) > 0

    @PROPS
    @given(unit, temps, currents)
    def test_heat_is_ohmic_on_diagonal(self, v, T, I):
        x = np.array([v, v, T, T])
        expected = I ** 2 * model.internal_resistance(v, T)
        # V - h(SoC) leaves h(V_s) - h(SoC) ~ 1e-15 of rounding, scaled by I
        assert model.heat_generation(x, I) == pytest.approx(expected, rel=1e-12, abs=1e-13 * abs(I))

    def test_thermal_relaxation(self):
        T_amb = celsius(10.0)
        x = np.array([0.2, 0.7, celsius(45.0), celsius(30.0)])
        charge = PAR.C_b * x[0] + PAR.C_s * x[1]
        gap = np.inf
        for _ in range(6000):
            x = model.euler_step(x, (0.0, 0.0), T_amb, 1.0)
            g = max(abs(x[2] - T_amb), abs(x[3] - T_amb))
            assert g <= gap
            gap = g
            assert PAR.C_b * x[0] + PAR.C_s * x[1] == pytest.approx(charge, rel=1e-12)
        assert gap < 1e-3
        avg = charge / (PAR.C_b + PAR.C_s)
        assert x[0] == pytest.approx(avg, abs=1e-9) and x[1] == pytest.approx(avg, abs=1e-9)

    def test_euler_first_order_against_rk4(self):
        x0 = np.array([0.3, 0.35, celsius(20.0), celsius(22.0)])
        u, T_amb, horizon = (2.5, 4.0), celsius(15.0), 20.0

        def rk4(x, h, steps):
            f = lambda z: model.derivative(z, u, T_amb)
            for _ in range(steps):
                k1 = f(x)
                k2 = f(x + 0.5 * h * k1)
                k3 = f(x + 0.5 * h * k2)
                k4 = f(x + h * k3)
                x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            return x

        ref = rk4(x0, 0.01, 2000)
        errs = []
        for dt in (1.0, 0.5, 0.25):
            x = x0.copy()
            for _ in range(int(horizon / dt)):
                x = model.euler_step(x, u, T_amb, dt)
            errs.append(np.max(np.abs(x - ref)))
        for a, b in zip(errs, errs[1:]):
            assert 1.8 < a / b < 2.2

    def test_continuous_jacobians(self):
        rng = np.random.default_rng(103)
        for x in random_states(rng, 100):
            u = np.array([rng.uniform(-3, 3), rng.uniform(-8, 8)])
            A, B = model.derivative_jacobians(x, u, celsius(25))
            assert_jacobian_close(A, central_difference(lambda z: model.derivative(z, u, celsius(25)), x))
            assert_jacobian_close(B, central_difference(lambda w: model.derivative(x, w, celsius(25)), u))

    def test_discrete_and_output_jacobians(self):
        rng = np.random.default_rng(104)
        T_amb = celsius(-5.0)
        for x in random_states(rng, 100, augmented=True):
            u = np.array([rng.uniform(-0.1, 0.1), rng.uniform(-8, 8)])
            F = ekf.jacobian_f(x, u, T_amb, 1.0)
            assert_jacobian_close(F, central_difference(lambda z: model.euler_step(z, u, T_amb, 1.0), x))
            H = ekf.jacobian_h(x)
            assert_jacobian_close(H, central_difference(lambda z: model.output(z, None), x))


class TestConstraintProperties:
    @PROPS
    @given(unit, unit, st.floats(1e-4, 0.5))
    def test_gradient_increasing_in_surface_voltage(self, vb, vs, dv):
        assert constraints.gradient_residual(vb, vs + dv) > constraints.gradient_residual(vb, vs)

    @PROPS
    @given(unit, unit, st.sampled_from([0.0, 0.05]))
    def test_gradient_forms_agree(self, vb, vs, margin):
        cset = constraints.DEFAULT_CONSTRAINTS.with_overrides(soc_margin=margin)
        a = constraints.gradient_residual(vb, vs, cset)
        b = constraints.gradient_residual_direct(vb, vs, cset)
        assert abs(a - b) <= 1e-12


class TestPidProperties:
    @PROPS
    @given(st.lists(st.tuples(temps, st.floats(-0.1, 0.1)), min_size=1, max_size=50))
    def test_output_clipped_and_integral_bounded(self, seq):
        pid = PidState(T_core_ref=celsius(45.0))
        for T, dT in seq:
            p, pid = pid_step(pid, T, dT)
            assert -8.0 <= p <= 8.0
        assert abs(pid.integral) <= 100.0 * len(seq)

    @PROPS
    @given(temps, temps)
    def test_proportional_only_is_monotone(self, T1, T2):
        pid = PidState(T_core_ref=celsius(30.0), KI=0.0, KD=0.0)
        lo, hi = sorted((T1, T2))
        # larger error (colder core) never asks for less heat
        assert pid_step(pid, lo, 0.0)[0] >= pid_step(pid, hi, 0.0)[0]


class TestFilterProperties:
    @PROPS
    @given(st.integers(0, 2 ** 32 - 1))
    def test_joseph_equivalence_with_optimal_gain(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(5, 5))
        P = A @ A.T + 0.1 * np.eye(5)
        H = rng.normal(size=(3, 5))
        R = np.diag(rng.uniform(1e-3, 1.0, 3))
        K = P @ H.T @ np.linalg.inv(H @ P @ H.T + R)
        simple = (np.eye(5) - K @ H) @ P
        np.testing.assert_allclose(simple, ekf.joseph_update(P, H, R, K), atol=1e-10 * np.abs(P).max())

    def test_noiseless_filter_tracks_truth(self):
        x = np.array([0.1, 0.1, celsius(25.0), celsius(25.0), 0.0])
        est = ekf.EstimatorState(xhat=x.copy(), P=ekf.DEFAULT_P0)
        worst = 0.0
        for i in range(1000):
            u = np.array([0.02 if i < 150 else -0.001, 4.0 * np.sin(i / 50)])
            est = ekf.estimate(est, u, model.output(x := model.euler_step(x, u, celsius(25), 1.0), None),
                               celsius(25))
            worst = max(worst, float(np.max(np.abs(est.xhat - x))))
            assert np.linalg.eigvalsh(est.P)[0] >= -1e-10
            assert np.array_equal(est.P, est.P.T)
        assert worst <= 1e-9


class TestSolverProperties:
    def test_repeated_solves_are_bitwise_identical(self):
        def f(x):
            return float((x[0] - 1) ** 2 + 10 * (x[1] - x[0] ** 2) ** 2), np.array(
                [2 * (x[0] - 1) - 40 * x[0] * (x[1] - x[0] ** 2), 20 * (x[1] - x[0] ** 2)])

        def g(x):
            return np.array([x[0] ** 2 + x[1] ** 2 - 1.5]), np.array([[2 * x[0], 2 * x[1]]])

        def problem():
            return nlp.NlpProblem(n=2, objective=f, lower=np.full(2, -2.0), upper=np.full(2, 2.0),
                                  x0=np.array([-1.0, 1.5]), ineq=g, m_ineq=1)

        a, b = nlp.solve(problem()), nlp.solve(problem())
        assert a.status is nlp.Status.OPTIMAL
        assert a.iterations == b.iterations and np.array_equal(a.x, b.x)
