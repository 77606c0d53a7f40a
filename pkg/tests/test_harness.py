import numpy as np
import pytest

from chargelab import harness, model
from chargelab.harness import Scenario, StepLog, infeasibility_policy, strategy
from chargelab.model import celsius

BOX_I, BOX_P = (0.0, 3.0), (-8.0, 8.0)


class TestFallbackPolicy:
    def test_no_history_gives_zero_input(self):
        assert infeasibility_policy(None, None, strategy("P"), BOX_I, BOX_P) == (0.0, 0.0)

    def test_pid_strategy_keeps_pid_power(self):
        u = infeasibility_policy(None, None, strategy("D"), BOX_I, (-3.0, -3.0), -3.0)
        assert u == (0.0, -3.0)

    def test_pid_output_ignored_without_pid(self):
        assert infeasibility_policy(None, None, strategy("P"), BOX_I, BOX_P, 5.0) == (0.0, 0.0)

    def test_restoration_iterate_preferred_and_clamped(self):
        u = infeasibility_policy((1.0, 1.0), (3.5, -9.0), strategy("P"), BOX_I, BOX_P)
        assert u == (3.0, -8.0)

    def test_last_good_used_without_restoration(self):
        assert infeasibility_policy((1.2, 0.4), None, strategy("P"), BOX_I, BOX_P) == (1.2, 0.4)


class TestBookkeeping:
    def test_energy_on_three_steps(self):
        I = [1.0, 2.0, 3.0]
        V = [3.5, 3.6, 3.7]
        P = [1.0, -2.0, 0.0]
        soc = [0.0, 0.1, 1.0]
        energy, useful = harness.energy_terms(I, V, P, soc, 1.0)
        # (1*3.5 + 1) + (2*3.6 + 2) + (3*3.7 + 0)
        assert energy == pytest.approx(24.8, abs=1e-12)
        assert useful == pytest.approx(1 * 3.2 + 2 * 3.38612125 + 3 * 4.162, abs=1e-9)

    def test_energy_scales_with_step(self):
        e1, u1 = harness.energy_terms([2.0], [3.9], [4.0], [0.5], 1.0)
        e5, u5 = harness.energy_terms([2.0], [3.9], [4.0], [0.5], 5.0)
        assert e5 == pytest.approx(5 * e1) and u5 == pytest.approx(5 * u1)

    def test_windows_merge_consecutive_plans(self):
        flags = [(0.0, True), (5.0, True), (10.0, False), (15.0, True), (20.0, False)]
        assert harness._windows(flags, 5.0) == [(0.0, 10.0), (15.0, 20.0)]
        assert harness._windows([(0.0, False)], 5.0) == []

    def test_audit_flags_hot_core(self):
        hot = [0.3, 0.3, celsius(60.0), celsius(40.0)]
        ok = [0.3, 0.3, celsius(30.0), celsius(30.0)]
        states = np.array([ok, hot, hot])
        V = np.array([model.terminal_voltage(s, 1.0) for s in states])
        log = StepLog(np.arange(3.0), states, np.tile([1.0, 0.0], (3, 1)), V,
                      model.soc(states[:, 0], states[:, 1]), [""] * 3, [None] * 3)
        out = harness.audit(log)
        assert out.duration == 2.0
        assert out.worst_name == "tcore_upper"
        assert out.worst_relative == pytest.approx(5.0 / celsius(55.0), rel=1e-9)
        assert out.counts == {"tcore_upper": 2}

    def test_trial_rng_streams(self):
        a = harness.trial_rng(3, 0).standard_normal(4)
        np.testing.assert_array_equal(a, harness.trial_rng(3, 0).standard_normal(4))
        assert not np.allclose(a, harness.trial_rng(3, 1).standard_normal(4))
        assert not np.allclose(a, harness.trial_rng(4, 0).standard_normal(4))

    def test_initial_estimate_spread(self):
        x0 = np.array([0.1, 0.1, celsius(25.0), celsius(25.0), 0.0])
        y0 = model.output(x0, None)
        d = harness.EkfDefaults()
        for k in range(20):
            xh = harness.initial_estimate(x0, y0, harness.trial_rng(0, k), d)
            assert abs(xh[0] - x0[0]) <= d.vb_spread
            assert abs(xh[2] - x0[2]) <= d.tcore_spread
            assert xh[1] == pytest.approx(x0[1], abs=1e-9)
            assert xh[3] == y0[0] and xh[4] == y0[2]


class TestScenario:
    def test_presets(self):
        s = Scenario.preset("low", "P")
        assert s.T_amb == pytest.approx(248.15) and s.x0[2] == pytest.approx(268.15)
        assert len(Scenario.preset("high", "P1", output_feedback=True).x0) == 5

    def test_validation(self):
        with pytest.raises(ValueError):
            Scenario("x", 298.15, (0.1, 0.1, 298.15, 298.15), strategy="Z")
        with pytest.raises(ValueError):
            Scenario("x", 298.15, (0.1, 0.1, 298.15, 298.15), delta_p=2.5)
        with pytest.raises(ValueError):
            Scenario("x", 298.15, (0.1, 0.1, 298.15, 298.15), max_sim_time=0.0)

    def test_output_feedback_needs_current_state(self):
        s = Scenario("x", 298.15, (0.1, 0.1, 298.15, 298.15), output_feedback=True)
        with pytest.raises(ValueError):
            harness.run(s)

    def test_thermal_off_pins_power(self):
        cfg = harness.mpc_config_for(Scenario.preset("mild", "A"))
        assert cfg.constraints.pact_bounds == (0.0, 0.0)
        cfg = harness.mpc_config_for(Scenario.preset("mild", "P1", output_feedback=True))
        assert cfg.constraints.soc_margin == 0.05


class TestClosedLoop:
    def test_already_charged(self):
        s = Scenario("full", celsius(25.0), (0.9, 0.9, celsius(25.0), celsius(25.0)))
        r = harness.run(s)
        assert r.completed and r.T_chg == 0.0 and r.energy_kJ == 0.0 and r.solves == 0
        assert r.log.t.size == 0

    def test_short_state_feedback_run(self):
        s = Scenario.preset("mild", "P", max_sim_time=60.0)
        r1, r2 = harness.run(s), harness.run(s)
        assert r1.timed_out and not r1.completed
        assert r1.solves == 12 and r1.infeasible_solves == 0
        assert np.all(np.diff(r1.log.soc) >= 0)
        np.testing.assert_array_equal(r1.log.states, r2.log.states)
        np.testing.assert_array_equal(r1.log.inputs, r2.log.inputs)
        assert np.all(r1.log.inputs[:, 0] <= 3.0 + 1e-9)

    def test_short_output_feedback_run(self):
        s = Scenario.preset("mild", "P1", output_feedback=True, max_sim_time=30.0)
        r1, r2 = harness.run(s, trial=2), harness.run(s, trial=2)
        np.testing.assert_array_equal(r1.log.states, r2.log.states)
        np.testing.assert_array_equal(r1.estimation.errors, r2.estimation.errors)
        r3 = harness.run(s, trial=3)
        assert not np.array_equal(r1.estimation.errors, r3.estimation.errors)
        assert r1.estimation.min_eigenvalue > 0 and r1.estimation.max_asymmetry == 0.0

    def test_run_many_keeps_order(self):
        s = Scenario("full", celsius(25.0), (0.9, 0.9, celsius(25.0), celsius(25.0)))
        labels = [r.label for r in harness.run_many([(s, model.DEFAULT_PARAMS, 0)] * 3)]
        assert labels == ["full"] * 3
