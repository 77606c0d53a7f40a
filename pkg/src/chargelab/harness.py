"""Closed-loop charging simulations, strategy table and Monte-Carlo batching.

The plant is the explicit-Euler cell model stepped every ``delta_s``
seconds; the controller re-plans every ``delta_p`` seconds and its input is
held between plans.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import ekf, model
from .constraints import (OUTPUT_FEEDBACK_SOC_MARGIN, ConstraintSet, DEFAULT_CONSTRAINTS,
                          bound_magnitudes, check_state)
from .model import DEFAULT_PARAMS, BatteryParams, celsius
from .mpc import MpcConfig, MpcSolution, WarmStart, interpolate_control, step
from .nlp import Status
from .pid import PidState, pid_step


# ---------------------------------------------------------------------------
# strategies

@dataclass(frozen=True)
class StrategyId:
    name: str
    warm_start: WarmStart = WarmStart.ZERO_INPUT
    N: int = 40
    w4: Optional[float] = None
    T_core_ref: Optional[float] = None
    pid_ref: Optional[float] = None
    thermal_off: bool = False
    description: str = ""

    @property
    def uses_pid(self) -> bool:
        return self.pid_ref is not None


STRATEGIES: dict[str, StrategyId] = {s.name: s for s in (
    StrategyId("P", description="joint current and thermal MPC, zero-input rollout guess"),
    StrategyId("P1", warm_start=WarmStart.HEATED_ROLLOUT,
               description="as P, guess from full current with PID heating to 45 degC"),
    StrategyId("A", thermal_off=True, description="MPC without active thermal power"),
    StrategyId("B", thermal_off=True, pid_ref=celsius(25.0), description="MPC current, PID to 25 degC"),
    StrategyId("C", thermal_off=True, pid_ref=celsius(35.0), description="MPC current, PID to 35 degC"),
    StrategyId("D", thermal_off=True, pid_ref=celsius(45.0), description="MPC current, PID to 45 degC"),
    StrategyId("E", thermal_off=True, pid_ref=celsius(50.0), description="MPC current, PID to 50 degC"),
    StrategyId("P2", w4=0.5, T_core_ref=celsius(45.0), description="as P, core temperature tracking 45 degC"),
    StrategyId("P3", w4=0.5, T_core_ref=celsius(55.0), description="as P, core temperature tracking 55 degC"),
    StrategyId("P4", N=80, description="as P, horizon 80"),
    StrategyId("P5", N=120, description="as P, horizon 120"),
)}


def strategy(name: str) -> StrategyId:
    try:
        return STRATEGIES[name]
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; choose from {sorted(STRATEGIES)}") from None


# ---------------------------------------------------------------------------
# scenarios and results

AMBIENT_PRESETS = {
    "mild": (celsius(25.0), (0.1, 0.1, celsius(25.0), celsius(25.0))),
    "high": (celsius(70.0), (0.1, 0.1, celsius(50.0), celsius(70.0))),
    "low": (celsius(-25.0), (0.1, 0.1, celsius(-5.0), celsius(-25.0))),
}


@dataclass(frozen=True)
class Scenario:
    label: str
    T_amb: float
    x0: tuple[float, ...]
    strategy: str = "P"
    mpc_overrides: tuple[tuple[str, object], ...] = ()
    pact_bounds: tuple[float, float] = (-8.0, 8.0)
    soc_target: float = 0.9
    # charging counts as complete once SoC rounds to the target at 0.01
    # resolution; the closed loop only approaches the target asymptotically
    soc_tolerance: float = 0.005
    max_sim_time: float = 4000.0
    seed: int = 0
    delta_s: float = 1.0
    delta_p: float = 5.0
    output_feedback: bool = False
    record_timing: bool = False

    def __post_init__(self):
        if not self.max_sim_time > 0:
            raise ValueError("max_sim_time must be positive")
        if not 0 <= self.soc_tolerance < self.soc_target:
            raise ValueError("soc_tolerance must lie in [0, soc_target)")
        strategy(self.strategy)
        ratio = self.delta_p / self.delta_s
        if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
            raise ValueError("delta_p must be a positive integer multiple of delta_s")
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        if isinstance(self.mpc_overrides, dict):
            object.__setattr__(self, "mpc_overrides", tuple(sorted(self.mpc_overrides.items())))

    @classmethod
    def preset(cls, ambient: str, strategy_name: str = "P", output_feedback: bool = False,
               **kwargs) -> "Scenario":
        T_amb, x0 = AMBIENT_PRESETS[ambient]
        if output_feedback:
            x0 = x0 + (0.0,)
        label = kwargs.pop("label", f"{ambient}-{strategy_name}" + ("-of" if output_feedback else ""))
        return cls(label=label, T_amb=T_amb, x0=x0, strategy=strategy_name,
                   output_feedback=output_feedback, **kwargs)


@dataclass
class StepLog:
    t: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    V: np.ndarray
    soc: np.ndarray
    status: list[str]
    solve_ms: list[Optional[float]]


@dataclass
class ViolationSummary:
    duration: float = 0.0
    worst_relative: float = 0.0
    worst_name: str = ""
    counts: dict[str, int] = field(default_factory=dict)


@dataclass
class EstimationLog:
    errors: np.ndarray          # xhat - x at every logged step
    sigma: np.ndarray           # sqrt(diag P) at every logged step
    soc_error: np.ndarray
    min_eigenvalue: float
    max_asymmetry: float


@dataclass
class RunResult:
    label: str
    strategy: str
    completed: bool
    T_chg: Optional[float]
    energy_kJ: float
    efficiency: float
    log: StepLog
    infeasible_windows: list[tuple[float, float]]
    violations: ViolationSummary
    solves: int = 0
    infeasible_solves: int = 0
    solve_times: list[float] = field(default_factory=list)
    nlp_records: list[dict] = field(default_factory=list)
    estimation: Optional[EstimationLog] = None
    error: Optional[str] = None
    delta_s: float = 1.0

    @property
    def duration(self) -> float:
        return self.log.t.size * self.delta_s

    @property
    def timed_out(self) -> bool:
        return not self.completed and self.error is None


# ---------------------------------------------------------------------------
# fallback input

def infeasibility_policy(last_good: Optional[tuple[float, float]],
                         restoration_iterate: Optional[tuple[float, float]],
                         strat: StrategyId, current_box: tuple[float, float],
                         pact_box: tuple[float, float],
                         pid_output: Optional[float] = None) -> tuple[float, float]:
    """Input applied for one planning interval after an infeasible solve.

    Preference order: restoration iterate, last applied input, then
    ``(0, PID output or 0)``; always clamped into the input boxes.
    """
    def clamp(u):
        return (float(np.clip(u[0], *current_box)), float(np.clip(u[1], *pact_box)))

    if restoration_iterate is not None:
        return clamp(restoration_iterate)
    if last_good is not None:
        return clamp(last_good)
    p = pid_output if (strat.uses_pid and pid_output is not None) else 0.0
    return clamp((0.0, p))


class _HeldPlan:
    """A constant plan used when the solver result is not applied."""

    def __init__(self, u, N):
        self.controls = np.tile(np.asarray(u, dtype=float), (N, 1))


# ---------------------------------------------------------------------------
# helpers

def mpc_config_for(scenario: Scenario, output_feedback: Optional[bool] = None) -> MpcConfig:
    strat = strategy(scenario.strategy)
    of = scenario.output_feedback if output_feedback is None else output_feedback
    pact = (0.0, 0.0) if strat.thermal_off and not strat.uses_pid else scenario.pact_bounds
    cset = DEFAULT_CONSTRAINTS.with_overrides(
        pact_bounds=pact, soc_margin=OUTPUT_FEEDBACK_SOC_MARGIN if of else 0.0)
    warm = WarmStart.HEATED_ROLLOUT if of else strat.warm_start
    cfg = MpcConfig(N=strat.N, delta_p=scenario.delta_p, w4=strat.w4, T_core_ref=strat.T_core_ref,
                    soc_target=scenario.soc_target, constraints=cset, warm_start=warm)
    if scenario.mpc_overrides:
        cfg = cfg.with_overrides(**dict(scenario.mpc_overrides))
    return cfg


def energy_terms(I, V, P, soc_values, delta_s: float, params: BatteryParams = DEFAULT_PARAMS):
    """Rectangular sums ``(energy [J], useful energy [J])`` over applied steps."""
    I, V, P = np.asarray(I, float), np.asarray(V, float), np.asarray(P, float)
    energy = float(np.sum((I * V + np.abs(P)) * delta_s))
    useful = float(np.sum(I * model.ocv(np.asarray(soc_values, float), params) * delta_s))
    return energy, useful


def audit(log: StepLog, cset: ConstraintSet = DEFAULT_CONSTRAINTS,
          params: BatteryParams = DEFAULT_PARAMS, delta_s: float = 1.0,
          rel_tol: float = 1e-6) -> ViolationSummary:
    """Plant-side limit check of a logged trajectory (no SoC margin).

    A knot counts as violating when some residual exceeds ``rel_tol`` times
    the magnitude of its bound.
    """
    cset = cset.with_overrides(soc_margin=0.0)
    mags = bound_magnitudes(cset)
    out = ViolationSummary()
    for x, u, V in zip(log.states, log.inputs, log.V):
        rep = check_state(x[:4], u, float(V), cset, params)
        bad = False
        for name, r in rep.residuals.items():
            rel = r / mags[name]
            if rel > rel_tol:
                bad = True
                out.counts[name] = out.counts.get(name, 0) + 1
            if rel > out.worst_relative:
                out.worst_relative, out.worst_name = rel, name
        if bad:
            out.duration += delta_s
    return out


def _windows(flags: Sequence[tuple[float, bool]], delta_p: float) -> list[tuple[float, float]]:
    out: list[list[float]] = []
    for t, bad in flags:
        if not bad:
            continue
        if out and abs(out[-1][1] - t) < 1e-9:
            out[-1][1] = t + delta_p
        else:
            out.append([t, t + delta_p])
    return [(a, b) for a, b in out]


def _nlp_record(t: float, sol: MpcSolution) -> dict:
    n = sol.nlp
    return {"t": t, "status": sol.status.value, "iterations": n.iterations,
            "kkt": n.kkt_residual, "violation": n.constraint_violation,
            "restoration": n.restoration_iterations}


def _empty_log(nx: int) -> StepLog:
    return StepLog(np.zeros(0), np.zeros((0, nx)), np.zeros((0, 2)), np.zeros(0), np.zeros(0), [], [])


# ---------------------------------------------------------------------------
# state feedback

def run_state_feedback(scenario: Scenario, params: BatteryParams = DEFAULT_PARAMS,
                       keep_records: bool = True) -> RunResult:
    strat = strategy(scenario.strategy)
    cfg = mpc_config_for(scenario, output_feedback=False)
    cset = cfg.constraints
    dp, ds = scenario.delta_p, scenario.delta_s
    per_plan = int(round(dp / ds))
    T_amb = scenario.T_amb
    x = np.asarray(scenario.x0[:4], dtype=float)
    pid = PidState(T_core_ref=strat.pid_ref, P_lo=scenario.pact_bounds[0],
                   P_hi=scenario.pact_bounds[1]) if strat.uses_pid else None
    pact_box = cset.pact_bounds

    ts, xs, us, Vs, socs, stats, times = [], [], [], [], [], [], []
    previous: Optional[MpcSolution] = None
    plan = None
    t_plan = 0.0
    last_applied: Optional[tuple[float, float]] = None
    flags: list[tuple[float, bool]] = []
    solve_times: list[float] = []
    records: list[dict] = []
    n_solves = n_infeasible = 0
    i = 0
    max_steps = int(math.ceil(scenario.max_sim_time / ds))
    completed = False
    while True:
        t = i * ds
        s_now = float(model.soc(x[0], x[1], params))
        if s_now >= scenario.soc_target - scenario.soc_tolerance:
            completed = True
            break
        if i >= max_steps:
            break
        status_str, solve_ms = "", None
        if i % per_plan == 0:
            p_pid = None
            if pid is not None:
                I_prev = 0.0
                if plan is not None and previous is not None:
                    try:
                        I_prev = interpolate_control(previous, t, t_plan, dp)[0]
                    except ValueError:
                        I_prev = float(previous.controls[-1, 0])
                dT = float(model.derivative(x, (I_prev, 0.0), T_amb, params)[model.TC])
                p_pid, pid = pid_step(pid, x[model.TC], dT)
                cfg_k = cfg.with_overrides(fixed_pact=p_pid)
            else:
                cfg_k = cfg
            sol = step(x, T_amb, cfg_k, params, previous)
            n_solves += 1
            solve_times.append(sol.solve_time)
            if keep_records:
                records.append(_nlp_record(t, sol))
            status_str = sol.status.value
            solve_ms = sol.solve_time * 1e3
            usable = sol.status is Status.OPTIMAL or (
                sol.status is Status.MAX_ITER
                and sol.nlp.constraint_violation <= 100 * cfg.solver.tol_feas)
            flags.append((t, sol.status is Status.INFEASIBLE))
            if sol.status is Status.INFEASIBLE:
                n_infeasible += 1
            if usable:
                plan = sol
                previous = sol
            else:
                rest = sol.applied_input(0) if sol.status is Status.INFEASIBLE else None
                u_fb = infeasibility_policy(last_applied, rest, strat, cset.current_bounds,
                                            pact_box if p_pid is None else (p_pid, p_pid), p_pid)
                plan = _HeldPlan(u_fb, cfg.N)
                previous = None
            t_plan = t
        u = interpolate_control(plan, t, t_plan, dp)
        V = float(model.terminal_voltage(x, u[0], params))
        ts.append(t)
        xs.append(x.copy())
        us.append(u)
        Vs.append(V)
        socs.append(s_now)
        stats.append(status_str)
        times.append(solve_ms)
        last_applied = u
        x = model.euler_step(x, u, T_amb, ds, params)
        i += 1

    log = StepLog(np.array(ts), np.array(xs).reshape(-1, 4), np.array(us).reshape(-1, 2),
                  np.array(Vs), np.array(socs), stats, times)
    energy, useful = energy_terms(log.inputs[:, 0], log.V, log.inputs[:, 1], log.soc, ds, params)
    return RunResult(
        label=scenario.label, strategy=strat.name, completed=completed,
        T_chg=i * ds if completed else None, energy_kJ=energy / 1e3,
        efficiency=useful / energy if energy > 0 else 0.0, log=log,
        infeasible_windows=_windows(flags, dp),
        violations=audit(log, DEFAULT_CONSTRAINTS.with_overrides(pact_bounds=scenario.pact_bounds),
                         params, ds),
        solves=n_solves, infeasible_solves=n_infeasible, solve_times=solve_times,
        nlp_records=records, delta_s=ds)


# ---------------------------------------------------------------------------
# output feedback

@dataclass(frozen=True)
class EkfDefaults:
    Q: tuple[float, ...] = tuple(float(v) for v in np.diag(ekf.DEFAULT_Q))
    R: tuple[float, ...] = tuple(float(v) for v in np.diag(ekf.DEFAULT_R))
    P0: tuple[float, ...] = tuple(float(v) for v in np.diag(ekf.DEFAULT_P0))
    vb_spread: float = 0.1
    tcore_spread: float = 5.0
    output_at_prior: bool = True


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(trial)]))


def initial_estimate(x0: np.ndarray, y0: np.ndarray, rng: np.random.Generator,
                     defaults: EkfDefaults, params: BatteryParams = DEFAULT_PARAMS) -> np.ndarray:
    """Random guesses for the unmeasured states, measured ones from ``y0``."""
    vb = x0[model.VB] + rng.uniform(-defaults.vb_spread, defaults.vb_spread)
    tc = x0[model.TC] + rng.uniform(-defaults.tcore_spread, defaults.tcore_spread)
    I0 = y0[2]
    # V = h(V_s) + R_o*I; with I ~ 0 the surface voltage follows from the OCV
    vs = model.ocv_inverse(float(y0[1] - model.internal_resistance(
        model.soc(vb, 0.1, params), tc, params) * I0), params)
    return np.array([vb, vs, tc, y0[0], I0])


def run_output_feedback(scenario: Scenario, params: BatteryParams = DEFAULT_PARAMS,
                        ekf_defaults: EkfDefaults = EkfDefaults(), trial: int = 0,
                        keep_records: bool = True) -> RunResult:
    if len(scenario.x0) != 5:
        raise ValueError("output feedback needs an augmented initial state (with current)")
    strat = strategy(scenario.strategy)
    cfg = mpc_config_for(scenario, output_feedback=True)
    dp, ds = scenario.delta_p, scenario.delta_s
    per_plan = int(round(dp / ds))
    T_amb = scenario.T_amb
    rng = trial_rng(scenario.seed, trial)
    Rm = np.diag(ekf_defaults.R)
    noise_sd = np.sqrt(np.diag(Rm))
    x = np.asarray(scenario.x0, dtype=float)

    def measure(state):
        return model.output(state, None, params) + noise_sd * rng.standard_normal(3)

    y = measure(x)
    xhat0 = initial_estimate(x, y, rng, ekf_defaults, params)
    est = ekf.EstimatorState(xhat=xhat0, P=np.diag(ekf_defaults.P0), Q=np.diag(ekf_defaults.Q),
                             R=Rm, delta_s=ds)
    u_prev = np.zeros(2)
    ts, xs, us, Vs, socs, stats, times = [], [], [], [], [], [], []
    errs, sigmas, soc_errs = [], [], []
    min_eig, max_asym = np.inf, 0.0
    previous: Optional[MpcSolution] = None
    plan = None
    t_plan = 0.0
    last_applied = None
    flags: list[tuple[float, bool]] = []
    solve_times: list[float] = []
    records: list[dict] = []
    n_solves = n_infeasible = 0
    i = 0
    max_steps = int(math.ceil(scenario.max_sim_time / ds))
    completed = False
    error = None
    while True:
        t = i * ds
        if i > 0:
            y = measure(x)
        try:
            est = ekf.estimate(est, u_prev, y, T_amb, params,
                               output_at_prior=ekf_defaults.output_at_prior)
        except ekf.EstimationError as exc:
            error = f"estimation failed at t={t:g}s: {exc}"
            break
        eig = np.linalg.eigvalsh(est.P)
        min_eig = min(min_eig, float(eig[0]))
        max_asym = max(max_asym, float(np.max(np.abs(est.P - est.P.T))))
        s_hat = ekf.soc_estimate(est, params)
        if s_hat >= scenario.soc_target - scenario.soc_tolerance:
            completed = True
            break
        if i >= max_steps:
            break
        status_str, solve_ms = "", None
        if i % per_plan == 0:
            sol = step(est.xhat, T_amb, cfg, params, previous)
            n_solves += 1
            solve_times.append(sol.solve_time)
            if keep_records:
                records.append(_nlp_record(t, sol))
            status_str, solve_ms = sol.status.value, sol.solve_time * 1e3
            usable = sol.status is Status.OPTIMAL or (
                sol.status is Status.MAX_ITER
                and sol.nlp.constraint_violation <= 100 * cfg.solver.tol_feas)
            flags.append((t, sol.status is Status.INFEASIBLE))
            if sol.status is Status.INFEASIBLE:
                n_infeasible += 1
            if usable:
                plan, previous = sol, sol
            else:
                rest = tuple(sol.controls[0]) if sol.status is Status.INFEASIBLE else None
                u_fb = infeasibility_policy(last_applied, rest, strat,
                                            (-cfg.rate_bound, cfg.rate_bound),
                                            cfg.constraints.pact_bounds)
                plan, previous = _HeldPlan(u_fb, cfg.N), None
            t_plan = t
        u = interpolate_control(plan, t, t_plan, dp)
        V = float(model.terminal_voltage(x[:4], x[model.IC], params))
        ts.append(t)
        xs.append(x.copy())
        us.append((x[model.IC], u[1]))
        Vs.append(V)
        socs.append(float(model.soc(x[0], x[1], params)))
        stats.append(status_str)
        times.append(solve_ms)
        errs.append(est.xhat - x)
        sigmas.append(est.sigma)
        soc_errs.append(s_hat - socs[-1])
        last_applied = u
        u_prev = np.asarray(u, dtype=float)
        x = model.euler_step(x, u_prev, T_amb, ds, params)
        i += 1

    log = StepLog(np.array(ts), np.array(xs).reshape(-1, 5), np.array(us).reshape(-1, 2),
                  np.array(Vs), np.array(socs), stats, times)
    energy, useful = energy_terms(log.inputs[:, 0], log.V, log.inputs[:, 1], log.soc, ds, params)
    estimation = EstimationLog(np.array(errs).reshape(-1, 5), np.array(sigmas).reshape(-1, 5),
                               np.array(soc_errs), min_eig, max_asym)
    return RunResult(
        label=scenario.label, strategy=strat.name, completed=completed,
        T_chg=i * ds if completed else None, energy_kJ=energy / 1e3,
        efficiency=useful / energy if energy > 0 else 0.0, log=log,
        infeasible_windows=_windows(flags, dp),
        violations=audit(log, DEFAULT_CONSTRAINTS.with_overrides(pact_bounds=scenario.pact_bounds),
                         params, ds),
        solves=n_solves, infeasible_solves=n_infeasible, solve_times=solve_times,
        nlp_records=records, estimation=estimation, error=error, delta_s=ds)


def run(scenario: Scenario, params: BatteryParams = DEFAULT_PARAMS, trial: int = 0,
        keep_records: bool = True, ekf_defaults: EkfDefaults = EkfDefaults()) -> RunResult:
    if scenario.output_feedback:
        return run_output_feedback(scenario, params, ekf_defaults, trial, keep_records)
    return run_state_feedback(scenario, params, keep_records=keep_records)


# ---------------------------------------------------------------------------
# batching

def _run_job(args):
    scenario, params, trial, *rest = args
    return run(scenario, params, trial, ekf_defaults=rest[0] if rest else EkfDefaults())


def run_many(jobs: Sequence[tuple], workers: int = 1) -> list[RunResult]:
    """Execute independent runs, in a process pool when ``workers > 1``.

    Each job is ``(scenario, params, trial)`` with optional ``EkfDefaults``
    appended.
    """
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


@dataclass
class Stat:
    mean: float
    std: float
    quartiles: tuple[float, float, float]

    @classmethod
    def of(cls, values) -> "Stat":
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            return cls(float("nan"), float("nan"), (float("nan"),) * 3)
        q = np.percentile(v, [25, 50, 75])
        return cls(float(v.mean()), float(v.std()), tuple(float(a) for a in q))


@dataclass
class MonteCarloSummary:
    trials: int
    success_rate: float
    T_chg: Stat
    energy_kJ: Stat
    efficiency: Stat
    estimation: dict[str, Stat]
    violation_fraction: Stat
    worst_violation: float
    results: list[RunResult] = field(repr=False, default_factory=list)


STATE_NAMES = ("V_b", "V_s", "T_core", "T_surf", "I")


def monte_carlo(scenario: Scenario, trials: int, master_seed: Optional[int] = None,
                params: BatteryParams = DEFAULT_PARAMS, workers: int = 1,
                settle_time: float = 0.0) -> MonteCarloSummary:
    """Repeat an output-feedback scenario with independent noise streams.

    Estimation statistics use absolute errors pooled over every trial and
    every step at or after ``settle_time``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if master_seed is not None:
        scenario = replace(scenario, seed=int(master_seed))
    results = run_many([(scenario, params, k) for k in range(trials)], workers)
    return summarize(results, settle_time)


def summarize(results: list[RunResult], settle_time: float = 0.0) -> MonteCarloSummary:
    done = [r for r in results if r.completed]
    est: dict[str, list] = {name: [] for name in STATE_NAMES + ("SoC",)}
    for r in results:
        if r.estimation is None or r.log.t.size == 0:
            continue
        keep = r.log.t >= settle_time
        for k, name in enumerate(STATE_NAMES):
            est[name].append(np.abs(r.estimation.errors[keep, k]))
        est["SoC"].append(np.abs(r.estimation.soc_error[keep]))
    estimation = {k: Stat.of(np.concatenate(v)) for k, v in est.items() if v}
    viol_frac = [r.violations.duration / r.duration if r.duration > 0 else 0.0 for r in results]
    return MonteCarloSummary(
        trials=len(results), success_rate=len(done) / len(results),
        T_chg=Stat.of([r.T_chg for r in done]), energy_kJ=Stat.of([r.energy_kJ for r in done]),
        efficiency=Stat.of([r.efficiency for r in done]), estimation=estimation,
        violation_fraction=Stat.of(viol_frac),
        worst_violation=max((r.violations.worst_relative for r in results), default=0.0),
        results=results)
