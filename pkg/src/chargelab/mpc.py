"""Receding-horizon charging controller.

The finite-horizon problem is transcribed simultaneously: the decision
vector stacks the predicted states ``x_1..x_N`` followed by the inputs
``u_0..u_{N-1}``, and explicit-Euler defects tie them together.  Two model
forms are supported:

* ``current`` (4 states, ``u = [I, P_act]``) for state feedback;
* ``rate`` (5 states with the current as an integrator, ``u = [u1, P_act]``)
  for feedback from the estimator.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from . import model
from .constraints import DEFAULT_CONSTRAINTS, ConstraintSet, gradient_coefficients
from .model import DEFAULT_PARAMS, BatteryParams, celsius
from .nlp import NlpProblem, NlpSolution, SolverOptions, Status, solve
from .pid import PidState, pid_step


class WarmStart(str, Enum):
    ZERO_INPUT = "ZeroInput"
    HEATED_ROLLOUT = "HeatedRollout"
    SHIFT_PREVIOUS = "ShiftPrevious"


@dataclass(frozen=True)
class MpcConfig:
    N: int = 40
    delta_p: float = 5.0
    w1: float = 40.0
    w2: float = 0.1
    w3: float = 0.1
    w4: Optional[float] = None
    T_core_ref: Optional[float] = None
    soc_target: float = 0.9
    constraints: ConstraintSet = DEFAULT_CONSTRAINTS
    warm_start: WarmStart = WarmStart.ZERO_INPUT
    assume_constant_ambient: bool = True
    # fixes P_act over the whole horizon (separately controlled thermal loop)
    fixed_pact: Optional[float] = None
    # current-rate limit for the augmented form; effectively unbounded
    rate_bound: float = 1e3
    # setpoint of the PID law used by the heated-rollout guess
    guess_T_core_ref: float = celsius(45.0)
    solver: SolverOptions = SolverOptions()

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("horizon N must be at least 2")
        if not self.delta_p > 0:
            raise ValueError("delta_p must be positive")
        weights = [self.w1, self.w2, self.w3] + ([self.w4] if self.w4 is not None else [])
        if min(weights) <= 0:
            raise ValueError("objective weights must be positive")
        if not 0 < self.soc_target <= 1:
            raise ValueError("soc_target must lie in (0, 1]")
        if (self.w4 is None) != (self.T_core_ref is None):
            raise ValueError("w4 and T_core_ref must be given together")

    @property
    def tracks_temperature(self) -> bool:
        return self.w4 is not None

    def with_overrides(self, **kwargs) -> "MpcConfig":
        return replace(self, **kwargs)


@dataclass
class MpcSolution:
    controls: np.ndarray
    states: np.ndarray
    objective: float
    status: Status
    solve_time: float
    nlp: Optional[NlpSolution] = None
    form: str = "current"

    @property
    def success(self) -> bool:
        return self.status is Status.OPTIMAL

    def applied_input(self, j: int = 0) -> tuple[float, float]:
        """Plant-level ``(I, P_act)``; for the rate form, the current at knot ``j``."""
        if self.form == "rate":
            return float(self.states[j, model.IC]), float(self.controls[j, 1])
        return float(self.controls[j, 0]), float(self.controls[j, 1])


# ---------------------------------------------------------------------------
# transcription

@dataclass
class Transcription:
    """Index bookkeeping plus the callables handed to the NLP solver."""

    problem: NlpProblem
    nx: int
    N: int
    form: str
    x0: np.ndarray
    objective_matrix: np.ndarray = field(repr=False, default=None)
    objective_target: np.ndarray = field(repr=False, default=None)

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        nX = self.N * self.nx
        X = z[:nX].reshape(self.N, self.nx)
        U = z[nX:].reshape(self.N, 2)
        return np.vstack([self.x0, X]), U

    def stack(self, states: np.ndarray, controls: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(states)[1:].ravel(), np.asarray(controls).ravel()])

    def objective_value(self, states: np.ndarray, controls: np.ndarray) -> float:
        return float(self.problem.objective(self.stack(states, controls))[0])


def _form(x0: np.ndarray) -> str:
    return "rate" if x0.size == 5 else "current"


def _objective_rows(N: int, nx: int, form: str, x0: np.ndarray, cfg: MpcConfig,
                    params: BatteryParams):
    """Weighted least-squares rows ``M z - b`` whose squared norm is the cost.

    Returns ``(M, b, const)`` where ``const`` collects terms that depend on
    the fixed initial state only.
    """
    nX = N * nx
    n = nX + 2 * N
    cb, cs = model.soc_weights(params)

    def xi(j, k):  # index of state component k at knot j >= 1
        return (j - 1) * nx + k

    def ui(j, k):
        return nX + 2 * j + k

    rows, targets = [], []
    const = 0.0
    sq1 = np.sqrt(cfg.w1)
    soc0 = float(model.soc(x0[0], x0[1], params))
    const += cfg.w1 * (soc0 - cfg.soc_target) ** 2
    for j in range(1, N + 1):
        r = np.zeros(n)
        r[xi(j, 0)] = sq1 * cb
        r[xi(j, 1)] = sq1 * cs
        rows.append(r)
        targets.append(sq1 * cfg.soc_target)

    sq2, sq3 = np.sqrt(cfg.w2), np.sqrt(cfg.w3)
    for j in range(N - 1):
        r = np.zeros(n)
        t = 0.0
        if form == "current":
            r[ui(j + 1, 0)] = sq2
            r[ui(j, 0)] = -sq2
        else:
            # current is a state; I_0 belongs to the fixed initial state
            r[xi(j + 1, model.IC)] = sq2
            if j == 0:
                t = sq2 * x0[model.IC]
            else:
                r[xi(j, model.IC)] = -sq2
        rows.append(r)
        targets.append(t)
        r = np.zeros(n)
        r[ui(j + 1, 1)] = sq3
        r[ui(j, 1)] = -sq3
        rows.append(r)
        targets.append(0.0)

    if cfg.tracks_temperature:
        sq4 = np.sqrt(cfg.w4)
        const += cfg.w4 * (x0[model.TC] - cfg.T_core_ref) ** 2
        for j in range(1, N + 1):
            r = np.zeros(n)
            r[xi(j, model.TC)] = sq4
            rows.append(r)
            targets.append(sq4 * cfg.T_core_ref)
    return np.array(rows), np.array(targets), const


def build_problem(x0, T_amb: float, cfg: MpcConfig = MpcConfig(),
                  params: BatteryParams = DEFAULT_PARAMS,
                  guess: Optional[np.ndarray] = None) -> Transcription:
    """Transcribe one horizon into an :class:`NlpProblem`."""
    x0 = np.asarray(x0, dtype=float).copy()
    form = _form(x0)
    nx = x0.size
    N, dp = cfg.N, cfg.delta_p
    nX = N * nx
    n = nX + 2 * N
    cset = cfg.constraints
    aug = form == "rate"
    rate = model.derivative_augmented if aug else model.derivative
    jac = model.derivative_augmented_jacobians if aug else model.derivative_jacobians

    M, b, const = _objective_rows(N, nx, form, x0, cfg, params)
    H = 2.0 * M.T @ M

    def objective(z):
        r = M @ z - b
        return float(r @ r) + const, 2.0 * (M.T @ r)

    # Euler defects c_j = x_{j+1} - x_j - dp*f(x_j, u_j)
    eye = np.eye(nx)

    def eq(z):
        X = z[:nX].reshape(N, nx)
        U = z[nX:].reshape(N, 2)
        Xk = np.vstack([x0, X[:-1]])
        F = rate(Xk, U, T_amb, params)
        c = (X - Xk - dp * F).ravel()
        A, B = jac(Xk, U, T_amb, params)
        J = np.zeros((nX, n))
        for j in range(N):
            rs = slice(j * nx, (j + 1) * nx)
            J[rs, j * nx:(j + 1) * nx] = eye
            if j > 0:
                J[rs, (j - 1) * nx:j * nx] = -eye - dp * A[j]
            J[rs, nX + 2 * j:nX + 2 * j + 2] = -dp * B[j]
        return c, J

    # linear state rows at knots 1..N: a_k . x_j <= b_k
    cb, cs = model.soc_weights(params)
    lin_rows = []   # (coefficient vector over the state, rhs)
    lo, hi = cset.soc_bounds
    lin_rows += [(np.array([cb, cs]), (0, 1), hi), (-np.array([cb, cs]), (0, 1), -lo)]
    lo, hi = cset.tcore_bounds
    lin_rows += [(np.array([1.0]), (model.TC,), hi), (np.array([-1.0]), (model.TC,), -lo)]
    lo, hi = cset.vs_bounds
    lin_rows += [(np.array([1.0]), (model.VS,), hi), (np.array([-1.0]), (model.VS,), -lo)]
    if cset.tsurf_bounds is not None:
        lo, hi = cset.tsurf_bounds
        lin_rows += [(np.array([1.0]), (model.TS,), hi), (np.array([-1.0]), (model.TS,), -lo)]
    a_b, a_s, c_g = gradient_coefficients(cset, params)
    lin_rows.append((np.array([a_b, a_s]), (0, 1), -c_g))
    if aug:
        lo, hi = cset.current_bounds
        lin_rows_i = [(np.array([1.0]), (model.IC,), hi), (np.array([-1.0]), (model.IC,), -lo)]
    else:
        lin_rows_i = []

    # In the rate form V_b and V_s at knot 1 follow from x0 alone, so their
    # rows there are constants; keeping them would turn estimate noise into
    # infeasibility that no input can repair.
    fixed_at_1 = {(0, 1), (model.VS,)} if aug else set()
    G_rows, G_rhs = [], []
    for j in range(1, N + 1):
        for coef, idx, rhs in lin_rows:
            if j == 1 and idx in fixed_at_1:
                continue
            r = np.zeros(n)
            for c, k in zip(coef, idx):
                r[(j - 1) * nx + k] = c
            G_rows.append(r)
            G_rhs.append(rhs)
    for j in range(1, N):
        for coef, idx, rhs in lin_rows_i:
            r = np.zeros(n)
            for c, k in zip(coef, idx):
                r[(j - 1) * nx + k] = c
            G_rows.append(r)
            G_rhs.append(rhs)
    G = np.array(G_rows)
    G_rhs = np.array(G_rhs)

    # terminal-voltage rows; in the rate form knot 0 is fixed and skipped
    v_knots = np.arange(1, N) if aug else np.arange(N)
    v_lo, v_hi = cset.voltage_bounds
    nv = v_knots.size

    def ineq(z):
        X = z[:nX].reshape(N, nx)
        U = z[nX:].reshape(N, 2)
        Xa = np.vstack([x0, X])[v_knots]
        I = Xa[:, model.IC] if aug else U[v_knots, 0]
        V = model.terminal_voltage(Xa[:, :4], I, params)
        dV, dVdI = model.voltage_gradient(Xa[:, :4], I, params)
        JV = np.zeros((nv, n))
        for r, j in enumerate(v_knots):
            if j > 0:
                JV[r, (j - 1) * nx:(j - 1) * nx + 4] = dV[r]
                if aug:
                    JV[r, (j - 1) * nx + model.IC] = dVdI[r]
            if not aug:
                JV[r, nX + 2 * j] = dVdI[r]
        vals = np.concatenate([G @ z - G_rhs, V - v_hi, v_lo - V])
        J = np.vstack([G, JV, -JV])
        return vals, J

    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    ulo = lower[nX:].reshape(N, 2)
    uhi = upper[nX:].reshape(N, 2)
    if aug:
        ulo[:, 0], uhi[:, 0] = -cfg.rate_bound, cfg.rate_bound
    else:
        ulo[:, 0], uhi[:, 0] = cset.current_bounds
    if cfg.fixed_pact is not None:
        p = float(np.clip(cfg.fixed_pact, *cset.pact_bounds))
        ulo[:, 1], uhi[:, 1] = p, p
    else:
        ulo[:, 1], uhi[:, 1] = cset.pact_bounds

    z0 = guess if guess is not None else np.zeros(n)
    problem = NlpProblem(n=n, objective=objective, lower=lower, upper=upper, x0=z0,
                         eq=eq, m_eq=nX, ineq=ineq, m_ineq=G.shape[0] + 2 * nv, hessian=H)
    return Transcription(problem, nx, N, form, x0, M, b)


# ---------------------------------------------------------------------------
# initial guesses

def _input_box(cfg: MpcConfig, form: str):
    cset = cfg.constraints
    if cfg.fixed_pact is not None:
        p = float(np.clip(cfg.fixed_pact, *cset.pact_bounds))
        plo = phi = p
    else:
        plo, phi = cset.pact_bounds
    if form == "rate":
        return (-cfg.rate_bound, cfg.rate_bound), (plo, phi)
    return cset.current_bounds, (plo, phi)


def initial_guess(x0, T_amb: float, cfg: MpcConfig = MpcConfig(),
                  params: BatteryParams = DEFAULT_PARAMS,
                  previous: Optional[MpcSolution] = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(states[N+1], controls[N])`` of the configured warm start."""
    x0 = np.asarray(x0, dtype=float)
    form = _form(x0)
    N, dp = cfg.N, cfg.delta_p
    ibox, pbox = _input_box(cfg, form)
    mode = cfg.warm_start
    if mode is WarmStart.SHIFT_PREVIOUS and previous is not None \
            and previous.controls.shape[0] == N and previous.states.shape[1] == x0.size:
        U = np.vstack([previous.controls[1:], previous.controls[-1:]])
        X = np.vstack([x0, previous.states[2:], previous.states[-1:]])
        return X, U
    if mode is WarmStart.HEATED_ROLLOUT:
        return _heated_rollout(x0, T_amb, cfg, params, ibox, pbox)
    U = np.zeros((N, 2))
    U[:, 0] = np.clip(0.0, *ibox)
    U[:, 1] = np.clip(0.0, *pbox)
    return model.rollout(x0, U, T_amb, dp, params), U


def _heated_rollout(x0, T_amb, cfg, params, ibox, pbox):
    N, dp = cfg.N, cfg.delta_p
    aug = x0.size == 5
    I_max = cfg.constraints.current_bounds[1]
    pid = PidState(T_core_ref=cfg.guess_T_core_ref, P_lo=pbox[0], P_hi=pbox[1])
    X = np.empty((N + 1, x0.size))
    U = np.zeros((N, 2))
    X[0] = x0
    for j in range(N):
        x = X[j]
        I_now = x[model.IC] if aug else I_max
        dT = model.derivative(x[:4], (I_now, 0.0), T_amb, params)[model.TC]
        P, pid = pid_step(pid, x[model.TC], float(dT))
        if aug:
            # ramp the current to its upper bound within one interval
            U[j] = (np.clip((I_max - x[model.IC]) / dp, *ibox), P)
        else:
            U[j] = (I_max, P)
        X[j + 1] = model.euler_step(x, U[j], T_amb, dp, params)
    return X, U


# ---------------------------------------------------------------------------
# control law

def step(x0, T_amb: float, cfg: MpcConfig = MpcConfig(), params: BatteryParams = DEFAULT_PARAMS,
         previous: Optional[MpcSolution] = None) -> MpcSolution:
    """Solve one horizon from ``x0``.

    On an infeasible solve the returned trajectories are the restoration
    iterate, useful for logging and for the caller's fallback policy.
    """
    t0 = time.perf_counter()
    X, U = initial_guess(x0, T_amb, cfg, params, previous)
    tr = build_problem(x0, T_amb, cfg, params)
    tr.problem.x0 = tr.stack(X, U)
    sol = solve(tr.problem, cfg.solver)
    states, controls = tr.split(sol.x)
    return MpcSolution(controls=controls, states=states, objective=sol.objective,
                       status=sol.status, solve_time=time.perf_counter() - t0, nlp=sol,
                       form=tr.form)


def interpolate_control(solution: MpcSolution, t_now: float, t_plan: float,
                        delta_p: float) -> tuple[float, float]:
    """Zero-order hold of the planned input sequence."""
    N = solution.controls.shape[0]
    offset = t_now - t_plan
    # absorb roundoff from accumulated float time
    j = int(np.floor(offset / delta_p + 1e-9))
    if offset < -1e-9 or j >= N:
        raise ValueError(f"t_now={t_now} outside the planned window starting at {t_plan}")
    c = solution.controls[j]
    return float(c[0]), float(c[1])
