"""Dense SQP solver for smooth, box-bounded nonlinear programs.

    minimize    f(x)
    subject to  c_E(x) = 0,  c_I(x) <= 0,  lo <= x <= hi

Each iteration solves a convex QP built from a damped-BFGS model of the
Lagrangian Hessian (dense dual active-set method from ``daqp``) and takes a
backtracking step on the l1 exact-penalty merit function.  When the
linearised constraints are inconsistent, or the line search stalls far from
feasibility, an l-infinity elastic restoration phase minimises the largest
constraint violation with the objective frozen.
"""

from __future__ import annotations

import time
from ctypes import c_int
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
import daqp

FunGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]
FunJac = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]

# daqp constraint kinds and exit flags
_INEQ, _EQ = 0, 5
_QP_INFEASIBLE = -1
_BIG = 1e30


class Status(str, Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"


class NlpEvaluationError(RuntimeError):
    """Objective or constraint functions returned non-finite values."""


@dataclass
class NlpProblem:
    """Problem data; callables return ``(value, derivative)`` pairs.

    ``hessian`` is an optional positive semidefinite seed for the Lagrangian
    Hessian model, typically the exact Hessian of a quadratic objective.
    """

    n: int
    objective: FunGrad
    lower: np.ndarray
    upper: np.ndarray
    x0: np.ndarray
    eq: Optional[FunJac] = None
    m_eq: int = 0
    ineq: Optional[FunJac] = None
    m_ineq: int = 0
    hessian: Optional[np.ndarray] = None

    def __post_init__(self):
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (self.n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (self.n,)).copy()
        self.x0 = np.asarray(self.x0, dtype=float).reshape(self.n)
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    def evaluate(self, x):
        f, g = self.objective(x)
        ce, Je = self.eq(x) if self.eq is not None else (np.zeros(0), np.zeros((0, self.n)))
        ci, Ji = self.ineq(x) if self.ineq is not None else (np.zeros(0), np.zeros((0, self.n)))
        return float(f), np.asarray(g, float), np.asarray(ce, float), np.asarray(Je, float), \
            np.asarray(ci, float), np.asarray(Ji, float)


@dataclass(frozen=True)
class SolverOptions:
    tol_kkt: float = 1e-6
    tol_feas: float = 1e-8
    max_iter: int = 200
    restoration_iter: int = 50
    hessian_shift: float = 1e-6
    armijo: float = 1e-4
    min_step: float = 1e-10


@dataclass
class Multipliers:
    eq: np.ndarray
    ineq: np.ndarray


@dataclass
class NlpSolution:
    x: np.ndarray
    status: Status
    objective: float
    kkt_residual: float
    constraint_violation: float
    iterations: int
    wall_time: float
    multipliers: Multipliers = field(default_factory=lambda: Multipliers(np.zeros(0), np.zeros(0)))
    restoration_iterations: int = 0

    @property
    def success(self) -> bool:
        return self.status is Status.OPTIMAL


# ---------------------------------------------------------------------------
# helpers shared with tests

def violation(ce: np.ndarray, ci: np.ndarray) -> float:
    v = 0.0
    if ce.size:
        v = max(v, float(np.max(np.abs(ce))))
    if ci.size:
        v = max(v, float(np.max(ci)))
    return v


def kkt_residuals(x, g, Je, Ji, ci, lam_e, lam_i, lower, upper, bound_tol: float = 1e-9):
    """Scaled stationarity, complementarity and dual-infeasibility measures.

    Stationarity is the box-projected gradient of the Lagrangian (bound
    multipliers eliminated), scaled by ``max(1, |grad f|_inf)``.
    """
    r = g + Je.T @ lam_e + Ji.T @ lam_i
    scale = max(1.0, float(np.max(np.abs(g))) if g.size else 1.0)
    with np.errstate(invalid="ignore"):
        at_lo = x <= lower + bound_tol * np.maximum(1.0, np.abs(lower))
        at_hi = x >= upper - bound_tol * np.maximum(1.0, np.abs(upper))
    proj = r.copy()
    proj[at_lo] = np.minimum(proj[at_lo], 0.0)
    proj[at_hi] = np.maximum(proj[at_hi], 0.0)
    proj[at_lo & at_hi] = 0.0
    stationarity = float(np.max(np.abs(proj))) / scale if proj.size else 0.0
    comp = float(np.max(np.abs(lam_i * np.minimum(ci, 0.0)))) / scale if ci.size else 0.0
    dual = float(max(0.0, -np.min(lam_i))) / scale if lam_i.size else 0.0
    return stationarity, comp, dual


def finite_difference_check(problem: NlpProblem, x, h: float = 1e-6) -> float:
    """Worst relative error of supplied derivatives against central differences."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    pieces = [(lambda z: (np.atleast_1d(problem.objective(z)[0]), np.atleast_2d(problem.objective(z)[1])))]
    if problem.eq is not None:
        pieces.append(problem.eq)
    if problem.ineq is not None:
        pieces.append(problem.ineq)
    worst = 0.0
    for fun in pieces:
        _, J = fun(x)
        J = np.atleast_2d(J)
        fd = np.empty_like(J)
        for k in range(x.size):
            e = np.zeros_like(x)
            e[k] = h * max(1.0, abs(x[k]))
            fp, _ = fun(x + e)
            fm, _ = fun(x - e)
            fd[:, k] = (np.atleast_1d(fp) - np.atleast_1d(fm)) / (2 * e[k])
        if J.size == 0:
            continue
        scale = np.maximum(np.abs(fd), 1.0)
        worst = max(worst, float(np.max(np.abs(J - fd) / scale)))
    return worst


# ---------------------------------------------------------------------------
# QP subproblem

@dataclass
class _QpResult:
    d: np.ndarray
    lam_e: np.ndarray
    lam_i: np.ndarray
    ok: bool
    infeasible: bool
    dual: Optional[np.ndarray] = None


def _solve_qp(H, g, ce, Je, ci, Ji, dlo, dhi, tol: float, dual_start=None) -> _QpResult:
    n = g.size
    me, mi = ce.size, ci.size
    A = np.vstack([Je, Ji]) if me + mi else np.zeros((0, n))
    bu = np.concatenate([np.minimum(dhi, _BIG), -ce, -ci])
    bl = np.concatenate([np.maximum(dlo, -_BIG), -ce, np.full(mi, -_BIG)])
    sense = np.zeros(n + me + mi, dtype=c_int)
    sense[n:n + me] = _EQ
    kwargs = dict(primal_tol=tol, dual_tol=1e-12, iter_limit=20000)
    if dual_start is not None and dual_start.size == sense.size:
        kwargs["dual_start"] = dual_start
    Hs = np.ascontiguousarray(0.5 * (H + H.T))
    d, _, flag, info = daqp.solve(Hs, np.ascontiguousarray(g), np.ascontiguousarray(A),
                                  bu, bl, sense, **kwargs)
    if flag < 1:
        # a stale warm start can trip the active-set method; retry cold once
        if "dual_start" in kwargs:
            return _solve_qp(H, g, ce, Je, ci, Ji, dlo, dhi, tol)
        return _QpResult(np.zeros(n), np.zeros(me), np.zeros(mi), False, flag == _QP_INFEASIBLE)
    lam = np.asarray(info["lam"], dtype=float)
    d = np.asarray(d, dtype=float)
    return _QpResult(d, lam[n:n + me].copy(), np.maximum(lam[n + me:], 0.0), True, False, lam)


def _bfgs_update(B, s, y):
    """Powell-damped BFGS update; keeps ``B`` positive definite."""
    Bs = B @ s
    sBs = float(s @ Bs)
    if sBs <= 1e-16 * max(1.0, float(s @ s)):
        return B
    sy = float(s @ y)
    if sy < 0.2 * sBs:
        theta = 0.8 * sBs / (sBs - sy)
        y = theta * y + (1.0 - theta) * Bs
        sy = float(s @ y)
    return B - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy


def _check_finite(*arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


# ---------------------------------------------------------------------------
# main loop

class _Evaluator:
    def __init__(self, problem: NlpProblem):
        self.problem = problem

    def __call__(self, x):
        out = self.problem.evaluate(x)
        if not _check_finite(np.array(out[0]), *out[1:]):
            raise NlpEvaluationError("non-finite function value")
        return out


def _merit(f, ce, ci, rho):
    return f + rho * (float(np.sum(np.abs(ce))) + float(np.sum(np.maximum(ci, 0.0))))


def solve(problem: NlpProblem, options: SolverOptions = SolverOptions(), *,
          tol_kkt: Optional[float] = None, tol_feas: Optional[float] = None,
          max_iter: Optional[int] = None) -> NlpSolution:
    """Run SQP from ``problem.x0`` (clamped into the box)."""
    overrides = {k: v for k, v in (("tol_kkt", tol_kkt), ("tol_feas", tol_feas),
                                   ("max_iter", max_iter)) if v is not None}
    if overrides:
        options = SolverOptions(**{**options.__dict__, **overrides})
    t0 = time.perf_counter()
    x = np.clip(problem.x0, problem.lower, problem.upper)
    evaluate = _Evaluator(problem)
    try:
        state = evaluate(x)
    except NlpEvaluationError:
        raise NlpEvaluationError("non-finite objective or constraint at the initial guess")
    sol = _sqp(problem, evaluate, x, state, options, allow_restoration=True)
    sol.wall_time = time.perf_counter() - t0
    return sol


def _initial_hessian(problem: NlpProblem, shift: float) -> np.ndarray:
    n = problem.n
    if problem.hessian is not None:
        B = np.array(problem.hessian, dtype=float)
        return B + shift * np.eye(n)
    return np.eye(n)


def _sqp(problem: NlpProblem, evaluate, x, state, opt: SolverOptions,
         allow_restoration: bool) -> NlpSolution:
    f, g, ce, Je, ci, Ji = state
    lo, hi = problem.lower, problem.upper
    B = _initial_hessian(problem, opt.hessian_shift)
    rho = 1.0
    lam_e = np.zeros(ce.size)
    lam_i = np.zeros(ci.size)
    dual = None
    restoration_iters = 0
    restored = False
    stall = 0
    qp_tol = min(1e-9, 0.1 * opt.tol_feas)
    for it in range(opt.max_iter):
        qp = _solve_qp(B, g, ce, Je, ci, Ji, lo - x, hi - x, qp_tol, dual)
        if not qp.ok:
            if allow_restoration and not restored:
                res = _restore(problem, evaluate, x, opt)
                restoration_iters += res.iterations
                if res.constraint_violation > opt.tol_feas:
                    return _finish(problem, res.x, Status.INFEASIBLE, lam_e, lam_i,
                                   it, restoration_iters, opt, evaluate)
                restored = True
                x = res.x
                f, g, ce, Je, ci, Ji = evaluate(x)
                B = _initial_hessian(problem, opt.hessian_shift)
                dual = None
                continue
            if qp.infeasible:
                return _finish(problem, x, Status.INFEASIBLE, lam_e, lam_i,
                               it, restoration_iters, opt, evaluate)
            # numerical trouble inside the QP; restart the Hessian model
            B = _initial_hessian(problem, opt.hessian_shift)
            dual = None
            stall += 1
            if stall > 3:
                break
            continue
        restored = False
        d, lam_e, lam_i, dual = qp.d, qp.lam_e, qp.lam_i, qp.dual

        viol = violation(ce, ci)
        stat, comp, dinf = kkt_residuals(x, g, Je, Ji, ci, lam_e, lam_i, lo, hi)
        if viol <= opt.tol_feas and max(stat, comp, dinf) <= opt.tol_kkt:
            return _finish(problem, x, Status.OPTIMAL, lam_e, lam_i, it,
                           restoration_iters, opt, evaluate, state=(f, g, ce, Je, ci, Ji))

        # penalty parameter and directional derivative of the merit function
        lam_max = max(float(np.max(np.abs(lam_e))) if lam_e.size else 0.0,
                      float(np.max(lam_i)) if lam_i.size else 0.0)
        if rho < 1.1 * lam_max:
            rho = 2.0 * lam_max + 1e-8
        l1 = float(np.sum(np.abs(ce))) + float(np.sum(np.maximum(ci, 0.0)))
        phi0 = f + rho * l1
        dphi = float(g @ d) - rho * l1
        dphi = min(dphi, -1e-16)

        alpha = 1.0
        accepted = False
        x_new = None
        soc_tried = False
        while alpha >= opt.min_step:
            trial = np.clip(x + alpha * d, lo, hi)
            try:
                st = evaluate(trial)
                phi = _merit(st[0], st[2], st[4], rho)
            except NlpEvaluationError:
                phi = np.inf
            if phi <= phi0 + opt.armijo * alpha * dphi:
                accepted, x_new, new_state = True, trial, st
                break
            if alpha == 1.0 and not soc_tried and np.isfinite(phi):
                soc_tried = True
                corr = _second_order_correction(B, g, d, st, Je, Ji, ce, ci, x, lo, hi, qp_tol)
                if corr is not None:
                    trial = np.clip(x + d + corr, lo, hi)
                    try:
                        st2 = evaluate(trial)
                        phi2 = _merit(st2[0], st2[2], st2[4], rho)
                    except NlpEvaluationError:
                        phi2 = np.inf
                    if phi2 <= phi0 + opt.armijo * dphi:
                        accepted, x_new, new_state = True, trial, st2
                        break
            alpha *= 0.5

        if not accepted:
            if allow_restoration and viol > opt.tol_feas and not restored:
                res = _restore(problem, evaluate, x, opt)
                restoration_iters += res.iterations
                if res.constraint_violation > opt.tol_feas:
                    return _finish(problem, res.x, Status.INFEASIBLE, lam_e, lam_i,
                                   it, restoration_iters, opt, evaluate)
                restored = True
                x = res.x
                f, g, ce, Je, ci, Ji = evaluate(x)
                B = _initial_hessian(problem, opt.hessian_shift)
                dual = None
                continue
            stall += 1
            if stall > 3:
                break
            B = _initial_hessian(problem, opt.hessian_shift)
            continue
        stall = 0

        s = x_new - x
        fn, gn, cen, Jen, cin, Jin = new_state
        y = (gn + Jen.T @ lam_e + Jin.T @ lam_i) - (g + Je.T @ lam_e + Ji.T @ lam_i)
        B = _bfgs_update(B, s, y)
        x = x_new
        f, g, ce, Je, ci, Ji = new_state
        state = new_state
    return _finish(problem, x, Status.MAX_ITER, lam_e, lam_i, opt.max_iter,
                   restoration_iters, opt, evaluate)


def _second_order_correction(B, g, d, trial_state, Je, Ji, ce, ci, x, lo, hi, tol):
    """Re-solve the QP with constraint values taken at the full step."""
    _, _, ce_t, _, ci_t, _ = trial_state
    qp = _solve_qp(B, g + B @ d, ce_t, Je, ci_t, Ji, lo - x - d, hi - x - d, tol)
    if not qp.ok:
        return None
    return qp.d


def _finish(problem, x, status, lam_e, lam_i, iters, rest_iters, opt, evaluate, state=None):
    f, g, ce, Je, ci, Ji = state if state is not None else evaluate(x)
    viol = violation(ce, ci)
    if lam_e.size != ce.size:
        lam_e = np.zeros(ce.size)
    if lam_i.size != ci.size:
        lam_i = np.zeros(ci.size)
    stat, comp, dinf = kkt_residuals(x, g, Je, Ji, ci, lam_e, lam_i, problem.lower, problem.upper)
    return NlpSolution(x=x, status=status, objective=f, kkt_residual=max(stat, comp, dinf),
                       constraint_violation=viol, iterations=iters, wall_time=0.0,
                       multipliers=Multipliers(lam_e, lam_i), restoration_iterations=rest_iters)


# ---------------------------------------------------------------------------
# feasibility restoration

def _restore(problem: NlpProblem, evaluate, x_ref, opt: SolverOptions) -> NlpSolution:
    """Minimise the largest constraint violation ``t`` from ``x_ref``.

    Variables are ``(x, t)``; the box on ``x`` stays hard and a small
    proximal term keeps the point close to ``x_ref``.
    """
    n = problem.n
    eps = 1e-6

    def objective(z):
        dx = z[:n] - x_ref
        grad = np.zeros(n + 1)
        grad[:n] = eps * dx
        grad[n] = 1.0
        return z[n] + 0.5 * eps * float(dx @ dx), grad

    def ineq(z):
        _, _, ce, Je, ci, Ji = evaluate(z[:n])
        t = z[n]
        me, mi = ce.size, ci.size
        vals = np.concatenate([ce - t, -ce - t, ci - t])
        J = np.zeros((2 * me + mi, n + 1))
        J[:me, :n] = Je
        J[me:2 * me, :n] = -Je
        J[2 * me:, :n] = Ji
        J[:, n] = -1.0
        return vals, J

    _, _, ce0, _, ci0, _ = evaluate(x_ref)
    t0 = max(violation(ce0, ci0), 0.0)
    hess = np.zeros((n + 1, n + 1))
    hess[:n, :n] = eps * np.eye(n)
    sub = NlpProblem(n=n + 1, objective=objective,
                     lower=np.append(problem.lower, 0.0), upper=np.append(problem.upper, np.inf),
                     x0=np.append(x_ref, t0), ineq=ineq,
                     m_ineq=2 * problem.m_eq + problem.m_ineq, hessian=hess)
    sub_opt = SolverOptions(tol_kkt=opt.tol_kkt, tol_feas=opt.tol_feas,
                            max_iter=opt.restoration_iter, hessian_shift=1e-8)
    sub_eval = _Evaluator(sub)
    res = _sqp(sub, sub_eval, sub.x0, sub_eval(sub.x0), sub_opt, allow_restoration=False)
    xr = res.x[:n]
    _, _, ce, _, ci, _ = evaluate(xr)
    res.x = xr
    res.constraint_violation = violation(ce, ci)
    return res
