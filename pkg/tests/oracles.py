"""Brute-force reference solutions used by the test suite."""

import numpy as np

from chargelab import model
from chargelab.constraints import DEFAULT_CONSTRAINTS, gradient_residual
from chargelab.model import celsius
from chargelab.mpc import MpcConfig

# two-interval charging problem with the core-temperature limit close by
TOY_X0 = np.array([0.893, 0.897, celsius(54.5), celsius(56.0)])
TOY_T_AMB = celsius(70.0)
TOY_CFG = MpcConfig(N=2, delta_p=30.0)


def toy_objective(U, x0=TOY_X0, T_amb=TOY_T_AMB, cfg=TOY_CFG, feas_tol=0.0):
    """Cost and feasibility mask for controls ``U[..., (I0, P0, I1, P1)]``."""
    c = cfg.constraints
    u0, u1 = U[..., 0:2], U[..., 2:4]
    xa = np.broadcast_to(x0, U.shape[:-1] + (4,))
    xb = model.euler_step(xa, u0, T_amb, cfg.delta_p)
    xc = model.euler_step(xb, u1, T_amb, cfg.delta_p)
    s = [model.soc(x[..., 0], x[..., 1]) for x in (xa, xb, xc)]
    J = (cfg.w1 * sum((si - cfg.soc_target) ** 2 for si in s)
         + cfg.w2 * (U[..., 2] - U[..., 0]) ** 2 + cfg.w3 * (U[..., 3] - U[..., 1]) ** 2)
    t = feas_tol
    ok = np.ones(U.shape[:-1], dtype=bool)
    for x, si in ((xb, s[1]), (xc, s[2])):
        ok &= (si <= 1 + t) & (si >= -t)
        ok &= (x[..., 2] <= c.tcore_bounds[1] + t) & (x[..., 2] >= c.tcore_bounds[0] - t)
        ok &= (x[..., 1] <= 1 + t) & (x[..., 1] >= -t)
        ok &= gradient_residual(x[..., 0], x[..., 1]) <= t
    for x, u in ((xa, u0), (xb, u1)):
        V = model.terminal_voltage(x, u[..., 0])
        ok &= (V <= c.voltage_bounds[1] + t) & (V >= c.voltage_bounds[0] - t)
    return J, ok


def grid_search(fun, lower, upper, points: int = 21, levels: int = 6):
    """Multi-resolution exhaustive search: each level re-grids a shrunken box
    around the incumbent.  Final spacing is ``(upper-lower) * (4/(points-1))**(levels-1) / (points-1)``.
    """
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    center, width = (lower + upper) / 2, upper - lower
    best_J, best_u = np.inf, None
    for _ in range(levels):
        axes = [np.clip(np.linspace(center[k] - width[k] / 2, center[k] + width[k] / 2, points),
                        lower[k], upper[k]) for k in range(lower.size)]
        G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lower.size)
        J, ok = fun(G)
        J = np.where(ok, J, np.inf)
        k = int(np.argmin(J))
        if J[k] < best_J:
            best_J, best_u = float(J[k]), G[k]
        center, width = best_u, width * 4 / (points - 1)
    return best_J, best_u


def kkt_audit(problem, x, lam_e, lam_i, bound_tol: float = 1e-9):
    """First-order optimality measures recomputed from a freshly built problem.

    Returns ``(stationarity, complementarity, dual_sign, primal)``; the first
    three are scaled by ``max(1, |grad f|_inf)``.  Bound multipliers are the
    Lagrangian-gradient components on active bounds, whose sign must match
    the side of the bound.
    """
    f, g, ce, Je, ci, Ji = problem.evaluate(x)
    r = g.copy()
    if ce.size:
        r += Je.T @ lam_e
    if ci.size:
        r += Ji.T @ lam_i
    scale = max(1.0, float(np.max(np.abs(g))))
    lo, hi = problem.lower, problem.upper
    on_lo = np.isfinite(lo) & (x - lo <= bound_tol * np.maximum(1.0, np.abs(lo)))
    on_hi = np.isfinite(hi) & (hi - x <= bound_tol * np.maximum(1.0, np.abs(hi)))
    free = ~(on_lo | on_hi)
    stat = np.concatenate([np.abs(r[free]), np.maximum(-r[on_lo & ~on_hi], 0.0),
                           np.maximum(r[on_hi & ~on_lo], 0.0)])
    stationarity = float(stat.max()) / scale if stat.size else 0.0
    comp = float(np.max(np.abs(lam_i * ci))) / scale if ci.size else 0.0
    dual = float(max(0.0, -lam_i.min())) / scale if ci.size else 0.0
    primal = max(float(np.max(np.abs(ce))) if ce.size else 0.0,
                 float(np.max(ci)) if ci.size else 0.0,
                 float(np.max(lo - x)), float(np.max(x - hi)), 0.0)
    return stationarity, comp, dual, primal
