"""Health and safety limits of the cell together with residual evaluators.

Residuals follow the ``g <= 0`` convention and are expressed in natural
units (fraction, A, V, K, W).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .model import DEFAULT_PARAMS, BatteryParams, soc, terminal_voltage

Bounds = tuple[float, float]


@dataclass(frozen=True)
class ConstraintSet:
    """Bounds on the cell and actuator; temperatures in Kelvin."""

    soc_bounds: Bounds = (0.0, 1.0)
    current_bounds: Bounds = (0.0, 3.0)
    voltage_bounds: Bounds = (0.0, 4.2)
    tcore_bounds: Bounds = (263.15, 328.15)
    vs_bounds: Bounds = (0.0, 1.0)
    beta1: float = -0.04
    beta2: float = 0.08
    pact_bounds: Bounds = (-8.0, 8.0)
    soc_margin: float = 0.0
    tsurf_bounds: Optional[Bounds] = None

    def __post_init__(self):
        for name in ("soc_bounds", "current_bounds", "voltage_bounds", "tcore_bounds",
                     "vs_bounds", "pact_bounds", "tsurf_bounds"):
            b = getattr(self, name)
            if b is None:
                continue
            lo, hi = float(b[0]), float(b[1])
            if lo > hi:
                raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
            object.__setattr__(self, name, (lo, hi))
        if self.soc_margin < 0:
            raise ValueError("soc_margin must be non-negative")

    def with_overrides(self, **kwargs) -> "ConstraintSet":
        return replace(self, **kwargs)


DEFAULT_CONSTRAINTS = ConstraintSet()
OUTPUT_FEEDBACK_SOC_MARGIN = 0.05


def gradient_coefficients(cset: ConstraintSet, params: BatteryParams = DEFAULT_PARAMS):
    """Linear form ``a_b*V_b + a_s*V_s + c <= 0`` of the concentration-gradient limit."""
    cap = params.capacity
    a_b = -(cap + params.C_b * cset.beta1) / cap
    a_s = (cap - params.C_s * cset.beta1) / cap
    c = -cset.beta1 * cset.soc_margin - cset.beta2
    return a_b, a_s, c


def gradient_residual(V_b, V_s, cset: ConstraintSet = DEFAULT_CONSTRAINTS,
                      params: BatteryParams = DEFAULT_PARAMS):
    a_b, a_s, c = gradient_coefficients(cset, params)
    return a_b * np.asarray(V_b) + a_s * np.asarray(V_s) + c


def gradient_residual_direct(V_b, V_s, cset: ConstraintSet = DEFAULT_CONSTRAINTS,
                             params: BatteryParams = DEFAULT_PARAMS):
    """Same limit written as ``(V_s - V_b) - beta1*(SoC + margin) - beta2``."""
    s = soc(V_b, V_s, params)
    return (np.asarray(V_s) - np.asarray(V_b)) - cset.beta1 * (s + cset.soc_margin) - cset.beta2


@dataclass
class ConstraintReport:
    residuals: dict[str, float] = field(default_factory=dict)
    worst_violation: float = -np.inf
    violated_names: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violated_names


def _box(name: str, value: float, bounds: Bounds, out: dict) -> None:
    lo, hi = bounds
    out[name + "_lower"] = lo - value
    out[name + "_upper"] = value - hi


def check_state(state, u, V: Optional[float] = None,
                cset: ConstraintSet = DEFAULT_CONSTRAINTS,
                params: BatteryParams = DEFAULT_PARAMS, tol: float = 0.0) -> ConstraintReport:
    """Evaluate every limit at one knot.

    ``V`` defaults to the model terminal voltage at ``(state, u.I)``.  A
    constraint counts as violated when its residual exceeds ``tol``.
    """
    x = np.asarray(state, dtype=float)
    I, P = float(u[0]), float(u[1])
    if V is None:
        V = float(terminal_voltage(x[:4], I, params))
    res: dict[str, float] = {}
    _box("soc", float(soc(x[0], x[1], params)), cset.soc_bounds, res)
    _box("current", I, cset.current_bounds, res)
    _box("voltage", float(V), cset.voltage_bounds, res)
    _box("tcore", float(x[2]), cset.tcore_bounds, res)
    _box("vs", float(x[1]), cset.vs_bounds, res)
    if cset.tsurf_bounds is not None:
        _box("tsurf", float(x[3]), cset.tsurf_bounds, res)
    res["gradient"] = float(gradient_residual(x[0], x[1], cset, params))
    _box("pact", P, cset.pact_bounds, res)
    worst = max(res.values())
    violated = [k for k, v in res.items() if v > tol]
    return ConstraintReport(res, worst, violated)


def bound_magnitudes(cset: ConstraintSet = DEFAULT_CONSTRAINTS) -> dict[str, float]:
    """Reference magnitude per residual used for relative violation statistics."""
    out = {}
    for name, b in (("soc", cset.soc_bounds), ("current", cset.current_bounds),
                    ("voltage", cset.voltage_bounds), ("tcore", cset.tcore_bounds),
                    ("vs", cset.vs_bounds), ("pact", cset.pact_bounds),
                    ("tsurf", cset.tsurf_bounds)):
        if b is None:
            continue
        # a zero bound has no natural scale; fall back to unit magnitude
        out[name + "_lower"] = abs(b[0]) or 1.0
        out[name + "_upper"] = abs(b[1]) or 1.0
    out["gradient"] = abs(cset.beta2)
    return out
