"""Thermal-NDC electro-thermal cell model.

Two capacitors (bulk ``C_b`` and surface ``C_s``) joined by a temperature
dependent diffusion resistor describe charge storage; an OCV polynomial in
series with an SoC/temperature dependent ohmic resistor gives the terminal
voltage; a two-node lumped thermal network (core, surface) couples the cell
to the ambient and to an active heating/cooling plate.

All functions work on numpy arrays whose last axis holds the state
components, so they evaluate a whole horizon of knots at once.  Temperatures
are Kelvin throughout.

State layout::

    x = [V_b, V_s, T_core, T_surf]          (control model, u = [I, P_act])
    x = [V_b, V_s, T_core, T_surf, I]       (augmented model, u = [u1, P_act])
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple, Union

import numpy as np

KELVIN_OFFSET = 273.15

VB, VS, TC, TS, IC = 0, 1, 2, 3, 4


def celsius(t_degc: float) -> float:
    return t_degc + KELVIN_OFFSET


def to_celsius(t_kelvin: float) -> float:
    return t_kelvin - KELVIN_OFFSET


@dataclass(frozen=True)
class BatteryParams:
    """Cell constants; defaults are the 3 Ah NCR-18650B identification."""

    C_b: float = 10037.0
    C_s: float = 973.0
    R_b: float = 0.019
    gamma1: float = 0.026
    gamma2: float = 0.061
    gamma3: float = 14.36
    alpha: tuple[float, ...] = (3.2, 2.59, -9.003, 18.87, -17.82, 6.325)
    kappa1: float = 30.0
    kappa2: float = 70.0
    T_ref: float = 298.15
    C_core: float = 40.0
    C_surf: float = 10.0
    R_core: float = 4.0
    R_surf: float = 7.0
    eta_act: float = 0.87
    Vbar_b: float = 1.0
    Vbar_s: float = 1.0

    def __post_init__(self):
        positive = ("C_b", "C_s", "R_b", "C_core", "C_surf", "R_core", "R_surf", "T_ref")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive, got {getattr(self, name)}")
        if not 0.0 <= self.eta_act <= 1.0:
            raise ValueError(f"eta_act must lie in [0, 1], got {self.eta_act}")
        if len(self.alpha) != 6:
            raise ValueError("alpha must hold six OCV polynomial coefficients")
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))

    @property
    def capacity(self) -> float:
        """Charge at full SoC, in coulombs (C_b*Vbar_b + C_s*Vbar_s)."""
        return self.C_b * self.Vbar_b + self.C_s * self.Vbar_s

    def with_overrides(self, **kwargs) -> "BatteryParams":
        return replace(self, **kwargs)

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["alpha"] = list(self.alpha)
        return out


DEFAULT_PARAMS = BatteryParams()


class BatteryState(NamedTuple):
    V_b: float
    V_s: float
    T_core: float
    T_surf: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


class AugmentedState(NamedTuple):
    V_b: float
    V_s: float
    T_core: float
    T_surf: float
    I: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)

    @property
    def battery(self) -> BatteryState:
        return BatteryState(self.V_b, self.V_s, self.T_core, self.T_surf)


class ControlInput(NamedTuple):
    I: float
    P_act: float


class AugmentedInput(NamedTuple):
    u1: float
    P_act: float


StateLike = Union[BatteryState, AugmentedState, np.ndarray]


class ModelDomainError(ValueError):
    """Raised when a temperature is not a positive absolute temperature."""


def _check_temperature(T_core) -> None:
    if np.any(~(np.asarray(T_core) > 0)):
        raise ModelDomainError(f"core temperature must be positive Kelvin, got {T_core}")


# ---------------------------------------------------------------------------
# static maps

def ocv(V_s, params: BatteryParams = DEFAULT_PARAMS):
    """Open-circuit voltage polynomial h(V_s); defined on all reals."""
    a = params.alpha
    v = np.asarray(V_s, dtype=float)
    return a[0] + v * (a[1] + v * (a[2] + v * (a[3] + v * (a[4] + v * a[5]))))


def ocv_slope(V_s, params: BatteryParams = DEFAULT_PARAMS):
    a = params.alpha
    v = np.asarray(V_s, dtype=float)
    return a[1] + v * (2 * a[2] + v * (3 * a[3] + v * (4 * a[4] + v * 5 * a[5])))


def soc(V_b, V_s, params: BatteryParams = DEFAULT_PARAMS):
    return (params.C_b * np.asarray(V_b) + params.C_s * np.asarray(V_s)) / params.capacity


def soc_weights(params: BatteryParams = DEFAULT_PARAMS) -> tuple[float, float]:
    """Partial derivatives of SoC with respect to V_b and V_s."""
    return params.C_b / params.capacity, params.C_s / params.capacity


def arrhenius(T_core, kappa: float, params: BatteryParams = DEFAULT_PARAMS):
    _check_temperature(T_core)
    return np.exp(kappa * (1.0 / np.asarray(T_core, dtype=float) - 1.0 / params.T_ref))


def internal_resistance(soc_value, T_core, params: BatteryParams = DEFAULT_PARAMS):
    base = params.gamma1 + params.gamma2 * np.exp(-params.gamma3 * np.asarray(soc_value))
    return base * arrhenius(T_core, params.kappa1, params)


def diffusion_resistance(T_core, params: BatteryParams = DEFAULT_PARAMS):
    return params.R_b * arrhenius(T_core, params.kappa2, params)


def terminal_voltage(state: StateLike, I, params: BatteryParams = DEFAULT_PARAMS):
    x = np.asarray(state, dtype=float)
    s = soc(x[..., VB], x[..., VS], params)
    return ocv(x[..., VS], params) + internal_resistance(s, x[..., TC], params) * I


def heat_generation(state: StateLike, I, params: BatteryParams = DEFAULT_PARAMS):
    """Joule heat released in the core; OCV is taken at the SoC value."""
    x = np.asarray(state, dtype=float)
    s = soc(x[..., VB], x[..., VS], params)
    return I * (terminal_voltage(x, I, params) - ocv(s, params))


def active_heat(P_act, params: BatteryParams = DEFAULT_PARAMS):
    return params.eta_act * np.asarray(P_act)


def split_net_thermal_power(P_net: float, eta_heat: float, eta_cool: float,
                            P_heat_max: float, P_cool_min: float) -> tuple[float, float]:
    """Split a net plate heat flow into heater and cooler commands.

    Returns ``(P_heat, P_cool)`` with ``eta_heat*P_heat + eta_cool*P_cool == P_net``.
    """
    if not (0 < eta_heat <= 1 and 0 < eta_cool <= 1):
        raise ValueError("efficiencies must lie in (0, 1]")
    if P_heat_max < 0 or P_cool_min > 0:
        raise ValueError("need P_heat_max >= 0 >= P_cool_min")
    lo, hi = eta_cool * P_cool_min, eta_heat * P_heat_max
    if not lo <= P_net <= hi:
        raise ValueError(f"net thermal power {P_net} outside achievable range [{lo}, {hi}]")
    if P_net >= 0:
        return P_net / eta_heat, 0.0
    return 0.0, P_net / eta_cool


# ---------------------------------------------------------------------------
# dynamics

def derivative(state: StateLike, u, T_amb, params: BatteryParams = DEFAULT_PARAMS) -> np.ndarray:
    """Continuous-time rate of the 4-state model, ``u = [I, P_act]``."""
    x = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    I, P = u[..., 0], u[..., 1]
    p = params
    Vb, Vs, Tc, Ts = x[..., VB], x[..., VS], x[..., TC], x[..., TS]
    R_bT = diffusion_resistance(Tc, p)
    q_gen = heat_generation(x, I, p)
    out = np.empty(np.broadcast_shapes(x.shape[:-1], u.shape[:-1]) + (4,))
    out[..., 0] = (Vs - Vb) / (p.C_b * R_bT)
    out[..., 1] = (Vb - Vs) / (p.C_s * R_bT) + I / p.C_s
    out[..., 2] = (Ts - Tc) / (p.R_core * p.C_core) + q_gen / p.C_core
    out[..., 3] = ((Tc - Ts) / (p.R_core * p.C_surf) + (T_amb - Ts) / (p.R_surf * p.C_surf)
                   + active_heat(P, p) / p.C_surf)
    return out


def derivative_augmented(state: StateLike, u, T_amb,
                         params: BatteryParams = DEFAULT_PARAMS) -> np.ndarray:
    """Rate of the 5-state model where the current is an integrator, ``u = [u1, P_act]``."""
    x = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    inner_u = np.stack(np.broadcast_arrays(x[..., IC], u[..., 1]), axis=-1)
    rate4 = derivative(x[..., :4], inner_u, T_amb, params)
    return np.concatenate([rate4, np.broadcast_to(u[..., :1], rate4.shape[:-1] + (1,))], axis=-1)


def derivative_jacobians(state: StateLike, u, T_amb, params: BatteryParams = DEFAULT_PARAMS):
    """Analytic ``(df/dx, df/du)`` of the 4-state rate; shapes ``(..., 4, 4)`` and ``(..., 4, 2)``."""
    x = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    p = params
    I = u[..., 0]
    Vb, Vs, Tc, Ts = x[..., VB], x[..., VS], x[..., TC], x[..., TS]
    cb, cs = soc_weights(p)
    s = soc(Vb, Vs, p)
    arr1 = arrhenius(Tc, p.kappa1, p)
    g = 1.0 / diffusion_resistance(Tc, p)
    dg_dT = g * p.kappa2 / Tc**2
    e = p.gamma2 * np.exp(-p.gamma3 * s)
    R_o = (p.gamma1 + e) * arr1
    dRo_ds = -p.gamma3 * e * arr1
    dRo_dT = -R_o * p.kappa1 / Tc**2
    hs_slope = ocv_slope(Vs, p)
    hsoc_slope = ocv_slope(s, p)

    # heat generation Q = I*h(Vs) - I*h(SoC) + R_o*I^2
    dQ_dVb = -I * hsoc_slope * cb + I**2 * dRo_ds * cb
    dQ_dVs = I * hs_slope - I * hsoc_slope * cs + I**2 * dRo_ds * cs
    dQ_dT = I**2 * dRo_dT
    dQ_dI = ocv(Vs, p) - ocv(s, p) + 2.0 * R_o * I

    shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    A = np.zeros(shape + (4, 4))
    B = np.zeros(shape + (4, 2))
    A[..., 0, 0] = -g / p.C_b
    A[..., 0, 1] = g / p.C_b
    A[..., 0, 2] = (Vs - Vb) / p.C_b * dg_dT
    A[..., 1, 0] = g / p.C_s
    A[..., 1, 1] = -g / p.C_s
    A[..., 1, 2] = (Vb - Vs) / p.C_s * dg_dT
    A[..., 2, 0] = dQ_dVb / p.C_core
    A[..., 2, 1] = dQ_dVs / p.C_core
    A[..., 2, 2] = -1.0 / (p.R_core * p.C_core) + dQ_dT / p.C_core
    A[..., 2, 3] = 1.0 / (p.R_core * p.C_core)
    A[..., 3, 2] = 1.0 / (p.R_core * p.C_surf)
    A[..., 3, 3] = -1.0 / (p.R_core * p.C_surf) - 1.0 / (p.R_surf * p.C_surf)
    B[..., 1, 0] = 1.0 / p.C_s
    B[..., 2, 0] = dQ_dI / p.C_core
    B[..., 3, 1] = p.eta_act / p.C_surf
    return A, B


def derivative_augmented_jacobians(state: StateLike, u, T_amb,
                                   params: BatteryParams = DEFAULT_PARAMS):
    """Analytic ``(df/dx, df/du)`` of the 5-state rate; shapes ``(..., 5, 5)`` and ``(..., 5, 2)``."""
    x = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    inner_u = np.stack(np.broadcast_arrays(x[..., IC], u[..., 1]), axis=-1)
    A4, B4 = derivative_jacobians(x[..., :4], inner_u, T_amb, params)
    shape = A4.shape[:-2]
    A = np.zeros(shape + (5, 5))
    B = np.zeros(shape + (5, 2))
    A[..., :4, :4] = A4
    A[..., :4, 4] = B4[..., :, 0]
    B[..., :4, 1] = B4[..., :, 1]
    B[..., 4, 0] = 1.0
    return A, B


def voltage_gradient(state: StateLike, I, params: BatteryParams = DEFAULT_PARAMS):
    """Partial derivatives of the terminal voltage.

    Returns ``(dV/dx[..., 4], dV/dI)`` for the 4-state layout.
    """
    x = np.asarray(state, dtype=float)
    p = params
    Vb, Vs, Tc = x[..., VB], x[..., VS], x[..., TC]
    cb, cs = soc_weights(p)
    s = soc(Vb, Vs, p)
    arr1 = arrhenius(Tc, p.kappa1, p)
    e = p.gamma2 * np.exp(-p.gamma3 * s)
    R_o = (p.gamma1 + e) * arr1
    dRo_ds = -p.gamma3 * e * arr1
    grad = np.zeros(x.shape[:-1] + (4,))
    grad[..., 0] = dRo_ds * cb * I
    grad[..., 1] = ocv_slope(Vs, p) + dRo_ds * cs * I
    grad[..., 2] = -R_o * p.kappa1 / Tc**2 * I
    return grad, R_o


def _is_augmented(x: np.ndarray) -> bool:
    return x.shape[-1] == 5


def euler_step(state, u, T_amb, dt: float, params: BatteryParams = DEFAULT_PARAMS):
    """One explicit Euler step; the 5-component form selects the augmented model.

    Returns the same type as ``state`` (NamedTuple in, NamedTuple out).
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(state, dtype=float)
    rate = derivative_augmented if _is_augmented(x) else derivative
    nxt = x + dt * rate(x, u, T_amb, params)
    if isinstance(state, (BatteryState, AugmentedState)):
        return type(state)(*map(float, nxt))
    return nxt


def output(state, u, params: BatteryParams = DEFAULT_PARAMS):
    """Measured outputs ``(T_surf, V)``; for a 5-state input ``(T_surf, V, I)``.

    ``u`` is the control input of the 4-state form and is ignored for the
    augmented form, whose current lives in the state.
    """
    x = np.asarray(state, dtype=float)
    if _is_augmented(x):
        I = x[..., IC]
        return np.stack([x[..., TS], terminal_voltage(x[..., :4], I, params), I], axis=-1)
    I = np.asarray(u, dtype=float)[..., 0]
    return np.stack(np.broadcast_arrays(x[..., TS], terminal_voltage(x, I, params)), axis=-1)


def output_jacobian(state, params: BatteryParams = DEFAULT_PARAMS) -> np.ndarray:
    """``dh/dx`` of the augmented output map, shape ``(..., 3, 5)``."""
    x = np.asarray(state, dtype=float)
    dV, R_o = voltage_gradient(x[..., :4], x[..., IC], params)
    H = np.zeros(x.shape[:-1] + (3, 5))
    H[..., 0, TS] = 1.0
    H[..., 1, :4] = dV
    H[..., 1, IC] = R_o
    H[..., 2, IC] = 1.0
    return H


def ocv_inverse(voltage: float, params: BatteryParams = DEFAULT_PARAMS) -> float:
    """Surface voltage whose OCV equals ``voltage`` (monotone branch on [0, 1])."""
    from scipy.optimize import brentq

    lo, hi = ocv(0.0, params), ocv(1.0, params)
    v = min(max(voltage, float(lo)), float(hi))
    return brentq(lambda s: float(ocv(s, params)) - v, 0.0, 1.0, xtol=1e-14)


@dataclass
class Trajectory:
    """Stacked knots of a simulated or predicted state sequence."""

    states: np.ndarray
    inputs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))


def rollout(x0, inputs, T_amb, dt: float, params: BatteryParams = DEFAULT_PARAMS) -> np.ndarray:
    """Euler-propagate ``x0`` through ``inputs`` (shape ``(N, 2)``); returns ``(N+1, n)`` states."""
    x = np.asarray(x0, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    out = np.empty((len(inputs) + 1, x.size))
    out[0] = x
    for j, u in enumerate(inputs):
        out[j + 1] = euler_step(out[j], u, T_amb, dt, params)
    return out
