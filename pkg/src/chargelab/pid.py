"""Clipped PID law for the cell core temperature."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class PidState:
    """Gains, setpoint (K), output limits (W) and the running error sum.

    The integral is the plain sum of per-call errors, so ``KI`` carries the
    call period implicitly.
    """

    T_core_ref: float
    KP: float = 0.5
    KI: float = 0.01
    KD: float = 150.0
    P_lo: float = -8.0
    P_hi: float = 8.0
    integral: float = 0.0

    def __post_init__(self):
        if min(self.KP, self.KI, self.KD) < 0:
            raise ValueError("PID gains must be non-negative")
        if self.P_lo > self.P_hi:
            raise ValueError("P_lo exceeds P_hi")


def pid_step(pid: PidState, T_core: float, dTcore_est: float) -> tuple[float, PidState]:
    """Return the clipped heating/cooling power and the advanced controller state.

    Anti-windup: the error is not accumulated when the unclipped output is
    saturated and the error would push it further out.
    """
    e = pid.T_core_ref - T_core
    integral = pid.integral + e
    raw = pid.KP * e + pid.KI * integral - pid.KD * dTcore_est
    out = float(np.clip(raw, pid.P_lo, pid.P_hi))
    if (raw > pid.P_hi and e > 0) or (raw < pid.P_lo and e < 0):
        integral = pid.integral
    return out, replace(pid, integral=integral)
