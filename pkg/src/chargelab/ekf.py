"""Extended Kalman filter over the 5-state (current-integrator) cell model."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import model
from .model import DEFAULT_PARAMS, BatteryParams

DEFAULT_Q = np.diag([1.73e-8, 1.73e-8, 2.44e-8, 1.54e-9, 0.0])
DEFAULT_R = np.diag([1e-3, 1e-5, 1e-12])
DEFAULT_P0 = np.diag([0.5, 0.5, 0.5, 0.01, 0.01])


class EstimationError(RuntimeError):
    """Innovation covariance could not be inverted reliably."""


class Measurement(NamedTuple):
    T_surf: float
    V: float
    I: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


@dataclass(frozen=True)
class EstimatorState:
    xhat: np.ndarray
    P: np.ndarray
    Q: np.ndarray = DEFAULT_Q
    R: np.ndarray = DEFAULT_R
    delta_s: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "xhat", np.asarray(self.xhat, dtype=float).reshape(5))
        for name, size in (("P", 5), ("Q", 5), ("R", 3)):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (size, size):
                raise ValueError(f"{name} must be {size}x{size}")
            if not np.allclose(m, m.T, rtol=0, atol=1e-12 * max(1.0, np.abs(m).max())):
                raise ValueError(f"{name} must be symmetric")
            object.__setattr__(self, name, m)
        if not self.delta_s > 0:
            raise ValueError("delta_s must be positive")

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.P), 0.0, None))


def jacobian_f(xhat, u, T_amb: float, delta_s: float,
               params: BatteryParams = DEFAULT_PARAMS) -> np.ndarray:
    """Jacobian of the Euler map ``x + delta_s * f(x, u)`` with respect to ``x``."""
    A, _ = model.derivative_augmented_jacobians(np.asarray(xhat, float), np.asarray(u, float),
                                                T_amb, params)
    return np.eye(5) + delta_s * A


def jacobian_h(xhat, params: BatteryParams = DEFAULT_PARAMS) -> np.ndarray:
    return model.output_jacobian(np.asarray(xhat, float), params)


def estimate(est: EstimatorState, u_prev, y, T_amb: float,
             params: BatteryParams = DEFAULT_PARAMS, cond_limit: float = 1e14,
             output_at_prior: bool = True) -> EstimatorState:
    """One predict/update cycle.

    ``F`` is linearised at the previous posterior.  ``H`` is linearised at
    the prediction (standard EKF) unless ``output_at_prior`` is false, in
    which case the previous posterior is used for both.  The update uses the
    simple ``(I - K H) P`` form followed by explicit symmetrisation.
    """
    x, P = est.xhat, est.P
    u_prev = np.asarray(u_prev, dtype=float)
    F = jacobian_f(x, u_prev, T_amb, est.delta_s, params)
    x_pred = model.euler_step(x, u_prev, T_amb, est.delta_s, params)
    P_pred = F @ P @ F.T + est.Q
    H = jacobian_h(x_pred if output_at_prior else x, params)
    innov = np.asarray(y, dtype=float) - model.output(x_pred, None, params)
    S = H @ P_pred @ H.T + est.R
    S = 0.5 * (S + S.T)
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > cond_limit:
        raise EstimationError(f"innovation covariance is ill-conditioned (cond={np.linalg.cond(S):.3g})")
    K = np.linalg.solve(S, H @ P_pred).T
    x_new = x_pred + K @ innov
    P_new = (np.eye(5) - K @ H) @ P_pred
    P_new = 0.5 * (P_new + P_new.T)
    return replace(est, xhat=x_new, P=P_new)


def joseph_update(P_pred, H, R, K) -> np.ndarray:
    """Joseph-form covariance update, kept as a reference for the simple form."""
    A = np.eye(P_pred.shape[0]) - K @ H
    return A @ P_pred @ A.T + K @ R @ K.T


def soc_estimate(est: EstimatorState, params: BatteryParams = DEFAULT_PARAMS) -> float:
    return float(model.soc(est.xhat[0], est.xhat[1], params))
