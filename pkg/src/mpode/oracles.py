"""Reference values for the solver and its gradients.

Three independent sources of truth: the closed-form solution of the
polynomial-decay benchmark, its hand-derived loss gradients, and central
finite differences of the discrete objective in float64.
"""

from __future__ import annotations

import math

import numpy as np

from .adjoint import Objective, objective_value
from .dynamics import Params, VelocityField
from .integrate import Scheme, TimeGrid, forward
from .precision import FLOAT64

__all__ = ["analytic_solution", "analytic_gradient", "fd_gradient"]


def _log_decay(t: float, theta) -> float:
    t = float(t)
    return float(theta[0]) / 3.0 * t**3 + float(theta[1]) / 2.0 * t**2 + float(theta[2]) * t


def analytic_solution(t: float, x: float, theta) -> float:
    """Exact solution x*exp(-(th1/3 t^3 + th2/2 t^2 + th3 t)) of the decay field."""
    return float(x) * math.exp(-_log_decay(t, theta))


def analytic_gradient(t_final: float, x: float, theta) -> tuple[float, np.ndarray]:
    """Gradients of L = 1/2 y(T)^2 through the exact solution.

    Returns (dL/dx, dL/dtheta). dL/dx is formed as x*exp(-2*...) so that
    x = 0 yields 0 rather than 0/0.
    """
    t_final = float(t_final)
    y = analytic_solution(t_final, x, theta)
    d_x = float(x) * math.exp(-2.0 * _log_decay(t_final, theta))
    d_theta = np.array(
        [
            -(y**2) * t_final**3 / 3.0,
            -(y**2) * t_final**2 / 2.0,
            -(y**2) * t_final,
        ]
    )
    return d_x, d_theta


def fd_gradient(
    scheme: Scheme,
    field: VelocityField,
    x: np.ndarray,
    grid: TimeGrid,
    params: Params | None,
    objective: Objective,
    eps: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray]:
    """Central finite differences of the float64 discrete objective.

    Differentiates the same scheme on the same grid, so the result is the
    discrete gradient that backward() computes, not the continuous one.
    Returns (d_x, d_theta).
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    theta = params.master if params is not None else np.zeros(0)

    def value(x_in, theta_in):
        p = Params(theta_in) if theta_in.size else None
        traj = forward(scheme, field, x_in, grid, p, FLOAT64, FLOAT64)
        return objective_value(objective, traj, theta_in)

    d_x = np.zeros(x.size)
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += eps
        xm[j] -= eps
        d_x[j] = (value(xp, theta) - value(xm, theta)) / (2.0 * eps)
    d_theta = np.zeros(theta.size)
    for j in range(theta.size):
        tp = theta.copy()
        tm = theta.copy()
        tp[j] += eps
        tm[j] -= eps
        d_theta[j] = (value(x, tp) - value(x, tm)) / (2.0 * eps)
    return d_x, d_theta
