"""Fixed-step explicit integration with a split-precision state.

The field is evaluated in the low format; the state advances in the high
format (`y += h * dy`, both ops correctly rounded there) and a low-precision
copy of every state is stored.  The stored copies are what the increment
recomputation in the backward pass consumes, so they are the contract: the
high-precision terminal state is exposed separately as a diagnostic.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .dynamics import Params, VelocityField
from .precision import FloatFormat, RangeMonitor, add, dot, mul, quantize, sub

__all__ = [
    "Scheme",
    "TimeGrid",
    "Trajectory",
    "NonFiniteState",
    "increment",
    "forward",
    "StepVjp",
    "StepTape",
    "build_step_tape",
    "format_float",
]


def format_float(v: float) -> str:
    """17 significant digits: enough to round-trip any float64 exactly."""
    return format(float(v), ".17g")


class Scheme(enum.Enum):
    EULER = "euler"
    RK4 = "rk4"

    @property
    def stages(self) -> int:
        return 1 if self is Scheme.EULER else 4

    @classmethod
    def from_name(cls, name: str) -> "Scheme":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown scheme {name!r}, expected euler or rk4") from None


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing node times, starting at t0 >= 0."""

    t: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=np.float64)
        object.__setattr__(self, "t", t)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("grid needs at least two nodes")
        if t[0] < 0.0 or not np.all(np.diff(t) > 0.0):
            raise ValueError("grid must be strictly increasing with t[0] >= 0")

    @property
    def n_steps(self) -> int:
        return self.t.size - 1

    @classmethod
    def uniform(cls, t_final: float, n_steps: int, t_start: float = 0.0) -> "TimeGrid":
        return cls(np.linspace(t_start, t_final, n_steps + 1))


@dataclass
class Trajectory:
    grid: TimeGrid
    states: np.ndarray  # (n_steps + 1, dim) low-precision stored states
    final_hp: np.ndarray  # high-precision accumulator at the last node
    fmt_low: FloatFormat
    fmt_high: FloatFormat

    def to_csv(self, path: str | Path) -> None:
        dim = self.states.shape[1]
        lines = ["i,t," + ",".join(f"y{j}" for j in range(dim))]
        for i, t in enumerate(self.grid.t[: self.states.shape[0]]):
            vals = ",".join(format_float(v) for v in self.states[i])
            lines.append(f"{i},{format_float(t)},{vals}")
        Path(path).write_text("\n".join(lines) + "\n")


class NonFiniteState(RuntimeError):
    """A stored state picked up an infinity or NaN at `step`."""

    def __init__(self, step: int, trajectory: Trajectory):
        super().__init__(f"non-finite state after step {step}")
        self.step = step
        self.trajectory = trajectory


def _combine_rk4(k1, k2, k3, k4, fmt, monitor):
    # Butcher weights live in the computation format, like every other
    # operand of the stage arithmetic, and are applied per stage before
    # accumulating so partial sums stay on the order of |dy| itself.
    # Summing raw stages first peaks near 6|dy| and can overflow a narrow
    # format even when every stage and every state is comfortably in range.
    w6 = quantize(1.0 / 6.0, fmt)
    w3 = quantize(1.0 / 3.0, fmt)
    s = add(mul(w6, k1, fmt, monitor), mul(w3, k2, fmt, monitor), fmt, monitor)
    s = add(s, mul(w3, k3, fmt, monitor), fmt, monitor)
    return add(s, mul(w6, k4, fmt, monitor), fmt, monitor)


def increment(
    scheme: Scheme,
    field: VelocityField,
    y: np.ndarray,
    t: float,
    h: float,
    theta_low: np.ndarray,
    fmt: FloatFormat,
    monitor: RangeMonitor | None = None,
) -> np.ndarray:
    """One increment dy with every primitive rounded in `fmt`.

    t and h arrive in high precision; they are rounded only where they meet
    low-precision values (the h*k products and the field's own use of t).
    """
    if scheme is Scheme.EULER:
        return field.eval(t, y, theta_low, fmt, monitor)
    h2 = 0.5 * h  # exact power-of-two scaling of the high-precision step
    k1 = field.eval(t, y, theta_low, fmt, monitor)
    k2 = field.eval(t + h2, add(y, mul(h2, k1, fmt, monitor), fmt, monitor), theta_low, fmt, monitor)
    k3 = field.eval(t + h2, add(y, mul(h2, k2, fmt, monitor), fmt, monitor), theta_low, fmt, monitor)
    k4 = field.eval(t + h, add(y, mul(h, k3, fmt, monitor), fmt, monitor), theta_low, fmt, monitor)
    return _combine_rk4(k1, k2, k3, k4, fmt, monitor)


def forward(
    scheme: Scheme,
    field: VelocityField,
    x: np.ndarray,
    grid: TimeGrid,
    params: Params | None,
    fmt_low: FloatFormat,
    fmt_high: FloatFormat,
    monitor: RangeMonitor | None = None,
) -> Trajectory:
    """Integrate from x over the grid; raises NonFiniteState on blow-up.

    The exception carries the partial trajectory for inspection.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != field.dim_state:
        raise ValueError(f"initial state has size {x.size}, field wants {field.dim_state}")
    theta_low = params.low(fmt_low) if params is not None else np.zeros(0)
    t = grid.t
    n = grid.n_steps
    y = quantize(x, fmt_high)
    states = np.empty((n + 1, x.size))
    states[0] = quantize(y, fmt_low)
    # Overflow to inf is the documented rounding behaviour and blow-up is
    # detected explicitly below, so numpy's FP warnings are noise here.
    with np.errstate(invalid="ignore", over="ignore"):
        for i in range(n):
            h = sub(float(t[i + 1]), float(t[i]), fmt_high)
            dy = increment(scheme, field, states[i], float(t[i]), h, theta_low, fmt_low, monitor)
            dy_h = quantize(dy, fmt_high)
            y = add(y, mul(h, dy_h, fmt_high), fmt_high)
            states[i + 1] = quantize(y, fmt_low)
            if not np.all(np.isfinite(states[i + 1])):
                partial = Trajectory(
                    TimeGrid(t[: i + 2]), states[: i + 2].copy(), np.asarray(y), fmt_low, fmt_high
                )
                raise NonFiniteState(i, partial)
    return Trajectory(grid, states, np.asarray(y), fmt_low, fmt_high)


class StepVjp(NamedTuple):
    """Cotangents of one increment map: covector times d(increment)/d(input)."""

    da: np.ndarray
    dt: float
    dh: float
    dtheta: np.ndarray

    def finite(self) -> bool:
        return (
            bool(np.all(np.isfinite(self.da)))
            and np.isfinite(self.dt)
            and np.isfinite(self.dh)
            and bool(np.all(np.isfinite(self.dtheta)))
        )


@dataclass
class StepTape:
    """Recorded stage values of one step, reusable across cotangents.

    `pullback` applies the reverse sweep without re-evaluating the field, so
    a rescale loop can retry with a halved cotangent at no field-eval cost.
    """

    increment: np.ndarray
    pullback: Callable[..., StepVjp]


def _sum_rounded(parts, fmt, monitor):
    acc = parts[0]
    for p in parts[1:]:
        acc = add(acc, p, fmt, monitor)
    return acc


def build_step_tape(
    scheme: Scheme,
    field: VelocityField,
    y: np.ndarray,
    t: float,
    h: float,
    theta_low: np.ndarray,
    fmt: FloatFormat,
    monitor: RangeMonitor | None = None,
) -> StepTape:
    """Evaluate one step's stages once and capture their pullbacks.

    The recomputed increment is bit-identical to `increment(...)` because the
    rounded op sequence is the same.
    """
    if scheme is Scheme.EULER:
        f, pull = field.linearize(t, y, theta_low, fmt, monitor)

        def pullback(cotangent, monitor=None) -> StepVjp:
            g = pull(cotangent, monitor)
            return StepVjp(g.da, g.dt, 0.0, g.dtheta)

        return StepTape(f, pullback)

    h2 = 0.5 * h
    k1, p1 = field.linearize(t, y, theta_low, fmt, monitor)
    u2 = add(y, mul(h2, k1, fmt, monitor), fmt, monitor)
    k2, p2 = field.linearize(t + h2, u2, theta_low, fmt, monitor)
    u3 = add(y, mul(h2, k2, fmt, monitor), fmt, monitor)
    k3, p3 = field.linearize(t + h2, u3, theta_low, fmt, monitor)
    u4 = add(y, mul(h, k3, fmt, monitor), fmt, monitor)
    k4, p4 = field.linearize(t + h, u4, theta_low, fmt, monitor)
    dy = _combine_rk4(k1, k2, k3, k4, fmt, monitor)

    w6 = quantize(1.0 / 6.0, fmt)
    w3 = quantize(1.0 / 3.0, fmt)

    def pullback(cotangent, monitor=None) -> StepVjp:
        c = np.asarray(cotangent, dtype=np.float64)
        c6 = mul(w6, c, fmt, monitor)
        c3 = mul(w3, c, fmt, monitor)
        g4 = p4(c6, monitor)
        g3 = p3(add(c3, mul(h, g4.da, fmt, monitor), fmt, monitor), monitor)
        g2 = p2(add(c3, mul(h2, g3.da, fmt, monitor), fmt, monitor), monitor)
        g1 = p1(add(c6, mul(h2, g2.da, fmt, monitor), fmt, monitor), monitor)
        da = _sum_rounded([g1.da, g2.da, g3.da, g4.da], fmt, monitor)
        dt = _sum_rounded([g1.dt, g2.dt, g3.dt, g4.dt], fmt, monitor)
        dh = _sum_rounded(
            [
                mul(0.5, g2.dt, fmt, monitor),
                mul(0.5, dot(k1, g2.da, fmt, monitor), fmt, monitor),
                mul(0.5, g3.dt, fmt, monitor),
                mul(0.5, dot(k2, g3.da, fmt, monitor), fmt, monitor),
                g4.dt,
                float(dot(k3, g4.da, fmt, monitor)),
            ],
            fmt,
            monitor,
        )
        if field.dim_params:
            dtheta = _sum_rounded([g1.dtheta, g2.dtheta, g3.dtheta, g4.dtheta], fmt, monitor)
        else:
            dtheta = g1.dtheta
        return StepVjp(da, float(dt), float(dh), dtheta)

    return StepTape(dy, pullback)
