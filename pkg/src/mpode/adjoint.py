"""Discrete adjoint of the mixed-precision forward pass.

The backward pass walks the stored low-precision states in reverse,
recomputes each step's increment in low precision, and pulls the adjoint
back through it.  The adjoint, parameter, and time-gradient accumulators
live in high precision; only the covector handed to the reverse sweep is
quantized, after multiplication by a per-step power-of-two scale factor.

Scale management under the dynamic policy:
  * start at 2**floor(log2(1 / (u_low * ||a||_inf)));
  * on a non-finite reverse sweep, halve and retry (no field re-evaluation,
    the step tape is reused);
  * after a step that needed no rescue, double for the next step while
    ||a||_inf stays at most 1/(2*u_low), checked after the update.
Every contribution is divided by the scale used, so the scale never changes
the represented gradient, only which region of the format it flows through.
Power-of-two scaling is exact while no quantization leaves the normal range,
which is what makes the whole scheme bit-reproducible.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Callable

import numpy as np

from .dynamics import Params, VelocityField
from .integrate import Scheme, StepVjp, Trajectory, build_step_tape, format_float
from .precision import FloatFormat, RangeMonitor, add, dot, mul, quantize, sub

__all__ = [
    "RunningCost",
    "Objective",
    "trapezoid_weights",
    "PolicyKind",
    "ScalingPolicy",
    "Gradients",
    "BackwardTrace",
    "ExhaustedRescale",
    "NonFiniteAccumulator",
    "init_scale",
    "scheme_vjp",
    "backward",
    "objective_value",
    "SgdResult",
    "sgd_step",
]


@dataclass
class RunningCost:
    """Integrand R(t, y, theta) with the partials the backward pass needs."""

    value: Callable[[float, np.ndarray, np.ndarray], float]
    grad_y: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    grad_theta: Callable[[float, np.ndarray, np.ndarray], np.ndarray] | None = None


@dataclass
class Objective:
    """L = sum_i w_i R(t_i, y_i, theta) + C(y_N) on the discrete trajectory.

    `weights` defaults to trapezoid quadrature on the grid.  The terminal
    cost is evaluated on the stored low-precision y_N by default; set
    `terminal_state="accumulator"` to use the high-precision terminal state
    instead.
    """

    terminal: Callable[[np.ndarray], float]
    terminal_grad: Callable[[np.ndarray], np.ndarray]
    running: RunningCost | None = None
    weights: np.ndarray | None = None
    terminal_state: str = "stored"

    def __post_init__(self) -> None:
        if self.terminal_state not in ("stored", "accumulator"):
            raise ValueError("terminal_state must be 'stored' or 'accumulator'")

    def quad_weights(self, grid) -> np.ndarray:
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.size != grid.t.size:
                raise ValueError("quadrature weights must have one entry per grid node")
            return w
        return trapezoid_weights(grid)


def trapezoid_weights(grid) -> np.ndarray:
    h = np.diff(grid.t)
    w = np.zeros(grid.t.size)
    w[0] = 0.5 * h[0]
    w[-1] = 0.5 * h[-1]
    w[1:-1] = 0.5 * (h[:-1] + h[1:])
    return w


class PolicyKind(enum.Enum):
    UNSCALED = "none"
    UNSCALED_SAFE = "safe"
    DYNAMIC = "dynamic"


@dataclass(frozen=True)
class ScalingPolicy:
    kind: PolicyKind
    k_max: int = 24
    s_floor: float = 2.0**-24

    def __post_init__(self) -> None:
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        f, _ = math.frexp(self.s_floor)
        if self.s_floor <= 0.0 or f != 0.5:
            raise ValueError("s_floor must be a positive power of two")

    @classmethod
    def unscaled(cls) -> "ScalingPolicy":
        return cls(PolicyKind.UNSCALED)

    @classmethod
    def unscaled_safe(cls) -> "ScalingPolicy":
        return cls(PolicyKind.UNSCALED_SAFE)

    @classmethod
    def dynamic(cls, k_max: int = 24, s_floor: float = 2.0**-24) -> "ScalingPolicy":
        return cls(PolicyKind.DYNAMIC, k_max, s_floor)

    @classmethod
    def from_name(cls, name: str) -> "ScalingPolicy":
        return cls(PolicyKind(name.lower()))


@dataclass
class Gradients:
    """d_x: gradient wrt the initial state; d_t: per-node time gradient."""

    d_x: np.ndarray
    d_theta: np.ndarray
    d_t: np.ndarray

    def to_csv(self, path: str | Path) -> None:
        lines = ["component,value"]
        for name, vec in (("d_x", self.d_x), ("d_theta", self.d_theta), ("d_t", self.d_t)):
            for j, v in enumerate(vec):
                lines.append(f"{name}[{j}],{format_float(v)}")
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class BackwardTrace:
    """Per-step instrumentation filled in by `backward` when passed in."""

    scales: list[float] = dataclass_field(default_factory=list)
    rescale_counts: list[int] = dataclass_field(default_factory=list)
    doublings: int = 0

    @property
    def total_rescales(self) -> int:
        return sum(self.rescale_counts)


class ExhaustedRescale(RuntimeError):
    """Rescue halving at `step` ran out of attempts or hit the scale floor."""

    def __init__(self, step: int):
        super().__init__(f"rescale attempts exhausted at step {step}")
        self.step = step


class NonFiniteAccumulator(RuntimeError):
    """A high-precision accumulator picked up an infinity or NaN at `step`."""

    def __init__(self, step: int):
        super().__init__(f"non-finite adjoint accumulator at step {step}")
        self.step = step


def init_scale(a: np.ndarray, fmt: FloatFormat) -> float:
    """Largest power of two with scale * ||a||_inf <= 1 / u_low.

    Returns 1.0 for a zero adjoint.  The result always satisfies
    scale * ||a||_inf in (1/(2u), 1/u].
    """
    a = np.asarray(a, dtype=np.float64)
    norm = float(np.max(np.abs(a))) if a.size else 0.0
    if norm == 0.0:
        return 1.0
    if not math.isfinite(norm):
        raise ValueError("adjoint seed is not finite")
    f, e = math.frexp(fmt.unit_roundoff * norm)
    return math.ldexp(1.0, (1 - e) if f == 0.5 else -e)


def scheme_vjp(
    scheme: Scheme,
    field: VelocityField,
    y: np.ndarray,
    t: float,
    h: float,
    theta_low: np.ndarray,
    a_scaled: np.ndarray,
    fmt: FloatFormat,
    monitor: RangeMonitor | None = None,
) -> StepVjp:
    """Cotangents of one increment map, every primitive rounded in `fmt`."""
    tape = build_step_tape(scheme, field, y, t, h, theta_low, fmt, monitor)
    return tape.pullback(a_scaled, monitor)


def _hp(x, fmt_high: FloatFormat):
    return quantize(x, fmt_high)


def backward(
    scheme: Scheme,
    field: VelocityField,
    traj: Trajectory,
    params: Params | None,
    objective: Objective,
    policy: ScalingPolicy,
    fmt_low: FloatFormat,
    fmt_high: FloatFormat,
    monitor: RangeMonitor | None = None,
    trace: BackwardTrace | None = None,
    scale_multiplier: float = 1.0,
) -> Gradients:
    """Reverse sweep over a stored trajectory.

    Exactly n_steps * scheme.stages field evaluations are performed no
    matter how many rescale attempts happen: retries reuse the step tape.
    `scale_multiplier` (a power of two) shifts the whole scale sequence and
    exists for bit-exactness instrumentation.
    """
    # Rescue probes push non-finite values through the arithmetic on
    # purpose and blow-ups are detected explicitly, so numpy's FP
    # warnings are noise for the whole sweep.
    with np.errstate(invalid="ignore", over="ignore"):
        return _backward(
            scheme, field, traj, params, objective, policy, fmt_low, fmt_high,
            monitor, trace, scale_multiplier,
        )


def _backward(
    scheme: Scheme,
    field: VelocityField,
    traj: Trajectory,
    params: Params | None,
    objective: Objective,
    policy: ScalingPolicy,
    fmt_low: FloatFormat,
    fmt_high: FloatFormat,
    monitor: RangeMonitor | None,
    trace: BackwardTrace | None,
    scale_multiplier: float,
) -> Gradients:
    dynamic = policy.kind is PolicyKind.DYNAMIC
    safe = policy.kind is PolicyKind.UNSCALED_SAFE
    theta_low = params.low(fmt_low) if params is not None else np.zeros(0)
    t = traj.grid.t
    n = traj.grid.n_steps
    states = traj.states
    w = objective.quad_weights(traj.grid)

    y_term = traj.final_hp if objective.terminal_state == "accumulator" else states[n]
    a = _hp(np.asarray(objective.terminal_grad(y_term), dtype=np.float64).reshape(-1), fmt_high)
    g = np.zeros(field.dim_params)
    tgrad = np.zeros(n + 1)
    running = objective.running
    if running is not None:
        ry = _hp(np.asarray(running.grad_y(float(t[n]), states[n], theta_low)), fmt_high)
        a = add(a, mul(w[n], ry, fmt_high), fmt_high)
        if running.grad_theta is not None:
            rth = _hp(np.asarray(running.grad_theta(float(t[n]), states[n], theta_low)), fmt_high)
            g = mul(w[n], rth, fmt_high)

    if dynamic and not np.all(np.isfinite(a)):
        raise NonFiniteAccumulator(n)

    f, _ = math.frexp(scale_multiplier)
    if scale_multiplier <= 0.0 or f != 0.5:
        raise ValueError("scale_multiplier must be a positive power of two")
    scale = init_scale(a, fmt_low) * scale_multiplier if dynamic else 1.0

    for i in range(n - 1, -1, -1):
        h = sub(float(t[i + 1]), float(t[i]), fmt_high)
        tape = build_step_tape(scheme, field, states[i], float(t[i]), h, theta_low, fmt_low, monitor)
        rescued = False
        if dynamic:
            attempts = 0
            while True:
                attempts += 1
                if attempts > policy.k_max:
                    raise ExhaustedRescale(i)
                sa = quantize(scale * a, fmt_low, monitor)
                v = tape.pullback(sa, monitor)
                if v.finite():
                    break
                rescued = True
                scale = 0.5 * scale
                if scale < policy.s_floor:
                    raise ExhaustedRescale(i)
            if trace is not None:
                trace.scales.append(scale)
                trace.rescale_counts.append(attempts - 1)
        else:
            sa = quantize(a, fmt_low, monitor)
            v = tape.pullback(sa, monitor)
            if safe and not v.finite():
                return Gradients(a, np.full(field.dim_params, np.inf), tgrad)

        # High-precision accumulation; Phi^T a uses the pre-update adjoint
        # and the recomputed increment, as a rounded high-precision dot.
        # h/scale and dt-dh stay in the float64 carrier (both exact there);
        # rounding them into fmt_high first can hit subnormals or overflow
        # once the scale has grown large, so each contribution is formed
        # exactly and rounded once on the way into the accumulator.
        hs = float(h) / scale
        phi_a = float(dot(tape.increment, a, fmt_high))
        u = mul(hs, float(v.dt) - float(v.dh), fmt_high)
        tgrad[i] = sub(add(tgrad[i], u, fmt_high), phi_a, fmt_high)
        tgrad[i + 1] = add(add(tgrad[i + 1], mul(hs, float(v.dh), fmt_high), fmt_high), phi_a, fmt_high)
        if running is not None:
            ry = _hp(np.asarray(running.grad_y(float(t[i]), states[i], theta_low)), fmt_high)
            a = add(a, mul(w[i], ry, fmt_high), fmt_high)
        a = add(a, mul(hs, v.da, fmt_high), fmt_high)
        if field.dim_params:
            g = add(g, mul(hs, v.dtheta, fmt_high), fmt_high)
        if running is not None and running.grad_theta is not None:
            rth = _hp(np.asarray(running.grad_theta(float(t[i]), states[i], theta_low)), fmt_high)
            g = add(g, mul(w[i], rth, fmt_high), fmt_high)

        if dynamic:
            if not (
                np.all(np.isfinite(a))
                and np.all(np.isfinite(g))
                and np.isfinite(tgrad[i])
                and np.isfinite(tgrad[i + 1])
            ):
                raise NonFiniteAccumulator(i)
            # Doubling check runs on the freshly updated adjoint.
            if not rescued and float(np.max(np.abs(a), initial=0.0)) <= 1.0 / (2.0 * fmt_low.unit_roundoff):
                scale = 2.0 * scale
                if trace is not None:
                    trace.doublings += 1

    if trace is not None:
        trace.scales.reverse()
        trace.rescale_counts.reverse()
    return Gradients(np.asarray(a, dtype=np.float64).reshape(-1), np.asarray(g), tgrad)


def objective_value(objective: Objective, traj: Trajectory, theta: np.ndarray) -> float:
    """Discrete objective on a stored trajectory, in plain float64."""
    y_term = traj.final_hp if objective.terminal_state == "accumulator" else traj.states[-1]
    val = float(objective.terminal(y_term))
    if objective.running is not None:
        w = objective.quad_weights(traj.grid)
        for i, ti in enumerate(traj.grid.t):
            val += float(w[i]) * float(objective.running.value(float(ti), traj.states[i], theta))
    return val


@dataclass
class SgdResult:
    params: Params
    loss_scale: float
    accepted: bool
    streak: int


def sgd_step(
    params: Params,
    grad_fn: Callable[[Params, float, FloatFormat], np.ndarray],
    lr: float,
    loss_scale: float,
    weight_decay: float,
    fmt_low: FloatFormat,
    streak: int = 0,
    growth_window: int = 2000,
) -> SgdResult:
    """One loss-scaled SGD update on the master weights.

    grad_fn(params, loss_scale, fmt_low) returns the gradient of the scaled
    loss computed with quantized weights.  A non-finite gradient rejects the
    step and halves the scale; `growth_window` consecutive accepted steps
    double it and reset the streak.
    """
    grad = np.asarray(grad_fn(params, loss_scale, fmt_low), dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        return SgdResult(params, 0.5 * loss_scale, False, 0)
    update = grad / loss_scale + weight_decay * params.master
    new = Params(params.master - lr * update)
    streak += 1
    if streak >= growth_window:
        return SgdResult(new, 2.0 * loss_scale, True, 0)
    return SgdResult(new, loss_scale, True, streak)
