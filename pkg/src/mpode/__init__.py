"""Mixed-precision explicit ODE solvers with a dynamically scaled adjoint.

The forward pass integrates with low-precision field evaluations and a
high-precision state accumulator; the backward pass recomputes increments
step by step and keeps the adjoint in range with a per-step power-of-two
scale factor.  All narrow arithmetic is software-emulated and bit-exact.
"""
from .adjoint import (
    BackwardTrace,
    ExhaustedRescale,
    Gradients,
    NonFiniteAccumulator,
    Objective,
    PolicyKind,
    RunningCost,
    ScalingPolicy,
    SgdResult,
    backward,
    init_scale,
    objective_value,
    scheme_vjp,
    sgd_step,
    trapezoid_weights,
)
from .dynamics import (
    FieldVjp,
    LinearField,
    MlpField,
    Params,
    PolyDecayField,
    VelocityField,
    load_weights,
    save_weights,
)
from .integrate import (
    NonFiniteState,
    Scheme,
    StepTape,
    StepVjp,
    TimeGrid,
    Trajectory,
    build_step_tape,
    format_float,
    forward,
    increment,
)
from .oracles import analytic_gradient, analytic_solution, fd_gradient
from .precision import (
    BFLOAT16,
    FLOAT16,
    FLOAT32,
    FLOAT64,
    FORMATS,
    FloatFormat,
    RangeMonitor,
    get_format,
    low_op,
    quantize,
)
from .runners import (
    ErrorRow,
    ExperimentConfig,
    decay_benchmark,
    parse_config,
    run_sgd_demo,
    run_solve,
    run_sweep,
    run_table,
    write_error_rows,
)

__all__ = [
    "BFLOAT16",
    "BackwardTrace",
    "ErrorRow",
    "ExhaustedRescale",
    "ExperimentConfig",
    "FLOAT16",
    "FLOAT32",
    "FLOAT64",
    "FORMATS",
    "FieldVjp",
    "FloatFormat",
    "Gradients",
    "LinearField",
    "MlpField",
    "NonFiniteAccumulator",
    "NonFiniteState",
    "Objective",
    "Params",
    "PolicyKind",
    "PolyDecayField",
    "RangeMonitor",
    "RunningCost",
    "ScalingPolicy",
    "Scheme",
    "SgdResult",
    "StepTape",
    "StepVjp",
    "TimeGrid",
    "Trajectory",
    "VelocityField",
    "analytic_gradient",
    "analytic_solution",
    "backward",
    "build_step_tape",
    "decay_benchmark",
    "fd_gradient",
    "format_float",
    "forward",
    "get_format",
    "increment",
    "init_scale",
    "load_weights",
    "low_op",
    "objective_value",
    "parse_config",
    "quantize",
    "run_sgd_demo",
    "run_solve",
    "run_sweep",
    "run_table",
    "save_weights",
    "scheme_vjp",
    "sgd_step",
    "trapezoid_weights",
    "write_error_rows",
]

__version__ = "0.1.0"
