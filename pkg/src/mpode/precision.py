"""Software emulation of narrow binary floating-point formats.

Emulated values live in float64 carriers constrained to the target format's
representable set.  Every primitive is "compute in the carrier, then round
once": for add/sub/mul the carrier result is exact, for div/exp/tanh it is
the correctly rounded float64 result, and the final rounding to the target
format is round-to-nearest, ties to even.  The 53-bit carrier makes this
double rounding harmless for every format here, including emulated float32
(2*24 + 2 = 50 <= 53).

Reductions round after every partial accumulation in a fixed left-to-right
order, so there is no hidden wide accumulator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FloatFormat",
    "FLOAT16",
    "BFLOAT16",
    "FLOAT32",
    "FLOAT64",
    "FORMATS",
    "get_format",
    "quantize",
    "RangeMonitor",
    "low_op",
    "add",
    "sub",
    "mul",
    "div",
    "exp",
    "tanh",
    "absolute",
    "maximum",
    "dot",
]


@dataclass(frozen=True)
class FloatFormat:
    """Bit layout of a binary floating-point format (sign bit implied)."""

    name: str
    exponent_bits: int
    mantissa_bits: int

    def __post_init__(self) -> None:
        if self.exponent_bits < 2 or self.mantissa_bits < 1:
            raise ValueError(f"degenerate format: {self}")

    @property
    def bias(self) -> int:
        return 2 ** (self.exponent_bits - 1) - 1

    @property
    def min_exp(self) -> int:
        """Smallest normal exponent (unbiased)."""
        return 1 - self.bias

    @property
    def unit_roundoff(self) -> float:
        return 2.0 ** -(self.mantissa_bits + 1)

    @property
    def max_finite(self) -> float:
        return (2.0 - 2.0 ** -self.mantissa_bits) * 2.0 ** self.bias

    @property
    def min_normal(self) -> float:
        return 2.0 ** self.min_exp

    @property
    def min_subnormal(self) -> float:
        return 2.0 ** (self.min_exp - self.mantissa_bits)

    @property
    def _ulp_floor(self) -> int:
        """Exponent of the subnormal spacing, the coarsest allowed ulp floor."""
        return self.min_exp - self.mantissa_bits

    def __str__(self) -> str:
        return self.name


FLOAT16 = FloatFormat("float16", 5, 10)
BFLOAT16 = FloatFormat("bfloat16", 8, 7)
FLOAT32 = FloatFormat("float32", 8, 23)
FLOAT64 = FloatFormat("float64", 11, 52)

FORMATS: dict[str, FloatFormat] = {
    f.name: f for f in (FLOAT16, BFLOAT16, FLOAT32, FLOAT64)
}


def get_format(name: str) -> FloatFormat:
    try:
        return FORMATS[name]
    except KeyError:
        raise ValueError(f"unknown format {name!r}, expected one of {sorted(FORMATS)}") from None


class RangeMonitor:
    """Counts quantizations that left the normal range.

    `underflows` counts events where a nonzero value rounded to zero or to a
    subnormal; `overflows` counts finite values that rounded to infinity.
    Power-of-two rescaling of a computation is bit-exact only while a monitor
    attached to it stays clean.
    """

    __slots__ = ("underflows", "overflows")

    def __init__(self) -> None:
        self.underflows = 0
        self.overflows = 0

    @property
    def clean(self) -> bool:
        return self.underflows == 0 and self.overflows == 0

    def observe(self, raw, rounded, fmt: FloatFormat) -> None:
        raw = np.asarray(raw)
        rounded = np.asarray(rounded)
        finite_raw = np.isfinite(raw)
        self.overflows += int(np.count_nonzero(np.isinf(rounded) & finite_raw))
        mag = np.abs(rounded)
        sub = (mag < fmt.min_normal) & ((mag > 0) | ((rounded == 0) & (raw != 0) & finite_raw))
        self.underflows += int(np.count_nonzero(sub))


# Formats with a native numpy dtype round through a hardware/C cast, which
# is IEEE round-to-nearest-even with gradual underflow and overflow to inf,
# i.e. exactly the rounding contract.  Exhaustive tests pin the equivalence.
_NATIVE_DTYPES = {(5, 10): np.float16, (8, 23): np.float32}


def _quantize_scalar(x: float, fmt: FloatFormat) -> float:
    native = _NATIVE_DTYPES.get((fmt.exponent_bits, fmt.mantissa_bits))
    if native is not None and -fmt.max_finite <= x <= fmt.max_finite:
        # In-range casts cannot overflow, so this path never warns.
        return float(native(x))
    if x != x:
        return math.nan
    if x == 0.0 or math.isinf(x):
        return x
    _, e = math.frexp(x)
    shift = max(e - 1 - fmt.mantissa_bits, fmt._ulp_floor)
    y = math.ldexp(round(math.ldexp(x, -shift)), shift)
    if abs(y) > fmt.max_finite:
        return math.copysign(math.inf, x)
    if y == 0.0:
        return math.copysign(0.0, x)
    return y


def _quantize_array(x: np.ndarray, fmt: FloatFormat) -> np.ndarray:
    native = _NATIVE_DTYPES.get((fmt.exponent_bits, fmt.mantissa_bits))
    if native is not None:
        return x.astype(native).astype(np.float64)
    _, e = np.frexp(x)
    shift = np.maximum(e - 1 - fmt.mantissa_bits, fmt._ulp_floor)
    y = np.ldexp(np.rint(np.ldexp(x, -shift)), shift)
    over = np.abs(y) > fmt.max_finite
    if over.any():
        y = np.where(over, np.copysign(np.inf, x), y)
    zero = y == 0.0
    if zero.any():
        y = np.where(zero, np.copysign(0.0, x), y)
    return y


def quantize(x, fmt: FloatFormat, monitor: RangeMonitor | None = None):
    """Round to the nearest value representable in `fmt`, ties to even.

    Scalars map to python floats, everything else to float64 ndarrays whose
    elements are representable in `fmt`.  NaN payloads are not preserved,
    signed zero is.  float64 is a passthrough (the carrier itself); the
    result may then alias the input.
    """
    if fmt.mantissa_bits >= 52:
        if isinstance(x, (float, int)):
            return float(x)
        return np.asarray(x, dtype=np.float64)
    if isinstance(x, (float, int)):
        out = _quantize_scalar(float(x), fmt)
    else:
        out = _quantize_array(np.asarray(x, dtype=np.float64), fmt)
    if monitor is not None:
        monitor.observe(x, out, fmt)
    return out


def add(a, b, fmt: FloatFormat, monitor: RangeMonitor | None = None):
    return quantize(a + b, fmt, monitor)


def sub(a, b, fmt: FloatFormat, monitor: RangeMonitor | None = None):
    return quantize(a - b, fmt, monitor)


def mul(a, b, fmt: FloatFormat, monitor: RangeMonitor | None = None):
    return quantize(a * b, fmt, monitor)


def div(a, b, fmt: FloatFormat, monitor: RangeMonitor | None = None):
    # Route scalars through np.float64 so x/0 yields inf, not ZeroDivisionError.
    with np.errstate(divide="ignore", invalid="ignore"):
        if isinstance(a, (float, int)) and isinstance(b, (float, int)):
            return quantize(float(np.float64(a) / np.float64(b)), fmt, monitor)
        return quantize(a / b, fmt, monitor)


def exp(a, fmt: FloatFormat, monitor: RangeMonitor | None = None):
    # np.exp also for scalars so both call paths share one libm.
    if isinstance(a, (float, int)):
        return quantize(float(np.exp(a)), fmt, monitor)
    return quantize(np.exp(np.asarray(a, dtype=np.float64)), fmt, monitor)


def tanh(a, fmt: FloatFormat, monitor: RangeMonitor | None = None):
    if isinstance(a, (float, int)):
        return quantize(float(np.tanh(a)), fmt, monitor)
    return quantize(np.tanh(np.asarray(a, dtype=np.float64)), fmt, monitor)


def absolute(a, fmt: FloatFormat, monitor: RangeMonitor | None = None):
    return quantize(abs(a) if isinstance(a, (float, int)) else np.abs(a), fmt, monitor)


def maximum(a, b, fmt: FloatFormat, monitor: RangeMonitor | None = None):
    if isinstance(a, (float, int)) and isinstance(b, (float, int)):
        return quantize(float(np.maximum(a, b)), fmt, monitor)
    return quantize(np.maximum(a, b), fmt, monitor)


def dot(a, b, fmt: FloatFormat, monitor: RangeMonitor | None = None):
    """Inner product over the last axis, rounded after every partial sum.

    Products are rounded elementwise first, then accumulated left to right
    with a rounding after each addition: there is no fused multiply-add.
    Leading axes broadcast, so a matrix-vector product is `dot(W, v, fmt)`.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    p = np.atleast_1d(quantize(a * b, fmt, monitor))
    acc = p[..., 0]
    for j in range(1, p.shape[-1]):
        acc = quantize(acc + p[..., j], fmt, monitor)
    return acc


_OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "exp": exp,
    "tanh": tanh,
    "abs": absolute,
    "max": maximum,
    "dot": dot,
}


def low_op(op: str, *args, fmt: FloatFormat, monitor: RangeMonitor | None = None):
    """Apply one correctly rounded primitive in `fmt` by name."""
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}, expected one of {sorted(_OPS)}") from None
    return fn(*args, fmt=fmt, monitor=monitor)
