"""Velocity fields with hand-written vector-Jacobian products.

Every field evaluates through the rounded primitives in `precision`, so the
op sequence is part of the contract: two mathematically equal evaluation
orders are different functions in low precision.  The reverse sweeps mirror
the forward op order exactly and round every primitive in the same format.

`linearize` returns the field value together with a pullback closure over
the recorded activations; calling the pullback repeatedly with different
cotangents does not re-evaluate the field.  That is what makes per-step
adjoint rescaling cheap.
"""
from __future__ import annotations

import abc
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .precision import FloatFormat, RangeMonitor, add, dot, mul, quantize, sub, tanh

__all__ = [
    "Params",
    "FieldVjp",
    "VelocityField",
    "PolyDecayField",
    "LinearField",
    "MlpField",
    "save_weights",
    "load_weights",
]


@dataclass
class Params:
    """Master copy of field parameters, kept in the wide carrier."""

    master: np.ndarray

    def __post_init__(self) -> None:
        self.master = np.asarray(self.master, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.master)):
            raise ValueError("master parameters must be finite")

    def low(self, fmt: FloatFormat, monitor: RangeMonitor | None = None) -> np.ndarray:
        """Quantized view used by low-precision evaluation."""
        return quantize(self.master, fmt, monitor)

    def __len__(self) -> int:
        return self.master.size


class FieldVjp(NamedTuple):
    da: np.ndarray
    dt: float
    dtheta: np.ndarray


Pullback = Callable[..., FieldVjp]


class VelocityField(abc.ABC):
    """f(t, y, theta) with a recorded-activation reverse sweep.

    `eval_count` counts field evaluations (eval and linearize both count,
    pullback calls do not); it exists so callers can assert evaluation
    budgets, and is the one piece of mutable state on a field.
    """

    dim_state: int
    dim_params: int

    def __init__(self) -> None:
        self.eval_count = 0

    def eval(self, t, y, theta, fmt, monitor=None) -> np.ndarray:
        self.eval_count += 1
        return self._eval(t, y, theta, fmt, monitor)

    def linearize(self, t, y, theta, fmt, monitor=None) -> tuple[np.ndarray, Pullback]:
        self.eval_count += 1
        return self._linearize(t, y, theta, fmt, monitor)

    def vjp(self, t, y, theta, cotangent, fmt, monitor=None) -> FieldVjp:
        """One-shot reverse sweep; recomputes activations from the inputs."""
        _, pull = self.linearize(t, y, theta, fmt, monitor)
        return pull(cotangent, monitor)

    @abc.abstractmethod
    def _eval(self, t, y, theta, fmt, monitor) -> np.ndarray: ...

    @abc.abstractmethod
    def _linearize(self, t, y, theta, fmt, monitor) -> tuple[np.ndarray, Pullback]: ...


class PolyDecayField(VelocityField):
    """Scalar decay y' = -(th1*t^2 + th2*t + th3) * y.

    With steep coefficients the trajectory spans nearly the whole float16
    range, which is what makes it a good range stress test.
    """

    dim_state = 1
    dim_params = 3

    def _pieces(self, t, y, theta, fmt, monitor):
        th1, th2, th3 = (float(v) for v in theta)
        y0 = float(y[0])
        tq = quantize(float(t), fmt, monitor)
        t2 = mul(tq, tq, fmt, monitor)
        p1 = mul(th1, t2, fmt, monitor)
        p2 = mul(th2, tq, fmt, monitor)
        s = add(p1, p2, fmt, monitor)
        lam = add(s, th3, fmt, monitor)
        m = mul(lam, y0, fmt, monitor)
        return th1, th2, tq, t2, lam, y0, -m

    def _eval(self, t, y, theta, fmt, monitor):
        return np.array([self._pieces(t, y, theta, fmt, monitor)[-1]])

    def _linearize(self, t, y, theta, fmt, monitor):
        th1, th2, tq, t2, lam, y0, f = self._pieces(t, y, theta, fmt, monitor)

        def pull(cotangent, monitor=None) -> FieldVjp:
            cm = -float(cotangent[0])
            c_lam = mul(cm, y0, fmt, monitor)
            c_y = mul(cm, lam, fmt, monitor)
            dth1 = mul(c_lam, t2, fmt, monitor)
            dth2 = mul(c_lam, tq, fmt, monitor)
            c_t2 = mul(c_lam, th1, fmt, monitor)
            u = mul(c_t2, tq, fmt, monitor)
            u = add(u, u, fmt, monitor)
            dt = add(mul(c_lam, th2, fmt, monitor), u, fmt, monitor)
            return FieldVjp(np.array([c_y]), dt, np.array([dth1, dth2, c_lam]))

        return np.array([f]), pull


class LinearField(VelocityField):
    """y' = A y with a fixed matrix; carries no trainable parameters."""

    dim_params = 0

    def __init__(self, a_matrix) -> None:
        super().__init__()
        self.a_matrix = np.asarray(a_matrix, dtype=np.float64)
        if self.a_matrix.ndim != 2 or self.a_matrix.shape[0] != self.a_matrix.shape[1]:
            raise ValueError("a_matrix must be square")
        self.dim_state = self.a_matrix.shape[0]

    def _eval(self, t, y, theta, fmt, monitor):
        aq = quantize(self.a_matrix, fmt, monitor)
        return np.atleast_1d(dot(aq, y, fmt, monitor))

    def _linearize(self, t, y, theta, fmt, monitor):
        aq = quantize(self.a_matrix, fmt, monitor)
        f = np.atleast_1d(dot(aq, y, fmt, monitor))

        def pull(cotangent, monitor=None) -> FieldVjp:
            da = np.atleast_1d(dot(aq.T, cotangent, fmt, monitor))
            return FieldVjp(da, 0.0, np.zeros(0))

        return f, pull


class MlpField(VelocityField):
    """Small fully connected network; time is an extra input coordinate.

    Layer l maps in_l -> widths[l+1] with in_0 = widths[0] + 1 (the state
    plus t) and tanh after every layer except the last.  Parameters pack as
    weight matrix (row-major) then bias, layers in order.
    """

    def __init__(self, widths: Sequence[int] = (2, 32, 32, 2)) -> None:
        super().__init__()
        self.widths = tuple(int(w) for w in widths)
        if len(self.widths) < 2 or self.widths[-1] != self.widths[0]:
            raise ValueError("widths must map the state dimension back to itself")
        self.dim_state = self.widths[0]
        self._shapes: list[tuple[int, int]] = []
        prev = self.widths[0] + 1
        for w in self.widths[1:]:
            self._shapes.append((w, prev))
            prev = w
        self.dim_params = sum(o * i + o for o, i in self._shapes)

    def init_params(self, seed: int) -> Params:
        rng = np.random.default_rng(seed)
        chunks = []
        for out_d, in_d in self._shapes:
            chunks.append(rng.standard_normal((out_d, in_d)).ravel() / np.sqrt(in_d))
            chunks.append(0.1 * rng.standard_normal(out_d))
        return Params(np.concatenate(chunks))

    def _layers(self, theta):
        out = []
        pos = 0
        for out_d, in_d in self._shapes:
            w = theta[pos : pos + out_d * in_d].reshape(out_d, in_d)
            pos += out_d * in_d
            b = theta[pos : pos + out_d]
            pos += out_d
            out.append((w, b))
        return out

    def _eval(self, t, y, theta, fmt, monitor):
        v = np.concatenate([y, [quantize(float(t), fmt, monitor)]])
        layers = self._layers(theta)
        last = len(layers) - 1
        for l, (w, b) in enumerate(layers):
            z = add(dot(w, v, fmt, monitor), b, fmt, monitor)
            v = tanh(z, fmt, monitor) if l < last else z
        return v

    def _linearize(self, t, y, theta, fmt, monitor):
        v = np.concatenate([y, [quantize(float(t), fmt, monitor)]])
        layers = self._layers(theta)
        last = len(layers) - 1
        inputs = []  # per-layer input vector
        acts = []  # tanh outputs per hidden layer
        for l, (w, b) in enumerate(layers):
            inputs.append(v)
            z = add(dot(w, v, fmt, monitor), b, fmt, monitor)
            if l < last:
                v = tanh(z, fmt, monitor)
                acts.append(v)
            else:
                v = z
        f = v

        def pull(cotangent, monitor=None) -> FieldVjp:
            c = np.asarray(cotangent, dtype=np.float64)
            dtheta = np.empty(self.dim_params)
            pos = self.dim_params
            for l in range(last, -1, -1):
                w, _ = layers[l]
                if l < last:
                    a = acts[l]
                    gate = sub(1.0, mul(a, a, fmt, monitor), fmt, monitor)
                    c = mul(c, gate, fmt, monitor)
                out_d, in_d = self._shapes[l]
                pos -= out_d
                dtheta[pos : pos + out_d] = c
                dw = mul(c[:, None], inputs[l][None, :], fmt, monitor)
                pos -= out_d * in_d
                dtheta[pos : pos + out_d * in_d] = dw.ravel()
                c = np.atleast_1d(dot(w.T, c, fmt, monitor))
            return FieldVjp(c[: self.dim_state], float(c[self.dim_state]), dtheta)

        return f, pull


def save_weights(path: str | Path, field: MlpField, params: Params) -> None:
    """Write the flat parameter vector as little-endian float64 plus a JSON sidecar."""
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(params.master, dtype="<f8").tobytes())
    sidecar = {
        "widths": list(field.widths),
        "dtype": "<f8",
        "count": int(params.master.size),
        "layout": "per layer: weight matrix row-major, then bias; layers input to output",
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_weights(path: str | Path) -> tuple[MlpField, Params]:
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    field = MlpField(sidecar["widths"])
    flat = np.frombuffer(path.read_bytes(), dtype="<f8").astype(np.float64)
    if flat.size != sidecar["count"] or flat.size != field.dim_params:
        raise ValueError("weight file does not match its sidecar")
    return field, Params(flat)
