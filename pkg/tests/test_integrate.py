"""Forward integrator tests: bit-level references and blow-up reporting."""

import math

import numpy as np
import pytest

from mpode.dynamics import LinearField, Params, PolyDecayField
from mpode.integrate import (
    NonFiniteState,
    Scheme,
    TimeGrid,
    format_float,
    forward,
    increment,
)
from mpode.precision import FLOAT16, FLOAT32, FLOAT64, quantize


class ZeroField(LinearField):
    def __init__(self, dim=1):
        super().__init__(np.zeros((dim, dim)))


class TestFormatFloat:
    def test_round_trips_float64(self):
        rng = np.random.default_rng(3)
        vals = [0.0, -0.0, 1.0, math.pi, 65504.0 / 180.0, 2.0**-1074, -1e308]
        vals += list(np.ldexp(rng.standard_normal(200), rng.integers(-300, 300, 200)))
        for v in vals:
            assert float(format_float(v)) == v

    def test_plain_small_integers(self):
        assert format_float(1.0) == "1"
        assert format_float(0.5) == "0.5"


class TestTimeGrid:
    def test_uniform(self):
        g = TimeGrid.uniform(2.0, 4)
        assert g.n_steps == 4
        assert np.array_equal(g.t, [0.0, 0.5, 1.0, 1.5, 2.0])

    def test_rejects_decreasing(self):
        with pytest.raises(ValueError):
            TimeGrid(np.array([0.0, 1.0, 0.5]))

    def test_rejects_negative_start(self):
        with pytest.raises(ValueError):
            TimeGrid(np.array([-0.5, 1.0]))

    def test_rejects_single_node(self):
        with pytest.raises(ValueError):
            TimeGrid(np.array([0.0]))


class TestScheme:
    def test_names_and_stages(self):
        assert Scheme.from_name("euler") is Scheme.EULER
        assert Scheme.from_name("RK4") is Scheme.RK4
        assert Scheme.EULER.stages == 1
        assert Scheme.RK4.stages == 4
        with pytest.raises(ValueError):
            Scheme.from_name("rk45")


class TestIncrement:
    def test_zero_field(self):
        dy = increment(Scheme.RK4, ZeroField(), np.array([3.0]), 0.0, 0.1, np.zeros(0), FLOAT16)
        assert dy[0] == 0.0

    def test_euler_is_field_eval(self):
        field = PolyDecayField()
        theta = quantize(np.array([0.4, -1.1, 0.9]), FLOAT16)
        y = np.array([0.7])
        dy = increment(Scheme.EULER, field, y, 0.5, 0.1, theta, FLOAT16)
        assert dy[0] == field.eval(0.5, y, theta, FLOAT16)[0]

    def test_rk4_single_step_bitwise(self):
        # exact float64 mirror of the stage and combination op order
        h, y0 = 0.1, 1.0
        h2 = 0.5 * h
        k1 = -y0
        k2 = -(y0 + h2 * k1)
        k3 = -(y0 + h2 * k2)
        k4 = -(y0 + h * k3)
        w6, w3 = 1.0 / 6.0, 1.0 / 3.0
        s = w6 * k1 + w3 * k2
        s = s + w3 * k3
        dy_ref = s + w6 * k4
        field = LinearField([[-1.0]])
        dy = increment(Scheme.RK4, field, np.array([y0]), 0.0, h, np.zeros(0), FLOAT64)
        assert dy[0] == dy_ref
        # one step is exp(-h) to fourth order
        assert abs((y0 + h * dy[0]) - math.exp(-h)) < 1e-6

    def test_rk4_eval_count(self):
        field = LinearField([[-1.0]])
        increment(Scheme.RK4, field, np.array([1.0]), 0.0, 0.1, np.zeros(0), FLOAT64)
        assert field.eval_count == 4


class TestForward:
    def test_euler_float64_bitwise(self):
        field = LinearField([[-1.0]])
        grid = TimeGrid.uniform(1.0, 10)
        traj = forward(Scheme.EULER, field, np.array([1.0]), grid, None, FLOAT64, FLOAT64)
        y = 1.0
        for i in range(10):
            h = float(grid.t[i + 1]) - float(grid.t[i])
            y = y + h * (-y)
        assert traj.states[-1][0] == y
        assert traj.final_hp[0] == y

    def test_non_uniform_grid(self):
        field = LinearField([[-1.0]])
        grid = TimeGrid(np.array([0.0, 0.1, 0.4, 1.0]))
        traj = forward(Scheme.EULER, field, np.array([1.0]), grid, None, FLOAT64, FLOAT64)
        y = 1.0
        for i in range(3):
            h = float(grid.t[i + 1]) - float(grid.t[i])
            y = y + h * (-y)
        assert traj.states[-1][0] == y

    def test_stored_states_live_on_low_grid(self):
        field = PolyDecayField()
        params = Params([0.4, -1.1, 0.9])
        traj = forward(
            Scheme.RK4, field, np.array([1.0]), TimeGrid.uniform(2.0, 32), params, FLOAT16, FLOAT32
        )
        assert np.array_equal(quantize(traj.states, FLOAT16), traj.states)
        # the high-precision accumulator rounds onto the stored terminal state
        assert quantize(traj.final_hp, FLOAT16)[0] == traj.states[-1][0]
        # accumulator is genuinely wider: it differs from its rounded copy
        assert traj.final_hp[0] != traj.states[-1][0]

    def test_eval_budget(self):
        field = LinearField([[-1.0]])
        forward(Scheme.RK4, field, np.array([1.0]), TimeGrid.uniform(1.0, 10), None, FLOAT64, FLOAT64)
        assert field.eval_count == 40

    def test_non_finite_state_carries_partial_trajectory(self):
        field = LinearField([[30.0]])
        with pytest.raises(NonFiniteState) as info:
            forward(
                Scheme.EULER, field, np.array([10000.0]), TimeGrid.uniform(1.0, 4), None,
                FLOAT16, FLOAT32,
            )
        exc = info.value
        assert exc.step == 0
        assert exc.trajectory.states.shape == (2, 1)
        assert math.isinf(exc.trajectory.states[1][0])

    def test_initial_state_size_checked(self):
        with pytest.raises(ValueError):
            forward(
                Scheme.EULER, LinearField([[-1.0]]), np.array([1.0, 2.0]),
                TimeGrid.uniform(1.0, 2), None, FLOAT64, FLOAT64,
            )


class TestTrajectoryCsv:
    def test_byte_deterministic(self, tmp_path):
        field = PolyDecayField()
        params = Params([0.4, -1.1, 0.9])
        paths = []
        for name in ("a.csv", "b.csv"):
            traj = forward(
                Scheme.RK4, field, np.array([1.0]), TimeGrid.uniform(2.0, 8), params,
                FLOAT16, FLOAT32,
            )
            p = tmp_path / name
            traj.to_csv(p)
            paths.append(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_header_and_shape(self, tmp_path):
        field = LinearField([[0.0, 1.0], [-1.0, 0.0]])
        traj = forward(
            Scheme.EULER, field, np.array([1.0, 0.0]), TimeGrid.uniform(1.0, 3), None,
            FLOAT64, FLOAT64,
        )
        p = tmp_path / "t.csv"
        traj.to_csv(p)
        lines = p.read_text().splitlines()
        assert lines[0] == "i,t,y0,y1"
        assert len(lines) == 5
        assert lines[1].startswith("0,0,1,0")
