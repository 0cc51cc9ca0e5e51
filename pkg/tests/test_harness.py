"""Experiment-layer tests: oracles, runners, config files, CSV, CLI."""

import math

import numpy as np
import pytest
from click.testing import CliRunner

from mpode.adjoint import Objective
from mpode.cli import main
from mpode.dynamics import Params, PolyDecayField
from mpode.integrate import Scheme, TimeGrid
from mpode.oracles import analytic_gradient, analytic_solution, fd_gradient
from mpode.runners import (
    ErrorRow,
    ExperimentConfig,
    build_field,
    decay_benchmark,
    parse_config,
    run_sgd_demo,
    run_solve,
    run_sweep,
    run_table,
    write_error_rows,
)

BENCH_THETA = np.array([8.0, -11.0, 2.0**-16])
BENCH_X = 65504.0 / 180.0
BENCH_T = 2.65


def terminal_objective():
    return Objective(
        terminal=lambda y: 0.5 * float(np.dot(y, y)),
        terminal_grad=lambda y: np.asarray(y, dtype=np.float64),
    )


class TestAnalyticOracles:
    def test_solution_value(self):
        y = analytic_solution(BENCH_T, BENCH_X, BENCH_THETA)
        assert np.isclose(y, 0.00606605098390623, rtol=1e-12)

    def test_solution_at_zero_time_is_x(self):
        assert analytic_solution(0.0, BENCH_X, BENCH_THETA) == BENCH_X

    def test_gradient_values(self):
        d_x, d_theta = analytic_gradient(BENCH_T, BENCH_X, BENCH_THETA)
        assert np.isclose(d_x, 1.0111528177031866e-07, rtol=1e-12)
        want = [-0.00022825929910394875, -0.00012920337685129175, -9.751198252927679e-05]
        assert np.allclose(d_theta, want, rtol=1e-12)

    def test_gradient_at_zero_state(self):
        d_x, d_theta = analytic_gradient(BENCH_T, 0.0, BENCH_THETA)
        assert d_x == 0.0 and not d_theta.any()

    def test_discrete_float64_gradient_matches_analytic(self):
        # the gap between the N=400 discrete gradient and the continuous one
        # is the RK4 discretization floor (about 7e-5 relative here); format
        # errors in the table sit on top of exactly this floor
        field, params, x = decay_benchmark()[:3]
        grid = TimeGrid.uniform(BENCH_T, 400)
        d_x_fd, d_theta_fd = fd_gradient(
            Scheme.RK4, field, x, grid, params, terminal_objective()
        )
        d_x, d_theta = analytic_gradient(BENCH_T, float(x[0]), params.master)
        assert np.isclose(d_x_fd[0], d_x, rtol=2e-4)
        assert np.allclose(d_theta_fd, d_theta, rtol=2e-4)


class TestFdGradient:
    def test_zero_field_gives_identity_gradient(self):
        from mpode.dynamics import LinearField

        field = LinearField([[0.0]])
        x = np.array([1.75])
        d_x_fd, _ = fd_gradient(
            Scheme.RK4, field, x, TimeGrid.uniform(1.0, 6), None, terminal_objective()
        )
        assert np.isclose(d_x_fd[0], x[0], rtol=1e-9)

    def test_linear_euler_matches_closed_form(self):
        from mpode.dynamics import LinearField

        a = -0.5
        field = LinearField([[a]])
        x = np.array([1.2])
        grid = TimeGrid.uniform(1.0, 10)
        d_x_fd, _ = fd_gradient(Scheme.EULER, field, x, grid, None, terminal_objective())
        h = 0.1
        y_n = x[0] * (1.0 + h * a) ** 10
        want = y_n * (1.0 + h * a) ** 10
        assert np.isclose(d_x_fd[0], want, rtol=1e-7)

    def test_mlp_rk4_matches_backward(self):
        from mpode.adjoint import ScalingPolicy, backward
        from mpode.dynamics import MlpField
        from mpode.integrate import forward
        from mpode.precision import FLOAT64

        field = MlpField((2, 4, 4, 2))
        params = field.init_params(6)
        x = np.array([0.4, -0.3])
        grid = TimeGrid.uniform(1.0, 8)
        d_x_fd, d_theta_fd = fd_gradient(
            Scheme.RK4, field, x, grid, params, terminal_objective()
        )
        traj = forward(Scheme.RK4, field, x, grid, params, FLOAT64, FLOAT64)
        g = backward(
            Scheme.RK4, field, traj, params, terminal_objective(),
            ScalingPolicy.unscaled(), FLOAT64, FLOAT64,
        )
        assert np.allclose(g.d_x, d_x_fd, rtol=1e-6, atol=1e-10)
        assert np.allclose(g.d_theta, d_theta_fd, rtol=1e-6, atol=1e-8)

    def test_fd_gradient_validates_eps(self):
        field, params, x = decay_benchmark()[:3]
        with pytest.raises(ValueError):
            fd_gradient(
                Scheme.RK4, field, x, TimeGrid.uniform(1.0, 4), params,
                terminal_objective(), eps=0.0,
            )


class TestParseConfig:
    def test_json_values_with_string_fallback(self):
        text = """
        # a comment
        scheme = "euler"
        n = [64, 128]
        lr = 0.05
        fmt = float16
        out = results.csv
        """
        out = parse_config(text)
        assert out == {
            "scheme": "euler", "n": [64, 128], "lr": 0.05,
            "fmt": "float16", "out": "results.csv",
        }

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            parse_config("stepss = 3")

    def test_missing_equals_rejected(self):
        with pytest.raises(ValueError, match="expected"):
            parse_config("scheme euler")

    def test_from_file(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text('field = "polydecay"\nn = 32\nfmt = "bfloat16"\n')
        config = ExperimentConfig.from_file(p)
        assert config.field == "polydecay" and config.n == 32 and config.fmt == "bfloat16"
        assert config.scheme == "rk4"  # defaults survive

    def test_n_list_normalizes(self):
        assert ExperimentConfig(n=64).n_list() == [64]
        assert ExperimentConfig(n=[64, 128]).n_list() == [64, 128]


class TestBuildField:
    def test_default_polydecay_is_benchmark(self):
        field, params, x = build_field(ExperimentConfig())
        assert isinstance(field, PolyDecayField)
        assert np.array_equal(params.master, BENCH_THETA)
        assert x[0] == BENCH_X

    def test_mlp_with_seeded_init(self):
        config = ExperimentConfig(field="mlp", widths=[2, 4, 4, 2], seed=3)
        field, params, x = build_field(config)
        assert field.dim_params == len(params)
        field2, params2, x2 = build_field(config)
        assert np.array_equal(params.master, params2.master)
        assert np.array_equal(x, x2)

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError):
            build_field(ExperimentConfig(field="pendulum"))


@pytest.fixture(scope="module")
def rows():
    return run_table(ExperimentConfig(n=400, scheme="rk4"))


class TestRunTable:

    def test_row_order(self, rows):
        assert [(r.fmt, r.policy) for r in rows] == [
            ("float32", "none"), ("float32", "dynamic"),
            ("float16", "none"), ("float16", "dynamic"),
            ("bfloat16", "none"), ("bfloat16", "dynamic"),
        ]
        assert all(r.status == "ok" and r.n == 400 for r in rows)

    def test_float16_rows_are_pinned(self, rows):
        # bit-exact emulation makes every cell reproducible to the digit
        assert rows[2].to_csv_line() == (
            "float16,none,400,0.0017751712804568681,0.14599550375616402,"
            "0.46079059620430518,0.59681036210488614,0.77258470403324064,ok"
        )
        assert rows[3].to_csv_line() == (
            "float16,dynamic,400,0.0017751712804568681,0.0047589477644606349,"
            "0.0042267626489253148,0.0042588637480265191,0.0045641263990448613,ok"
        )

    def test_float32_policies_agree_bitwise(self, rows):
        assert rows[0].to_csv_line().split(",")[3:] == rows[1].to_csv_line().split(",")[3:]
        assert rows[0].re_y < 2e-4 and rows[0].re_dy0 < 5e-4

    def test_bfloat16_policies_agree_bitwise(self, rows):
        assert rows[4].to_csv_line().split(",")[3:] == rows[5].to_csv_line().split(",")[3:]

    def test_csv_byte_deterministic(self, tmp_path, rows):
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_error_rows(rows, p1)
        write_error_rows(run_table(ExperimentConfig(n=400, scheme="rk4")), p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert p1.read_text().splitlines()[0] == ErrorRow.HEADER


class TestRunSweep:
    def test_float64_self_comparison_is_exact(self):
        config = ExperimentConfig(
            field="polydecay", theta=[0.4, -1.1, 0.9], x0=[1.0], t_final=2.0,
            n=[16, 32], scheme="rk4", fmt="float64", policy="none",
        )
        for row in run_sweep(config):
            assert row.re_y <= 1e-12 and row.re_dy0 <= 1e-12
            assert max(row.re_dtheta1, row.re_dtheta2, row.re_dtheta3) <= 1e-12

    def test_mlp_normwise_theta_columns(self):
        config = ExperimentConfig(
            field="mlp", widths=[2, 4, 4, 2], t_final=1.0, seed=0,
            n=[8], scheme="euler", fmt="float16", policy="dynamic",
        )
        row = run_sweep(config)[0]
        assert row.re_dtheta1 == row.re_dtheta2 == row.re_dtheta3
        assert 0.0 < row.re_dtheta1 < 0.2

    def test_forward_blowup_becomes_status_row(self):
        config = ExperimentConfig(
            field="linear", a_matrix=[[30.0]], x0=[10000.0], t_final=1.0,
            n=[4], scheme="euler", fmt="float16", policy="none",
        )
        row = run_sweep(config)[0]
        assert row.status == "non-finite-state-at-0"
        assert math.isinf(row.re_y) and math.isinf(row.re_dtheta1)


class TestRunSgdDemo:
    def test_deterministic_and_well_formed(self, tmp_path):
        out = tmp_path / "sgd.csv"
        r1 = run_sgd_demo(ExperimentConfig(fmt="float16", seed=3, steps=4, out=out))
        r2 = run_sgd_demo(ExperimentConfig(fmt="float16", seed=3, steps=4))
        assert r1.rows == r2.rows and r1.final_loss == r2.final_loss
        lines = out.read_text().splitlines()
        assert lines[0] == "iteration,loss,loss_scale,accepted"
        assert len(lines) == 5
        for line in lines[1:]:
            cells = line.split(",")
            assert cells[3] in ("0", "1")
            assert float(cells[2]) > 0

    def test_float64_ignores_loss_scaling_mechanics(self):
        r = run_sgd_demo(ExperimentConfig(fmt="float64", seed=3, steps=4))
        assert all(row[3] for row in r.rows)  # nothing to reject in float64


class TestRunSolve:
    def test_writes_both_csvs(self, tmp_path):
        config = ExperimentConfig(
            field="polydecay", theta=[0.4, -1.1, 0.9], x0=[1.0], t_final=2.0,
            n=16, scheme="rk4", fmt="float16", policy="dynamic",
            out=str(tmp_path / "run"),
        )
        traj_path, grad_path = run_solve(config)
        t_lines = traj_path.read_text().splitlines()
        g_lines = grad_path.read_text().splitlines()
        assert t_lines[0] == "i,t,y0" and len(t_lines) == 18
        assert g_lines[0] == "component,value"
        assert g_lines[1].startswith("d_x[0],")
        assert len(g_lines) == 1 + 1 + 3 + 17  # header, d_x, d_theta, d_t

    def test_no_out_returns_none(self):
        assert run_solve(ExperimentConfig(n=8, fmt="float64")) is None


class TestCli:
    def test_table(self, tmp_path):
        out = tmp_path / "table.csv"
        result = CliRunner().invoke(main, ["table", "--out", str(out), "--steps", "50"])
        assert result.exit_code == 0, result.output
        lines = out.read_text().splitlines()
        assert lines[0] == ErrorRow.HEADER and len(lines) == 7

    def test_sweep(self, tmp_path):
        out = tmp_path / "sweep.csv"
        result = CliRunner().invoke(
            main,
            ["sweep", "--n", "16,32", "--scheme", "euler", "--fmt", "bfloat16",
             "--policy", "none", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        assert len(out.read_text().splitlines()) == 3

    def test_sgd_demo(self, tmp_path):
        out = tmp_path / "sgd.csv"
        result = CliRunner().invoke(
            main, ["sgd-demo", "--steps", "3", "--fmt", "float16", "--seed", "1",
                   "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        assert len(out.read_text().splitlines()) == 4
        assert "final loss" in result.output

    def test_solve(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            'field = "polydecay"\ntheta = [0.4, -1.1, 0.9]\nx0 = [1.0]\n'
            f't_final = 2.0\nn = 8\nout = {tmp_path / "sol"}\n'
        )
        result = CliRunner().invoke(main, ["solve", "--config", str(cfg)])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "sol_trajectory.csv").exists()
        assert (tmp_path / "sol_gradients.csv").exists()

    def test_rejects_bad_choice(self, tmp_path):
        result = CliRunner().invoke(
            main, ["sweep", "--n", "16", "--scheme", "rk45", "--out", str(tmp_path / "x.csv")]
        )
        assert result.exit_code != 0
