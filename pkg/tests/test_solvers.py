import numpy as np
import pytest

from flexcep.canonical import (
    GE,
    INF,
    ModelBuilder,
    ModelError,
    objective_value,
    relax_integrality,
)
from flexcep.solvers import (
    BackendError,
    BackendUnavailableError,
    SolverConfig,
    dual_objective,
    expand_quadratic,
    solve,
    solve_lp_with_duals,
)

BACKENDS = ["inproc", "subprocess"]


def _min_x_geq(bound, integer=False):
    mb = ModelBuilder()
    x = mb.add_var("x", lb=0.0, ub=100.0, integer=integer, obj=1.0)
    mb.add_row("floor", [(x, 1.0)], GE, bound)
    return mb.freeze()


@pytest.mark.parametrize("backend", BACKENDS)
class TestBasicSolves:
    def test_min_x_continuous(self, backend):
        res = solve(_min_x_geq(3.0), SolverConfig(backend=backend))
        assert res.status == "optimal"
        assert res.objective == pytest.approx(3.0, abs=1e-8)

    def test_min_x_integer_rounds_up(self, backend):
        res = solve(_min_x_geq(2.5, integer=True), SolverConfig(backend=backend))
        assert res.status == "optimal"
        assert res.objective == pytest.approx(3.0, abs=1e-8)

    def test_infeasible_toy(self, backend):
        mb = ModelBuilder()
        x = mb.add_var("x", lb=0.0, ub=0.0, obj=1.0)
        mb.add_row("lo", [(x, 1.0)], GE, 1.0)
        res = solve(mb.freeze(), SolverConfig(backend=backend))
        assert res.status == "infeasible"

    def test_backends_agree_on_g1(self, backend, g1_ef, g1_ef_solution):
        model, _ = g1_ef
        res = solve(model, SolverConfig(backend=backend))
        assert res.objective == pytest.approx(g1_ef_solution.objective, rel=1e-5)


def test_backends_agree_across_fixture_suite():
    from flexcep.oracle import generate
    from flexcep.build import build_extensive_form
    for gen in ("G2", "G3"):
        model, _ = build_extensive_form(generate(gen, 4))
        a = solve(model, SolverConfig(backend="inproc"))
        b = solve(model, SolverConfig(backend="subprocess"))
        assert a.status == b.status == "optimal"
        assert b.objective == pytest.approx(a.objective, rel=1e-5)


class TestDuals:
    def test_simple_dual_is_one(self):
        res = solve_lp_with_duals(_min_x_geq(3.0))
        assert res.duals[0] == pytest.approx(1.0, abs=1e-7)

    def test_degenerate_duplicate_rows_verify(self):
        mb = ModelBuilder()
        x = mb.add_var("x", lb=0.0, ub=100.0, obj=1.0)
        mb.add_row("a", [(x, 1.0)], GE, 3.0)
        mb.add_row("b", [(x, 1.0)], GE, 3.0)
        res = solve_lp_with_duals(mb.freeze(), verify=True)
        assert res.status == "optimal"
        assert res.duals.sum() == pytest.approx(1.0, abs=1e-6)

    def test_strong_duality_on_g1_relaxation(self, g1_ef):
        model, _ = g1_ef
        lp = relax_integrality(model)
        res = solve_lp_with_duals(lp)
        assert dual_objective(lp, res) == pytest.approx(res.objective, rel=1e-6)

    def test_integer_columns_rejected(self, g1_ef):
        model, _ = g1_ef
        with pytest.raises(ModelError, match="relax"):
            solve_lp_with_duals(model)

    def test_subprocess_backend_returns_duals(self):
        res = solve_lp_with_duals(_min_x_geq(3.0), SolverConfig(backend="subprocess"))
        assert res.duals[0] == pytest.approx(1.0, abs=1e-7)


class TestQuadratic:
    def test_expand_requires_finite_box(self):
        mb = ModelBuilder()
        x = mb.add_var("x", lb=0.0, ub=INF, obj=1.0)
        mb.add_quad(x, 1.0, 0.0)
        with pytest.raises(ModelError, match="unbounded"):
            expand_quadratic(mb.freeze())

    def test_prox_solve_lands_near_anchor(self):
        mb = ModelBuilder()
        x = mb.add_var("x", lb=0.0, ub=100.0, obj=1.0)
        mb.add_quad(x, 50.0, anchor=40.0)
        res = solve(mb.freeze(), SolverConfig(pwl_segments=16))
        assert res.status == "optimal"
        # true minimizer of x + 50 (x-40)^2 is 39.99
        assert res.x[0] == pytest.approx(39.99, abs=0.2)
        assert res.objective == pytest.approx(objective_value(mb.freeze(), res.x), rel=1e-9)

    def test_integer_quadratic_exact_on_lattice(self):
        mb = ModelBuilder()
        x = mb.add_var("x", lb=0.0, ub=3.0, integer=True, obj=0.0)
        mb.add_quad(x, 10.0, anchor=1.8)
        res = solve(mb.freeze())
        assert res.x[0] == pytest.approx(2.0, abs=1e-9)

    def test_reported_objective_matches_original_model(self):
        mb = ModelBuilder()
        x = mb.add_var("x", lb=0.0, ub=10.0, obj=-1.0)
        mb.add_quad(x, 3.0, anchor=2.0)
        m = mb.freeze()
        res = solve(m)
        assert res.objective == pytest.approx(objective_value(m, res.x), rel=1e-12)


class TestSubprocessProtocol:
    def test_missing_binary_is_unavailable(self, g1_ef):
        model, _ = g1_ef
        cfg = SolverConfig(backend="subprocess", solver_bin="/nonexistent/solver")
        with pytest.raises(BackendUnavailableError):
            solve(model, cfg)

    def test_env_var_overrides_binary(self, monkeypatch):
        from flexcep.solvers import SOLVER_BIN_ENV
        monkeypatch.setenv(SOLVER_BIN_ENV, "/nonexistent/from-env")
        with pytest.raises(BackendUnavailableError, match="from-env"):
            solve(_min_x_geq(1.0), SolverConfig(backend="subprocess"))

    def test_crashing_binary_reports_diagnostics(self, g1_ef):
        model, _ = g1_ef
        cfg = SolverConfig(backend="subprocess", solver_bin="/bin/false")
        with pytest.raises(BackendError, match="exit"):
            solve(model, cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(time_limit_s=0.0)
        with pytest.raises(ValueError):
            SolverConfig(mip_gap=1.0)
