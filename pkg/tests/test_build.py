import dataclasses

import numpy as np
import pytest

from flexcep.build import (
    LR,
    PHA,
    BuildError,
    EF_SLICE,
    InvalidInstanceError,
    SubproblemSpec,
    build_extensive_form,
    build_scenario_subproblem,
    first_stage_info,
)
from flexcep.canonical import (
    ModelBuilder,
    fix_variables,
    objective_value,
)
from flexcep.core import (
    Bus,
    GenTech,
    INFLEXIBLE,
    PlanningInstance,
    Scenario,
    enumerate_expectation_constraints,
)
from flexcep.oracle import generate, g1_variant
from flexcep.report import extract_first_stage
from flexcep.solvers import solve

from invariants import check_solution_invariants, check_expectation_rows


def expected_column_count(inst):
    B, G = len(inst.buses), len(inst.gen_techs)
    S, D = len(inst.storage_techs), len(inst.load_techs)
    L = len(inst.branches)
    Lc = len(inst.candidate_branches())
    T, W = inst.num_periods, len(inst.scenarios)
    sum_k = sum(len(d.tiers) for d in inst.load_techs)
    per_period = B * G + 3 * B * S + B * sum_k + 2 * B
    return Lc + B * G + B * S + B * D + W * T * (per_period + L)


def expected_ef_row_count(inst):
    B, G = len(inst.buses), len(inst.gen_techs)
    S = len(inst.storage_techs)
    Le = len(inst.existing_branches())
    Lc = len(inst.candidate_branches())
    T, W = inst.num_periods, len(inst.scenarios)
    sum_k = sum(len(d.tiers) for d in inst.load_techs)
    per_scen = T * (B * G + 4 * B * S + Le + 4 * Lc + B * sum_k + B)
    tier_rows = sum(len(d.tiers) for b in inst.buses for d in inst.load_techs
                    if b.build_limit_load.get(d.id, 0.0) > 0)
    mandates = sum(1 for d in inst.load_techs if d.mandate is not None)
    return W * per_scen + tier_rows + mandates + len(inst.expectation_policies)


def _one_bus_trivial():
    return PlanningInstance(
        name="trivial",
        buses=(Bus(id="B1", build_limit_gen={"solar": 10.0}),),
        gen_techs=(GenTech(id="solar", integrality="continuous",
                           fixed_cost=1000.0, variable_cost=0.0),),
        storage_techs=(), load_techs=(), branches=(),
        scenarios=(Scenario(id="s1", probability=1.0, demand=np.zeros((1, 2)),
                            availability=np.ones((1, 1, 2))),),
        period_length_h=6.0, shed_cost=1000.0)


class TestExtensiveForm:
    def test_trivial_columns_and_zero_objective(self):
        inst = _one_bus_trivial()
        model, index = build_extensive_form(inst)
        kinds = sorted({c[0] for c in index.coords})
        assert kinds == ["pG", "psh", "theta", "xG"]
        assert len(index.columns_of_kind("pG")) == 2
        assert len(index.columns_of_kind("psh")) == 2
        assert len(index.columns_of_kind("theta")) == 2
        res = solve(model)
        assert res.status == "optimal"
        assert res.objective == pytest.approx(0.0, abs=1e-9)
        assert np.allclose(res.x[index.columns_of_kind("xG")], 0.0)

    @pytest.mark.parametrize("gen,seed", [("G1", 1), ("G2", 2), ("G3", 3)])
    def test_counts_match_closed_form(self, gen, seed):
        inst = generate(gen, seed)
        model, index = build_extensive_form(inst)
        assert model.num_vars == expected_column_count(inst) == len(index)
        assert model.num_rows == expected_ef_row_count(inst)

    def test_invalid_instance_rejected(self):
        inst = _one_bus_trivial()
        bad = dataclasses.replace(inst, shed_cost=-1.0)
        with pytest.raises(InvalidInstanceError):
            build_extensive_form(bad)

    def test_solution_invariants_hold(self, g1, g1_ef, g1_ef_solution):
        model, index = g1_ef
        check_solution_invariants(g1, index, g1_ef_solution.x)
        check_expectation_rows(g1, index, g1_ef_solution.x)

    def test_inflexible_built_loads_run_flat_out(self, solver_cfg):
        inst = g1_variant(1, tiers=INFLEXIBLE)
        model, index = build_extensive_form(inst)
        res = solve(model, solver_cfg)
        assert res.status == "optimal"
        x_first = extract_first_stage(index, res.x)
        built = {(c[1], c[2]): v for c, v in x_first.items()
                 if c[0] == "xD" and v > 0.5}
        assert built, "fixture must build at least one load site"
        d = inst.load_techs[0]
        for (b, _), units in built.items():
            for scen in inst.scenarios:
                for t in range(inst.num_periods):
                    served = res.x[index.column(("pDK", b, "dac", 1, t, scen.id))]
                    assert served == pytest.approx(units * d.unit_size_mw, rel=1e-6)

    def test_flexibility_relaxation_never_costs_more(self, solver_cfg):
        # pointwise-weaker phi on the same breakpoints relaxes the model
        strict = g1_variant(4)
        weaker_tiers = dataclasses.replace(
            strict.load_techs[0].tiers,
            phi=tuple(p * 0.5 for p in strict.load_techs[0].tiers.phi))
        weaker = dataclasses.replace(
            strict, load_techs=(dataclasses.replace(strict.load_techs[0],
                                                    tiers=weaker_tiers),))
        obj_strict = solve(build_extensive_form(strict)[0], solver_cfg).objective
        obj_weaker = solve(build_extensive_form(weaker)[0], solver_cfg).objective
        assert obj_weaker <= obj_strict + 1e-6


class TestSubproblems:
    def test_unknown_scenario_rejected(self, g1):
        with pytest.raises(BuildError, match="scenario"):
            build_scenario_subproblem(g1, SubproblemSpec(scenario="nope"))

    def test_unknown_handle_rejected(self, g1):
        with pytest.raises(BuildError, match="handle"):
            build_scenario_subproblem(
                g1, SubproblemSpec(scenario="s1", lam={"bogus": 1.0}))

    def test_negative_multiplier_rejected(self):
        with pytest.raises(BuildError, match=">= 0"):
            SubproblemSpec(scenario="s1", lam={"h": -1.0})

    def test_pha_needs_full_rho_and_anchor(self, g1):
        with pytest.raises(BuildError, match="rho"):
            build_scenario_subproblem(
                g1, SubproblemSpec(scenario="s1", mode=PHA, rho={}))

    def test_sigma_columns_follow_handles(self, g1):
        model, index = build_scenario_subproblem(g1, SubproblemSpec(scenario="s1"))
        handles = enumerate_expectation_constraints(g1)
        sig_cols = index.columns_of_kind("sigma")
        assert len(sig_cols) == len(handles) == 7
        for h in handles:
            assert ("sigma", h.handle, "s1") in index

    def test_ef_slice_has_no_sigma(self, g1):
        model, index = build_scenario_subproblem(
            g1, SubproblemSpec(scenario="s1", mode=EF_SLICE))
        assert index.columns_of_kind("sigma") == []

    def test_zero_multiplier_sum_matches_ef_without_expectations(
            self, g1, g1_ef, g1_ef_solution, solver_cfg):
        # drop the expectation rows from the EF, solve, then force its first
        # stage into each lambda=0 subproblem: probability-weighted optima
        # must reproduce the stripped objective
        model, index = g1_ef
        keep = [i for i, name in enumerate(model.row_names)
                if not (name.startswith("rel[") or name.startswith("pol["))]
        mb = ModelBuilder(name="stripped")
        for i in range(model.num_vars):
            mb.add_var(model.var_names[i], lb=float(model.var_lb[i]),
                       ub=float(model.var_ub[i]), integer=bool(model.var_integer[i]),
                       obj=float(model.obj[i]))
        for i in keep:
            mb.add_row(model.row_names[i], model.row_coeffs(i),
                       int(model.row_sense[i]), float(model.row_rhs[i]))
        stripped = mb.freeze()
        res = solve(stripped, solver_cfg)
        assert res.status == "optimal"
        x_first = extract_first_stage(index, res.x)

        total = 0.0
        for scen in g1.scenarios:
            sub, sub_index = build_scenario_subproblem(
                g1, SubproblemSpec(scenario=scen.id, mode=LR))
            assign = {sub_index.column(c): v for c, v in x_first.items()}
            fixed = fix_variables(sub, assign)
            sub_res = solve(fixed, solver_cfg)
            assert sub_res.status == "optimal"
            total += scen.probability * sub_res.objective
        assert total == pytest.approx(res.objective, rel=1e-7)

    def test_proximal_vanishes_at_anchor(self, g1, solver_cfg):
        lr_model, lr_index = build_scenario_subproblem(
            g1, SubproblemSpec(scenario="s1", mode=LR))
        lr_res = solve(lr_model, solver_cfg)
        info = first_stage_info(g1)
        anchor = {c: float(lr_res.x[lr_index.column(c)]) for c in info.coords}
        rho = {c: 123.0 for c in info.coords}
        pha_model, pha_index = build_scenario_subproblem(
            g1, SubproblemSpec(scenario="s1", mode=PHA, anchor=anchor, rho=rho))
        assert pha_index.coords == lr_index.coords
        assert objective_value(pha_model, lr_res.x) == pytest.approx(
            objective_value(lr_model, lr_res.x), rel=1e-12)

    def test_weak_duality_at_uniform_tier_multipliers(self, g1, g1_ef_solution,
                                                      solver_cfg):
        lam = {h.handle: 0.1 for h in enumerate_expectation_constraints(g1)}
        total = 0.0
        for scen in g1.scenarios:
            model, _ = build_scenario_subproblem(
                g1, SubproblemSpec(scenario=scen.id, mode=LR, lam=lam))
            res = solve(model, solver_cfg)
            total += scen.probability * res.objective
        assert total <= g1_ef_solution.objective + 1e-6
