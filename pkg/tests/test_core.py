import numpy as np
from hypothesis import given, settings, strategies as st

from flexcep.core import (
    EXPECTED_OUTPUT,
    FULL_FLEX,
    INFLEXIBLE,
    TIER_RELIABILITY,
    Bus,
    ExpectationConstraintSpec,
    GenTech,
    LargeLoadTech,
    Mandate,
    PlanningInstance,
    Scenario,
    StorageTech,
    TierSpec,
    compare_tiers,
    enumerate_expectation_constraints,
    validate_instance,
)
from flexcep.oracle import DAC_MID_FLEX, generate
from flexcep import storage


def _tiny_instance(**overrides):
    """One bus, one continuous tech, one scenario; the smallest valid instance."""
    fields = dict(
        name="tiny",
        buses=(Bus(id="B1", build_limit_gen={"solar": 10.0}),),
        gen_techs=(GenTech(id="solar", integrality="continuous",
                           fixed_cost=1000.0, variable_cost=0.0),),
        storage_techs=(),
        load_techs=(),
        branches=(),
        scenarios=(Scenario(id="s1", probability=1.0,
                            demand=np.zeros((1, 2)),
                            availability=np.ones((1, 1, 2))),),
        period_length_h=6.0,
        shed_cost=1000.0,
    )
    fields.update(overrides)
    return PlanningInstance(**fields)


def _with_load(tiers, mandate=None, variable_cost=1.0, buses=None):
    load = LargeLoadTech(id="dac", unit_size_mw=10.0, fixed_cost=100.0,
                         variable_cost=variable_cost, tiers=tiers, mandate=mandate)
    buses = buses or (Bus(id="B1", build_limit_gen={"solar": 10.0},
                          build_limit_load={"dac": 2.0}),)
    return _tiny_instance(load_techs=(load,), buses=buses)


class TestValidation:
    def test_mid_flex_tiers_valid(self):
        inst = _with_load(TierSpec(u=(0.5, 0.75, 1.0), phi=(1.0, 0.5, 0.0)))
        assert validate_instance(inst) == []

    def test_inflexible_and_full_flex_valid(self):
        assert validate_instance(_with_load(INFLEXIBLE)) == []
        assert validate_instance(_with_load(FULL_FLEX)) == []

    def test_phi_must_be_non_increasing(self):
        inst = _with_load(TierSpec(u=(0.5, 1.0), phi=(0.5, 1.0)))
        bad = validate_instance(inst)
        assert any("phi non-increasing" in v.message for v in bad)

    def test_probabilities_must_sum_to_one(self):
        scen = Scenario(id="s1", probability=0.9, demand=np.zeros((1, 2)),
                        availability=np.ones((1, 1, 2)))
        inst = _tiny_instance(scenarios=(scen,))
        bad = validate_instance(inst)
        assert any("sum to 1" in v.message for v in bad)

    def test_dummy_tiers_accepted(self):
        # zero-width tranches are legal filler
        inst = _with_load(TierSpec(u=(0.5, 0.5, 1.0), phi=(1.0, 0.6, 0.2)))
        assert validate_instance(inst) == []

    def test_breakpoints_must_end_at_one(self):
        inst = _with_load(TierSpec(u=(0.5, 0.9), phi=(1.0, 0.5)))
        assert any("must equal 1" in v.message for v in validate_instance(inst))

    def test_zero_breakpoint_rejected(self):
        inst = _with_load(TierSpec(u=(0.0, 1.0), phi=(1.0, 0.5)))
        assert any("(0, 1]" in v.message for v in validate_instance(inst))

    def test_negative_cost_needs_equality_mandate(self):
        inst = _with_load(INFLEXIBLE, variable_cost=-2.0)
        assert any("equality mandate" in v.message for v in validate_instance(inst))
        ok = _with_load(INFLEXIBLE, variable_cost=-2.0,
                        mandate=Mandate(min_units=1, equality=True))
        assert validate_instance(ok) == []

    def test_mandate_above_buildable_flagged(self):
        inst = _with_load(INFLEXIBLE, mandate=Mandate(min_units=5))
        assert any("exceeds total buildable" in v.message for v in validate_instance(inst))

    def test_build_limit_below_existing_flagged(self):
        bus = Bus(id="B1", existing_gen={"solar": 20.0}, build_limit_gen={"solar": 10.0})
        inst = _tiny_instance(buses=(bus,))
        assert any("below existing" in v.message for v in validate_instance(inst))

    def test_unknown_tech_reference_flagged(self):
        bus = Bus(id="B1", build_limit_gen={"wind": 10.0})
        inst = _tiny_instance(buses=(bus,))
        assert any("unknown generation tech" in v.message for v in validate_instance(inst))

    def test_violations_sorted_by_path(self):
        scen = Scenario(id="s1", probability=0.5, demand=-np.ones((1, 2)),
                        availability=2 * np.ones((1, 1, 2)))
        inst = _tiny_instance(scenarios=(scen,))
        bad = validate_instance(inst)
        assert len(bad) >= 3
        assert [v.path for v in bad] == sorted(v.path for v in bad)

    def test_generated_instances_are_valid(self):
        for name in ("G1", "G2", "G3"):
            assert validate_instance(generate(name, 3)) == []

    def test_probabilities_renormalized_exactly(self):
        scens = tuple(Scenario(id=f"s{i}", probability=1.0 / 3.0,
                               demand=np.zeros((1, 2)),
                               availability=np.ones((1, 1, 2))) for i in range(3))
        inst = _tiny_instance(scenarios=scens)
        assert sum(s.probability for s in inst.scenarios) == 1.0


class TestEnumerate:
    def test_two_buses_three_tiers_plus_policy(self):
        load = LargeLoadTech(id="dac", unit_size_mw=10.0, fixed_cost=100.0,
                             variable_cost=1.0, tiers=DAC_MID_FLEX)
        buses = (Bus(id="B1", build_limit_load={"dac": 1.0}),
                 Bus(id="B2", build_limit_load={"dac": 1.0}))
        policy = ExpectationConstraintSpec(kind=EXPECTED_OUTPUT, handle="cap",
                                           r={"dac": -0.5}, threshold=0.0)
        inst = _tiny_instance(buses=buses, load_techs=(load,),
                              expectation_policies=(policy,))
        specs = enumerate_expectation_constraints(inst)
        assert len(specs) == 2 * 3 + 1
        assert specs[-1].handle == "cap"

    def test_no_loads_no_policies_empty(self):
        assert enumerate_expectation_constraints(_tiny_instance()) == ()

    def test_zero_buildable_generates_no_tier_specs(self):
        load = LargeLoadTech(id="dac", unit_size_mw=10.0, fixed_cost=100.0,
                             variable_cost=1.0, tiers=DAC_MID_FLEX)
        policy = ExpectationConstraintSpec(kind=EXPECTED_OUTPUT, handle="cap",
                                           r={"dac": -0.5}, threshold=0.0)
        inst = _tiny_instance(
            buses=(Bus(id="B1", build_limit_gen={"solar": 10.0},
                       build_limit_load={"dac": 0.0}),),
            load_techs=(load,), expectation_policies=(policy,))
        specs = enumerate_expectation_constraints(inst)
        assert len(specs) == 1
        assert specs[0].kind == EXPECTED_OUTPUT

    def test_pure_function_of_instance(self, g1):
        a = enumerate_expectation_constraints(g1)
        b = enumerate_expectation_constraints(g1)
        assert repr(a) == repr(b)

    def test_dummy_tiers_generate_zero_width_specs(self):
        inst = _with_load(TierSpec(u=(0.5, 0.5, 1.0), phi=(1.0, 0.6, 0.2)))
        specs = enumerate_expectation_constraints(inst)
        assert [s.tier for s in specs if s.kind == TIER_RELIABILITY] == [1, 2, 3]
        d = inst.load_techs[0]
        assert d.tiers.widths()[1] == 0.0

    def test_handles_stable_across_serialization(self, g1, tmp_path):
        p = tmp_path / "g1.json"
        storage.save_instance(g1, p)
        again = storage.load_instance(p)
        assert [s.handle for s in enumerate_expectation_constraints(again)] == \
            [s.handle for s in enumerate_expectation_constraints(g1)]
        assert validate_instance(again) == []


class TestCompareTiers:
    def test_inflexible_stricter_than_mid_flex(self):
        assert compare_tiers(INFLEXIBLE, DAC_MID_FLEX) == 1
        assert compare_tiers(DAC_MID_FLEX, INFLEXIBLE) == -1

    def test_mid_flex_stricter_than_full_flex(self):
        assert compare_tiers(DAC_MID_FLEX, FULL_FLEX) == 1

    def test_equivalent_after_refinement(self):
        split = TierSpec(u=(0.25, 0.5, 0.75, 1.0), phi=(1.0, 1.0, 0.5, 0.0))
        merged = TierSpec(u=(0.5, 0.75, 1.0), phi=(1.0, 0.5, 0.0))
        assert compare_tiers(split, merged) == 0

    def test_crossing_reliabilities_incomparable(self):
        a = TierSpec(u=(0.5, 1.0), phi=(1.0, 0.0))
        b = TierSpec(u=(0.5, 1.0), phi=(0.8, 0.3))
        assert compare_tiers(a, b) is None

    @given(st.lists(st.floats(0.05, 1.0), min_size=1, max_size=4),
           st.data())
    @settings(max_examples=40, deadline=None)
    def test_relaxing_phi_orders_specs(self, raw_u, data):
        u = []
        total = 0.0
        for w in raw_u:
            total = min(1.0, total + w / sum(raw_u))
            u.append(round(total, 6))
        u[-1] = 1.0
        u = tuple(dict.fromkeys(u))  # drop duplicates, keep order
        phi = []
        prev = 1.0
        for _ in u:
            prev = data.draw(st.floats(0.0, prev))
            phi.append(prev)
        a = TierSpec(u=u, phi=tuple(phi))
        weaker = TierSpec(u=u, phi=tuple(p * 0.5 for p in phi))
        assert compare_tiers(a, weaker) in (0, 1)
