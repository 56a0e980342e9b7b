"""Solution reporting: cost decomposition, reliability audit, policy totals.

Everything here is recomputed from the instance and a primal vector rather
than read back from the solver objective, so reports double as an independent
consistency check on the optimization layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .canonical import VariableIndex
from .core import PlanningInstance, enumerate_expectation_constraints
from .build import expectation_terms


@dataclass(frozen=True)
class CostBreakdown:
    invest_transmission: float = 0.0
    invest_generation: float = 0.0
    invest_storage: float = 0.0
    invest_load: float = 0.0
    op_shedding: float = 0.0
    op_generation: float = 0.0
    op_storage: float = 0.0
    op_load: float = 0.0

    @property
    def investment(self) -> float:
        return (self.invest_transmission + self.invest_generation
                + self.invest_storage + self.invest_load)

    @property
    def operation(self) -> float:
        return self.op_shedding + self.op_generation + self.op_storage + self.op_load

    @property
    def total(self) -> float:
        return self.investment + self.operation


@dataclass(frozen=True)
class BuildoutRow:
    bus: str  # empty for branch rows
    kind: str  # gen | storage | load | line
    tech: str  # tech id, or branch id for lines
    existing: float
    built: float  # MW for gen/storage, units for loads, 0/1 for lines
    built_mw: float


@dataclass(frozen=True)
class ReliabilityRow:
    bus: str
    tech: str
    tier: int
    required_phi: float
    achieved: float
    width: float
    units: float


@dataclass(frozen=True)
class PolicyRow:
    handle: str
    lhs: float  # expected output in the policy's original <= orientation
    threshold: float
    sigma_bar: float  # lhs - threshold; <= 0 means satisfied


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    consensus: float
    sigma_violation: float
    lower_bound: float | None
    upper_bound: float | None
    wall_time_s: float = 0.0


@dataclass(frozen=True)
class SolveReport:
    """Results of one planning run, ready for serialization."""

    instance_name: str
    method: str  # "ef" | "pha"
    status: str
    objective: float | None
    lower_bound: float | None
    upper_bound: float | None
    gap: float | None
    termination: str
    costs: CostBreakdown | None
    buildout: tuple[BuildoutRow, ...] = ()
    reliability: tuple[ReliabilityRow, ...] = ()
    policies: tuple[PolicyRow, ...] = ()
    trace: tuple[TraceRow, ...] = ()
    sigma_bar: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "sigma_bar", dict(self.sigma_bar))


# ---------------------------------------------------------------------------
# Cost evaluation
# ---------------------------------------------------------------------------


def investment_cost(inst: PlanningInstance, x_first: Mapping) -> CostBreakdown:
    """Annualized investment cost of a first-stage assignment (by coordinate)."""
    line = sum(l.fixed_cost * x_first.get(("xL", l.id), 0.0)
               for l in inst.candidate_branches())
    gen = sum(g.fixed_cost * g.capacity_per_unit * x_first.get(("xG", b.id, g.id), 0.0)
              for b in inst.buses for g in inst.gen_techs)
    sto = sum(s.fixed_cost * x_first.get(("xS", b.id, s.id), 0.0)
              for b in inst.buses for s in inst.storage_techs)
    load = sum(d.fixed_cost * x_first.get(("xD", b.id, d.id), 0.0)
               for b in inst.buses for d in inst.load_techs)
    return CostBreakdown(invest_transmission=line, invest_generation=gen,
                         invest_storage=sto, invest_load=load)


def operation_cost(inst: PlanningInstance, scen_id: str, value) -> CostBreakdown:
    """Annualized operation cost of one scenario; ``value(coord)`` reads primals."""
    tau = inst.period_length_h
    T = inst.num_periods
    scale = inst.annualization_days * tau
    shed = gen = sto = load = 0.0
    for b in inst.buses:
        for t in range(T):
            shed += inst.shed_cost * value(("psh", b.id, t, scen_id))
        for g in inst.gen_techs:
            for t in range(T):
                gen += g.variable_cost * value(("pG", b.id, g.id, t, scen_id))
        for s in inst.storage_techs:
            for t in range(T):
                sto += s.variable_cost * value(("pSdch", b.id, s.id, t, scen_id))
        for d in inst.load_techs:
            for k in range(1, len(d.tiers) + 1):
                for t in range(T):
                    load += d.variable_cost * value(("pDK", b.id, d.id, k, t, scen_id))
    return CostBreakdown(op_shedding=scale * shed, op_generation=scale * gen,
                         op_storage=scale * sto, op_load=scale * load)


def expected_operation_cost(inst: PlanningInstance, value_of_scenario) -> CostBreakdown:
    """Probability-weighted sum of per-scenario operation costs."""
    acc = {"op_shedding": 0.0, "op_generation": 0.0, "op_storage": 0.0, "op_load": 0.0}
    for scen in inst.scenarios:
        c = operation_cost(inst, scen.id, value_of_scenario(scen.id))
        acc["op_shedding"] += scen.probability * c.op_shedding
        acc["op_generation"] += scen.probability * c.op_generation
        acc["op_storage"] += scen.probability * c.op_storage
        acc["op_load"] += scen.probability * c.op_load
    return CostBreakdown(**acc)


def merge_costs(invest: CostBreakdown, op: CostBreakdown) -> CostBreakdown:
    return CostBreakdown(
        invest_transmission=invest.invest_transmission,
        invest_generation=invest.invest_generation,
        invest_storage=invest.invest_storage,
        invest_load=invest.invest_load,
        op_shedding=op.op_shedding,
        op_generation=op.op_generation,
        op_storage=op.op_storage,
        op_load=op.op_load,
    )


# ---------------------------------------------------------------------------
# Audits
# ---------------------------------------------------------------------------


def buildout_rows(inst: PlanningInstance, x_first: Mapping) -> tuple[BuildoutRow, ...]:
    rows: list[BuildoutRow] = []
    for b in inst.buses:
        for g in inst.gen_techs:
            built = x_first.get(("xG", b.id, g.id), 0.0)
            rows.append(BuildoutRow(bus=b.id, kind="gen", tech=g.id,
                                    existing=b.existing_gen.get(g.id, 0.0),
                                    built=built, built_mw=built * g.capacity_per_unit))
        for s in inst.storage_techs:
            built = x_first.get(("xS", b.id, s.id), 0.0)
            rows.append(BuildoutRow(bus=b.id, kind="storage", tech=s.id,
                                    existing=b.existing_storage.get(s.id, 0.0),
                                    built=built, built_mw=built))
        for d in inst.load_techs:
            built = x_first.get(("xD", b.id, d.id), 0.0)
            rows.append(BuildoutRow(bus=b.id, kind="load", tech=d.id, existing=0.0,
                                    built=built, built_mw=built * d.unit_size_mw))
    for l in inst.candidate_branches():
        built = x_first.get(("xL", l.id), 0.0)
        rows.append(BuildoutRow(bus="", kind="line", tech=l.id, existing=0.0,
                                built=built, built_mw=built * l.capacity_mw))
    return tuple(rows)


def reliability_rows(inst: PlanningInstance, x_first: Mapping,
                     value_of_scenario) -> tuple[ReliabilityRow, ...]:
    """Achieved vs required expected capacity factor per built tranche.

    The achieved factor is the probability-weighted served energy divided by
    the tranche's maximum energy over the horizon; zero-width filler tranches
    are reported as fully served.
    """
    tau = inst.period_length_h
    T = inst.num_periods
    rows: list[ReliabilityRow] = []
    for b in inst.buses:
        for d in inst.load_techs:
            units = x_first.get(("xD", b.id, d.id), 0.0)
            if units <= 1e-9:
                continue
            widths = d.tiers.widths()
            for k in range(1, len(d.tiers) + 1):
                width = widths[k - 1]
                cap_energy = width * d.unit_size_mw * tau * T * units
                served = 0.0
                for scen in inst.scenarios:
                    val = value_of_scenario(scen.id)
                    served += scen.probability * sum(
                        tau * val(("pDK", b.id, d.id, k, t, scen.id)) for t in range(T))
                achieved = served / cap_energy if cap_energy > 1e-12 else 1.0
                rows.append(ReliabilityRow(bus=b.id, tech=d.id, tier=k,
                                           required_phi=d.tiers.phi[k - 1],
                                           achieved=achieved, width=width, units=units))
    return tuple(rows)


def policy_rows(inst: PlanningInstance, x_first: Mapping,
                value_of_scenario) -> tuple[PolicyRow, ...]:
    """Expected-output policy totals in their original <= orientation."""
    rows: list[PolicyRow] = []
    for spec in inst.expectation_policies:
        fs_terms, scen_terms, rhs = expectation_terms(inst, spec)
        # expectation_terms yields the negated >= form; undo the negation here
        lhs = -sum(v * x_first.get(c, 0.0) for c, v in fs_terms)
        for scen in inst.scenarios:
            val = value_of_scenario(scen.id)
            lhs += -scen.probability * sum(v * val(c) for c, v in scen_terms(scen.id))
        rows.append(PolicyRow(handle=spec.handle, lhs=lhs, threshold=spec.threshold,
                              sigma_bar=lhs - spec.threshold))
    return tuple(rows)


def sigma_bar_of_solution(inst: PlanningInstance, x_first: Mapping,
                          value_of_scenario) -> dict[str, float]:
    """Expected slack per expectation handle; positive means violated."""
    out: dict[str, float] = {}
    for spec in enumerate_expectation_constraints(inst):
        fs_terms, scen_terms, rhs = expectation_terms(inst, spec)
        lhs = sum(v * x_first.get(c, 0.0) for c, v in fs_terms)
        for scen in inst.scenarios:
            val = value_of_scenario(scen.id)
            lhs += scen.probability * sum(v * val(c) for c, v in scen_terms(scen.id))
        out[spec.handle] = rhs - lhs
    return out


def extract_first_stage(index: VariableIndex, x: np.ndarray) -> dict:
    """First-stage coordinate -> value map from a full primal vector."""
    out = {}
    for col in index.columns_of_kind("xL", "xG", "xS", "xD"):
        out[index.coord(col)] = float(x[col])
    return out


def scenario_value_reader(index: VariableIndex, x: np.ndarray):
    """Returns ``reader(scen_id)`` giving ``value(coord)`` over one primal vector."""
    def reader(_scen_id: str):
        def value(coord) -> float:
            return float(x[index.column(coord)])
        return value
    return reader


def report_from_solution(inst: PlanningInstance, index: VariableIndex, x: np.ndarray,
                         method: str, status: str, objective: float | None,
                         lower_bound: float | None = None,
                         upper_bound: float | None = None,
                         gap: float | None = None,
                         termination: str = "",
                         trace: Sequence[TraceRow] = ()) -> SolveReport:
    """Assemble the full report for a solved model's primal vector."""
    x_first = extract_first_stage(index, x)
    reader = scenario_value_reader(index, x)
    costs = merge_costs(investment_cost(inst, x_first),
                        expected_operation_cost(inst, reader))
    return SolveReport(
        instance_name=inst.name,
        method=method,
        status=status,
        objective=objective,
        lower_bound=lower_bound,
        upper_bound=upper_bound,
        gap=gap,
        termination=termination,
        costs=costs,
        buildout=buildout_rows(inst, x_first),
        reliability=reliability_rows(inst, x_first, reader),
        policies=policy_rows(inst, x_first, reader),
        trace=tuple(trace),
        sigma_bar=sigma_bar_of_solution(inst, x_first, reader),
    )
