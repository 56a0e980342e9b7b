"""Builders translating a planning instance into solver-ready models.

Three products share one formulation core: the extensive-form MILP over all
scenarios (expectation constraints kept hard), the per-scenario Lagrangian
subproblem (expectation constraints replaced by priced slack variables), and
the progressive-hedging subproblem (Lagrangian subproblem plus weight and
proximal terms on the first stage).

Formulation notes that matter when reading the rows:

* Tranche semantics use tier widths: tranche k of a load caps consumption at
  ``(u[k]-u[k-1]) * unit_size * xD`` MW and its reliability row requires the
  expected served energy over the horizon to reach ``phi[k]`` times the
  tranche's maximum energy. Widths make the per-tranche caps sum to installed
  capacity.
* Variable domains and per-bus construction limits are encoded as column
  bounds; candidate-line disjunctions use big-M rows with
  ``M = |susceptance| * big_m_angle_spread`` which is valid because bus
  angles are boxed to half the spread.
* Storage levels are cyclic: the period-0 row wraps against the last period
  using period 0's charge and discharge.
* Per-scenario objectives are *not* probability-weighted; the caller applies
  scenario probabilities when aggregating.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .canonical import (
    EQ,
    GE,
    INF,
    LE,
    CanonicalModel,
    Coord,
    ModelBuilder,
    VariableIndex,
    render_name,
)
from .core import (
    EXPECTED_OUTPUT,
    TIER_RELIABILITY,
    ExpectationConstraintSpec,
    PlanningInstance,
    Violation,
    enumerate_expectation_constraints,
    validate_instance,
)


class BuildError(ValueError):
    """Raised for invalid build requests (bad instance, bad subproblem spec)."""


class InvalidInstanceError(BuildError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations = tuple(violations)
        lines = "; ".join(str(v) for v in self.violations[:5])
        more = "" if len(self.violations) <= 5 else f" (+{len(self.violations) - 5} more)"
        super().__init__(f"instance is invalid: {lines}{more}")


EF_SLICE = "ef_slice"
LR = "lr"
PHA = "pha"


@dataclass(frozen=True)
class SubproblemSpec:
    """What to build for one scenario.

    ``lam`` maps expectation-constraint handles to multipliers (>= 0).
    ``w``/``anchor``/``rho`` are keyed by first-stage coordinate; ``w`` terms
    are added whenever given, the proximal term only in PHA mode.
    """

    scenario: str
    mode: str = LR
    lam: Mapping[str, float] = field(default_factory=dict)
    w: Mapping[Coord, float] = field(default_factory=dict)
    anchor: Mapping[Coord, float] = field(default_factory=dict)
    rho: Mapping[Coord, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "lam", dict(self.lam))
        object.__setattr__(self, "w", dict(self.w))
        object.__setattr__(self, "anchor", dict(self.anchor))
        object.__setattr__(self, "rho", dict(self.rho))
        if self.mode not in (EF_SLICE, LR, PHA):
            raise BuildError(f"unknown subproblem mode '{self.mode}'")
        for handle, lam in self.lam.items():
            if lam < 0:
                raise BuildError(f"multiplier for '{handle}' must be >= 0, got {lam!r}")
        if self.mode == EF_SLICE and (self.lam or self.w or self.rho):
            raise BuildError("ef_slice subproblems carry no multipliers or weights")


# ---------------------------------------------------------------------------
# First-stage metadata
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FirstStageInfo:
    """Canonical first-stage coordinate order plus per-coordinate metadata."""

    coords: tuple[Coord, ...]
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray
    mw_scale: np.ndarray  # MW represented by one native unit of the coordinate
    unit_cost: np.ndarray  # annualized fixed cost of one native unit

    def index_of(self) -> dict[Coord, int]:
        return {c: i for i, c in enumerate(self.coords)}


def first_stage_info(inst: PlanningInstance) -> FirstStageInfo:
    coords: list[Coord] = []
    lb: list[float] = []
    ub: list[float] = []
    integer: list[bool] = []
    scale: list[float] = []
    cost: list[float] = []

    for l in inst.candidate_branches():
        coords.append(("xL", l.id))
        lb.append(0.0)
        ub.append(1.0)
        integer.append(True)
        scale.append(l.capacity_mw)
        cost.append(l.fixed_cost)
    for b in inst.buses:
        for g in inst.gen_techs:
            cap = b.build_limit_gen.get(g.id)
            existing = b.existing_gen.get(g.id, 0.0)
            room = max(0.0, (cap - existing)) if cap is not None else 0.0
            coords.append(("xG", b.id, g.id))
            lb.append(0.0)
            if g.is_integer:
                ub.append(float(np.floor(room / g.unit_size_mw + 1e-9)))
            else:
                ub.append(room)
            integer.append(g.is_integer)
            scale.append(g.capacity_per_unit)
            cost.append(g.fixed_cost * g.capacity_per_unit)
    for b in inst.buses:
        for s in inst.storage_techs:
            cap = b.build_limit_storage.get(s.id)
            existing = b.existing_storage.get(s.id, 0.0)
            room = max(0.0, (cap - existing)) if cap is not None else 0.0
            coords.append(("xS", b.id, s.id))
            lb.append(0.0)
            ub.append(room)
            integer.append(False)
            scale.append(1.0)
            cost.append(s.fixed_cost)
    for b in inst.buses:
        for d in inst.load_techs:
            units = b.build_limit_load.get(d.id, 0.0)
            coords.append(("xD", b.id, d.id))
            lb.append(0.0)
            ub.append(float(round(units)))
            integer.append(True)
            scale.append(d.unit_size_mw)
            cost.append(d.fixed_cost)

    def frz(vals, dtype=float):
        arr = np.array(vals, dtype=dtype)
        arr.setflags(write=False)
        return arr

    return FirstStageInfo(coords=tuple(coords), lb=frz(lb), ub=frz(ub),
                          integer=frz(integer, bool), mw_scale=frz(scale),
                          unit_cost=frz(cost))


# ---------------------------------------------------------------------------
# Expectation-constraint terms (canonical >= form)
# ---------------------------------------------------------------------------


def expectation_terms(inst: PlanningInstance, spec: ExpectationConstraintSpec):
    """Return (first-stage terms, per-scenario term factory, rhs) in >= form.

    A tier-reliability spec reads
    ``sum_w pi_w sum_t tau*pDK >= phi * width * unit_size * tau * |T| * xD``;
    an expected-output policy ``lhs <= E`` is stored negated.
    """
    tau = inst.period_length_h
    T = inst.num_periods
    if spec.kind == TIER_RELIABILITY:
        d = inst.load_tech(spec.load_tech)
        width = d.tiers.widths()[spec.tier - 1]
        phi = d.tiers.phi[spec.tier - 1]
        fs = [(("xD", spec.bus, spec.load_tech),
               -phi * width * d.unit_size_mw * tau * T)]

        def scen_terms(scen_id: str):
            return [(("pDK", spec.bus, spec.load_tech, spec.tier, t, scen_id), tau)
                    for t in range(T)]

        return fs, scen_terms, 0.0

    if spec.kind == EXPECTED_OUTPUT:
        def scen_terms(scen_id: str):
            terms = []
            for b in inst.buses:
                for g_id, q in spec.q.items():
                    if not q:
                        continue
                    for t in range(T):
                        terms.append((("pG", b.id, g_id, t, scen_id), -tau * q))
                for d_id, r in spec.r.items():
                    if not r:
                        continue
                    n_tiers = len(inst.load_tech(d_id).tiers)
                    for k in range(1, n_tiers + 1):
                        for t in range(T):
                            terms.append((("pDK", b.id, d_id, k, t, scen_id), -tau * r))
            return terms

        return [], scen_terms, -spec.threshold if spec.threshold else 0.0

    raise BuildError(f"unknown expectation constraint kind '{spec.kind}'")


# ---------------------------------------------------------------------------
# Shared assembly
# ---------------------------------------------------------------------------


def _require_valid(inst: PlanningInstance) -> None:
    violations = validate_instance(inst)
    if violations:
        raise InvalidInstanceError(violations)


def _add_first_stage(mb: ModelBuilder, inst: PlanningInstance, info: FirstStageInfo,
                     coords: list[Coord]) -> dict[Coord, int]:
    cols: dict[Coord, int] = {}
    for i, coord in enumerate(info.coords):
        col = mb.add_var(render_name(coord), lb=float(info.lb[i]), ub=float(info.ub[i]),
                         integer=bool(info.integer[i]), obj=float(info.unit_cost[i]))
        cols[coord] = col
        coords.append(coord)
    return cols


def _add_mandate_rows(mb: ModelBuilder, inst: PlanningInstance, cols: dict[Coord, int]) -> None:
    for d in inst.load_techs:
        if d.mandate is None:
            continue
        terms = [(cols[("xD", b.id, d.id)], 1.0) for b in inst.buses]
        sense = EQ if d.mandate.equality else GE
        mb.add_row(f"man[{d.id}]", terms, sense, float(d.mandate.min_units))


def _add_scenario_block(mb: ModelBuilder, inst: PlanningInstance, scen,
                        coords: list[Coord], cols: dict[Coord, int],
                        cost_scale: float) -> None:
    """Add scenario ``scen``'s operation variables, rows and objective terms.

    ``cost_scale`` multiplies every variable cost; it carries the annualization
    factor, the period length, and (for the extensive form) the scenario
    probability.
    """
    tau = inst.period_length_h
    T = inst.num_periods
    w = scen.id
    spread = inst.big_m_angle_spread
    ref_bus = inst.reference_bus
    bus_idx = {b.id: i for i, b in enumerate(inst.buses)}
    gen_idx = {g.id: i for i, g in enumerate(inst.gen_techs)}

    def new_var(coord, lb=0.0, ub=INF, obj=0.0):
        col = mb.add_var(render_name(coord), lb=lb, ub=ub, obj=obj)
        cols[coord] = col
        coords.append(coord)
        return col

    for b in inst.buses:
        for g in inst.gen_techs:
            for t in range(T):
                new_var(("pG", b.id, g.id, t, w), obj=cost_scale * g.variable_cost)
    for b in inst.buses:
        for s in inst.storage_techs:
            for t in range(T):
                new_var(("pS", b.id, s.id, t, w))
    for b in inst.buses:
        for s in inst.storage_techs:
            for t in range(T):
                new_var(("pSch", b.id, s.id, t, w))
    for b in inst.buses:
        for s in inst.storage_techs:
            for t in range(T):
                new_var(("pSdch", b.id, s.id, t, w), obj=cost_scale * s.variable_cost)
    for b in inst.buses:
        for d in inst.load_techs:
            for k in range(1, len(d.tiers) + 1):
                for t in range(T):
                    new_var(("pDK", b.id, d.id, k, t, w), obj=cost_scale * d.variable_cost)
    for b in inst.buses:
        for t in range(T):
            new_var(("psh", b.id, t, w), ub=float(scen.demand[bus_idx[b.id], t]),
                    obj=cost_scale * inst.shed_cost)
    for l in inst.branches:
        for t in range(T):
            new_var(("f", l.id, t, w), lb=-l.capacity_mw, ub=l.capacity_mw)
    for b in inst.buses:
        for t in range(T):
            if b.id == ref_bus:
                new_var(("theta", b.id, t, w), lb=0.0, ub=0.0)
            else:
                new_var(("theta", b.id, t, w), lb=-spread / 2.0, ub=spread / 2.0)

    # generation availability caps
    for b in inst.buses:
        bi = bus_idx[b.id]
        for g in inst.gen_techs:
            gi = gen_idx[g.id]
            existing = b.existing_gen.get(g.id, 0.0)
            for t in range(T):
                alpha = float(scen.availability[bi, gi, t])
                mb.add_row(f"avail[{b.id},{g.id},{t},{w}]",
                           [(cols[("pG", b.id, g.id, t, w)], 1.0),
                            (cols[("xG", b.id, g.id)], -alpha * g.capacity_per_unit)],
                           LE, alpha * existing)

    # storage power and energy caps, cyclic level dynamics
    for b in inst.buses:
        for s in inst.storage_techs:
            existing = b.existing_storage.get(s.id, 0.0)
            xs = cols[("xS", b.id, s.id)]
            for t in range(T):
                mb.add_row(f"chcap[{b.id},{s.id},{t},{w}]",
                           [(cols[("pSch", b.id, s.id, t, w)], 1.0), (xs, -1.0)],
                           LE, existing)
                mb.add_row(f"dchcap[{b.id},{s.id},{t},{w}]",
                           [(cols[("pSdch", b.id, s.id, t, w)], 1.0), (xs, -1.0)],
                           LE, existing)
                mb.add_row(f"ecap[{b.id},{s.id},{t},{w}]",
                           [(cols[("pS", b.id, s.id, t, w)], 1.0), (xs, -s.duration_h)],
                           LE, s.duration_h * existing)
            for t in range(T):
                prev = (t - 1) % T
                mb.add_row(f"sdyn[{b.id},{s.id},{t},{w}]",
                           [(cols[("pS", b.id, s.id, t, w)], 1.0),
                            (cols[("pS", b.id, s.id, prev, w)], -1.0),
                            (cols[("pSch", b.id, s.id, t, w)], -tau * s.eff_charge),
                            (cols[("pSdch", b.id, s.id, t, w)], tau)],
                           EQ, 0.0)

    # flow-angle coupling
    for l in inst.branches:
        for t in range(T):
            fterms = [(cols[("f", l.id, t, w)], 1.0),
                      (cols[("theta", l.from_bus, t, w)], -l.susceptance),
                      (cols[("theta", l.to_bus, t, w)], l.susceptance)]
            if not l.is_candidate:
                mb.add_row(f"flow[{l.id},{t},{w}]", fterms, EQ, 0.0)
            else:
                big_m = abs(l.susceptance) * spread
                xl = cols[("xL", l.id)]
                mb.add_row(f"bigm_hi[{l.id},{t},{w}]", fterms + [(xl, big_m)], LE, big_m)
                mb.add_row(f"bigm_lo[{l.id},{t},{w}]", fterms + [(xl, -big_m)], GE, -big_m)
                mb.add_row(f"fcap_hi[{l.id},{t},{w}]",
                           [(cols[("f", l.id, t, w)], 1.0), (xl, -l.capacity_mw)], LE, 0.0)
                mb.add_row(f"fcap_lo[{l.id},{t},{w}]",
                           [(cols[("f", l.id, t, w)], 1.0), (xl, l.capacity_mw)], GE, 0.0)

    # tranche caps
    for b in inst.buses:
        for d in inst.load_techs:
            widths = d.tiers.widths()
            xd = cols[("xD", b.id, d.id)]
            for k in range(1, len(d.tiers) + 1):
                cap = widths[k - 1] * d.unit_size_mw
                for t in range(T):
                    mb.add_row(f"tiercap[{b.id},{d.id},{k},{t},{w}]",
                               [(cols[("pDK", b.id, d.id, k, t, w)], 1.0), (xd, -cap)],
                               LE, 0.0)

    # nodal balance
    for b in inst.buses:
        bi = bus_idx[b.id]
        for t in range(T):
            terms: list[tuple[int, float]] = []
            for g in inst.gen_techs:
                terms.append((cols[("pG", b.id, g.id, t, w)], 1.0))
            for s in inst.storage_techs:
                terms.append((cols[("pSdch", b.id, s.id, t, w)], s.eff_discharge))
                terms.append((cols[("pSch", b.id, s.id, t, w)], -1.0))
            for l in inst.branches:
                if l.from_bus == b.id:
                    terms.append((cols[("f", l.id, t, w)], -1.0))
                if l.to_bus == b.id:
                    terms.append((cols[("f", l.id, t, w)], 1.0))
            terms.append((cols[("psh", b.id, t, w)], 1.0))
            for d in inst.load_techs:
                for k in range(1, len(d.tiers) + 1):
                    terms.append((cols[("pDK", b.id, d.id, k, t, w)], -1.0))
            mb.add_row(f"bal[{b.id},{t},{w}]", terms, EQ, float(scen.demand[bi, t]))


# ---------------------------------------------------------------------------
# Extensive form
# ---------------------------------------------------------------------------


def build_extensive_form(inst: PlanningInstance) -> tuple[CanonicalModel, VariableIndex]:
    """The monolithic MILP over all scenarios with hard expectation rows."""
    _require_valid(inst)
    info = first_stage_info(inst)
    mb = ModelBuilder(name=f"{inst.name}-ef")
    coords: list[Coord] = []
    cols = _add_first_stage(mb, inst, info, coords)
    annual = inst.annualization_days * inst.period_length_h
    for scen in inst.scenarios:
        _add_scenario_block(mb, inst, scen, coords, cols,
                            cost_scale=scen.probability * annual)
    _add_mandate_rows(mb, inst, cols)
    for spec in enumerate_expectation_constraints(inst):
        fs_terms, scen_terms, rhs = expectation_terms(inst, spec)
        terms = [(cols[c], v) for c, v in fs_terms]
        for scen in inst.scenarios:
            terms.extend((cols[c], scen.probability * v) for c, v in scen_terms(scen.id))
        name = f"pol[{spec.handle}]" if spec.kind == EXPECTED_OUTPUT else f"rel[{spec.handle}]"
        mb.add_row(name, terms, GE, rhs)
    return mb.freeze(), VariableIndex(coords=tuple(coords))


# ---------------------------------------------------------------------------
# Scenario subproblems
# ---------------------------------------------------------------------------


def build_scenario_subproblem(inst: PlanningInstance,
                              spec: SubproblemSpec) -> tuple[CanonicalModel, VariableIndex]:
    """One scenario's model with first-stage copies and dualized expectations.

    The slack column for handle ``c`` is defined by the equality
    ``sigma[c,w] = e_c - (f_c.x + h_c.y_w)``; the objective is
    ``C_inv + C_op_w + sum_c lam_c sigma_c`` plus, when requested, the weight
    term ``w.x`` and the proximal penalty ``sum_i rho_i/2 (x_i - anchor_i)^2``.
    The scenario probability is *not* applied here.
    """
    _require_valid(inst)
    try:
        scen = inst.scenario(spec.scenario)
    except KeyError:
        raise BuildError(f"unknown scenario id '{spec.scenario}'") from None
    handles = enumerate_expectation_constraints(inst)
    by_handle = {h.handle: h for h in handles}
    for handle in spec.lam:
        if handle not in by_handle:
            raise BuildError(f"multiplier for unknown constraint handle '{handle}'")

    info = first_stage_info(inst)
    fs_index = info.index_of()
    for coord in spec.w:
        if coord not in fs_index:
            raise BuildError(f"weight on unknown first-stage coordinate {coord!r}")
    if spec.mode == PHA:
        missing = [c for c in info.coords if c not in spec.rho or spec.rho[c] <= 0]
        if missing:
            raise BuildError(f"PHA mode needs rho > 0 for every first-stage coordinate; "
                             f"missing or nonpositive for {missing[0]!r}")

    mb = ModelBuilder(name=f"{inst.name}-{spec.mode}-{scen.id}")
    coords: list[Coord] = []
    cols = _add_first_stage(mb, inst, info, coords)
    annual = inst.annualization_days * inst.period_length_h
    _add_scenario_block(mb, inst, scen, coords, cols, cost_scale=annual)
    _add_mandate_rows(mb, inst, cols)

    if spec.mode != EF_SLICE:
        for c_spec in handles:
            fs_terms, scen_terms, rhs = expectation_terms(inst, c_spec)
            coord = ("sigma", c_spec.handle, scen.id)
            col = mb.add_var(render_name(coord), lb=-INF, ub=INF,
                             obj=float(spec.lam.get(c_spec.handle, 0.0)))
            cols[coord] = col
            coords.append(coord)
            terms = [(col, 1.0)]
            terms.extend((cols[c], v) for c, v in fs_terms)
            terms.extend((cols[c], v) for c, v in scen_terms(scen.id))
            mb.add_row(f"sig[{c_spec.handle},{scen.id}]", terms, EQ, rhs)

    for coord, weight in spec.w.items():
        mb.add_obj(cols[coord], float(weight))
    if spec.mode == PHA:
        for coord in info.coords:
            anchor = spec.anchor.get(coord)
            if anchor is None:
                raise BuildError(f"PHA mode needs an anchor value for {coord!r}")
            mb.add_quad(cols[coord], float(spec.rho[coord]) / 2.0, float(anchor))

    return mb.freeze(), VariableIndex(coords=tuple(coords))
