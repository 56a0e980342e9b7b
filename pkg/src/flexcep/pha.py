"""Augmented progressive hedging over scenarios with dualized expectations.

Each iteration solves every scenario's subproblem (optionally in a thread
pool), averages the first-stage copies, updates the non-anticipativity
weights ``w_w += rho * (x_w - x_bar)``, and takes a projected subgradient
step ``lam_c = max(0, lam_c + beta_c * sigma_bar_c)`` on the expectation
multipliers. The first iteration solves without weight and proximal terms,
which also yields the initial Lagrangian lower bound for free.

Bounds are tracked throughout: lower bounds come from probability-weighted
Lagrangian subproblem optima at the current (lam, w) -- valid whenever
``lam >= 0`` and ``sum_w pi_w w_w = 0`` -- and upper bounds from evaluating
rounded, repaired consensus candidates. The method is a heuristic on the
mixed-integer problem; results are always reported as an incumbent with a
gap, never as proven optimal.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .build import (
    LR,
    PHA,
    FirstStageInfo,
    SubproblemSpec,
    build_extensive_form,
    build_scenario_subproblem,
    first_stage_info,
)
from .canonical import (
    EQ,
    FEASIBLE_WITH_GAP,
    INFEASIBLE,
    LE,
    OPTIMAL,
    Coord,
    ModelBuilder,
    VariableIndex,
    fix_variables,
    relax_integrality,
    restrict_bounds,
)
from .build import InvalidInstanceError
from .core import (
    TIER_RELIABILITY,
    PlanningInstance,
    enumerate_expectation_constraints,
    validate_instance,
)
from .report import (
    SolveReport,
    TraceRow,
    expected_operation_cost,
    investment_cost,
    merge_costs,
    operation_cost as operation_cost_of,
    buildout_rows,
    reliability_rows,
    policy_rows,
    sigma_bar_of_solution,
    report_from_solution,
)
from .solvers import SolverConfig, solve

NO_INCUMBENT = "no_feasible_incumbent"

_DEFAULT_SCHEDULE = (5, 10, 20, 40, 80, 160, 320, 640, 1280)


class PHAError(RuntimeError):
    """Engine failure: infeasible subproblem, solver failure, bad candidate."""


@dataclass(frozen=True)
class PHAConfig:
    """Tunables of the hedging loop; defaults are cost-scaled heuristics."""

    rho_scale: float = 1.0  # proximal weight = rho_scale * unit fixed cost
    beta_scale: float = 0.1  # multiplier step = beta_scale * price/sigma scale
    lambda0: Mapping[str, float] = field(default_factory=dict)
    max_iterations: int = 100
    eps_consensus: float = 1e-3  # MW-scaled consensus metric tolerance
    eps_sigma: float = 1e-4  # expected-slack violation tolerance
    gap_threshold: float = 1e-3  # relative bound gap stop
    incumbent_schedule: tuple[int, ...] = _DEFAULT_SCHEDULE
    k_fix: int = 50  # extra multiplier iterations with the first stage fixed
    round_threshold: float = 0.5  # binary rounding threshold for candidates
    lb_interval: int = 1  # Lagrangian bound cadence (iterations)
    workers: int = 1  # scenario solves run serially unless > 1
    exact_incumbent_eval: bool = True  # certify incumbents on the joint fixed LP
    fix_beta_decay: bool = True  # harmonic step decay inside fix-and-iterate
    relax_integrality: bool = False  # drop integrality everywhere (convex mode)
    beta_decay_after: int | None = None  # 1/k decay of beta past this iteration
    pwl_segments: int = 16  # proximal linearization fidelity for subproblem solves

    def __post_init__(self):
        object.__setattr__(self, "lambda0", dict(self.lambda0))
        if self.rho_scale <= 0 or self.beta_scale <= 0:
            raise ValueError("rho_scale and beta_scale must be > 0")
        if min(self.eps_consensus, self.eps_sigma, self.gap_threshold) <= 0:
            raise ValueError("tolerances must be > 0")
        if self.k_fix < 1:
            raise ValueError("k_fix must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class BoundsRecord:
    iteration: int
    lower: float | None
    upper: float | None  # None marks "no feasible incumbent"
    gap: float | None

    @staticmethod
    def make(iteration: int, lower: float | None, upper: float | None) -> "BoundsRecord":
        gap = None
        if lower is not None and upper is not None:
            gap = (upper - lower) / max(abs(upper), 1.0)
        return BoundsRecord(iteration=iteration, lower=lower, upper=upper, gap=gap)


@dataclass
class PHAState:
    """Algorithm state; mutated by the engine and returned at the end."""

    coords: tuple[Coord, ...]
    mw_scale: np.ndarray
    probabilities: dict[str, float]
    iteration: int = 0
    x: dict[str, np.ndarray] = field(default_factory=dict)
    x_bar: np.ndarray | None = None
    w: dict[str, np.ndarray] = field(default_factory=dict)
    lam: dict[str, float] = field(default_factory=dict)
    sigma_bar: dict[str, float] = field(default_factory=dict)
    best_lower: float | None = None
    best_upper: float | None = None
    best_x_hat: dict | None = None
    bounds_history: list[BoundsRecord] = field(default_factory=list)
    metric_history: list[float] = field(default_factory=list)
    expected_cost_history: list[float] = field(default_factory=list)
    termination: str = ""


def consensus_metric(state: PHAState) -> float:
    """Probability-weighted RMS spread of MW-scaled first-stage copies."""
    if state.x_bar is None or not state.x:
        return math.inf
    acc = 0.0
    for scen_id, xv in state.x.items():
        dev = state.mw_scale * (xv - state.x_bar)
        acc += state.probabilities[scen_id] * float(dev @ dev)
    return math.sqrt(acc)


def sigma_violation(sigma_bar: Mapping[str, float]) -> float:
    """One-sided violation norm: satisfied constraints (sigma <= 0) count as 0."""
    if not sigma_bar:
        return 0.0
    return max(0.0, max(sigma_bar.values()))


# ---------------------------------------------------------------------------
# Step-size scales
# ---------------------------------------------------------------------------


def _rho_vector(cfg: PHAConfig, info: FirstStageInfo) -> np.ndarray:
    return cfg.rho_scale * np.maximum(info.unit_cost, 1.0)


def _beta_scales(cfg: PHAConfig, inst: PlanningInstance) -> dict[str, float]:
    """Per-handle subgradient steps: price scale over slack scale.

    For a tranche handle the slack is horizon energy (MWh); the price ceiling
    is the annualized shed cost. For a policy handle the slack is in the
    policy metric, so the price is divided by the largest coefficient and the
    slack scale estimated from buildable energy.
    """
    annual = inst.annualization_days
    tau_t = inst.period_length_h * inst.num_periods
    price_energy = annual * max(inst.shed_cost, 1.0)
    out: dict[str, float] = {}
    for spec in enumerate_expectation_constraints(inst):
        if spec.kind == TIER_RELIABILITY:
            d = inst.load_tech(spec.load_tech)
            width = d.tiers.widths()[spec.tier - 1]
            phi = d.tiers.phi[spec.tier - 1]
            units = inst.bus(spec.bus).build_limit_load.get(spec.load_tech, 0.0)
            sigma_scale = max(phi * width * d.unit_size_mw * tau_t * units, 1.0)
            out[spec.handle] = cfg.beta_scale * price_energy / sigma_scale
        else:
            max_coef = max([abs(v) for v in (*spec.q.values(), *spec.r.values())] or [1.0])
            gen_mw = sum(b.build_limit_gen.get(g.id, b.existing_gen.get(g.id, 0.0))
                         for b in inst.buses for g in inst.gen_techs)
            load_mw = sum(b.build_limit_load.get(d.id, 0.0) * d.unit_size_mw
                          for b in inst.buses for d in inst.load_techs)
            sigma_scale = max(abs(spec.threshold), max_coef * (gen_mw + load_mw) * tau_t, 1.0)
            out[spec.handle] = cfg.beta_scale * (price_energy / max(max_coef, 1e-9)) / sigma_scale
    return out


# ---------------------------------------------------------------------------
# Subproblem solving helpers
# ---------------------------------------------------------------------------


def _solve_scenarios(inst, specs: Sequence[SubproblemSpec], solver: SolverConfig,
                     workers: int, relax: bool = False):
    """Build and solve one subproblem per spec; deterministic result order."""
    def run_one(spec: SubproblemSpec):
        model, index = build_scenario_subproblem(inst, spec)
        if relax:
            model = relax_integrality(model)
        res = solve(model, solver)
        if res.status == INFEASIBLE:
            raise PHAError(
                f"scenario subproblem '{spec.scenario}' is infeasible; the relaxation "
                "should always be feasible, so the instance or model is inconsistent")
        if res.status not in (OPTIMAL, FEASIBLE_WITH_GAP):
            raise PHAError(f"scenario subproblem '{spec.scenario}' failed: {res.status}")
        return model, index, res

    if workers > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_one, specs))
    return [run_one(s) for s in specs]


def _proven_lower(res) -> float:
    """A bound provably below the subproblem optimum, even with a MIP gap."""
    if res.mip_gap:
        return res.objective - abs(res.objective) * res.mip_gap
    return res.objective


def _first_stage_vector(info: FirstStageInfo, index: VariableIndex, x: np.ndarray) -> np.ndarray:
    return np.array([x[index.column(c)] for c in info.coords])


def _sigma_values(handles, index: VariableIndex, x: np.ndarray, scen_id: str) -> dict[str, float]:
    return {h.handle: float(x[index.column(("sigma", h.handle, scen_id))]) for h in handles}


# ---------------------------------------------------------------------------
# Lagrangian lower bound
# ---------------------------------------------------------------------------


def lagrangian_lower_bound(inst: PlanningInstance, lam: Mapping[str, float],
                           w: Mapping[str, Mapping[Coord, float]],
                           solver: SolverConfig | None = None,
                           workers: int = 1, relax: bool = False) -> float:
    """Valid lower bound on the extensive form from dualized multipliers.

    Solves every scenario's Lagrangian subproblem (no proximal term) and
    returns the probability-weighted sum of their proven optima. Requires
    ``lam >= 0`` elementwise and probability-weighted weights summing to zero.
    """
    solver = solver or SolverConfig()
    for handle, val in lam.items():
        if val < 0:
            raise ValueError(f"multiplier for '{handle}' must be >= 0")
    balance: dict[Coord, float] = {}
    scale = 1.0
    for scen in inst.scenarios:
        for coord, val in w.get(scen.id, {}).items():
            balance[coord] = balance.get(coord, 0.0) + scen.probability * val
            scale = max(scale, abs(val))
    worst = max((abs(v) for v in balance.values()), default=0.0)
    if worst > 1e-8 * scale:
        raise ValueError(f"weights are not balanced: max |sum pi*w| = {worst!r}")
    specs = [SubproblemSpec(scenario=s.id, mode=LR, lam=dict(lam), w=dict(w.get(s.id, {})))
             for s in inst.scenarios]
    solved = _solve_scenarios(inst, specs, solver, workers, relax=relax)
    total = 0.0
    for scen, (_, _, res) in zip(inst.scenarios, solved):
        total += scen.probability * _proven_lower(res)
    return total


# ---------------------------------------------------------------------------
# Candidate rounding and repair
# ---------------------------------------------------------------------------


def round_and_repair(inst: PlanningInstance, info: FirstStageInfo, x_bar: np.ndarray,
                     threshold: float = 0.5, keep_fractional: bool = False) -> dict[Coord, float]:
    """Deterministic first-stage candidate from a consensus vector.

    Integer coordinates are rounded to the nearest unit (binaries thresholded),
    everything is clipped into its box, and mandates are repaired by raising
    the cheapest sites first (ties broken by bus order) or, for equality
    mandates, trimming the most recently raised sites. With ``keep_fractional``
    (convex mode) no rounding happens.
    """
    x_hat: dict[Coord, float] = {}
    for i, coord in enumerate(info.coords):
        v = float(x_bar[i])
        if info.integer[i] and not keep_fractional:
            if info.ub[i] <= 1.0:
                v = 1.0 if v >= threshold else 0.0
            else:
                v = math.floor(v + 0.5)
        v = min(max(v, float(info.lb[i])), float(info.ub[i]))
        x_hat[coord] = v
    fs_index = info.index_of()
    for d in inst.load_techs:
        if d.mandate is None:
            continue
        sites = [("xD", b.id, d.id) for b in inst.buses]
        total = sum(x_hat[c] for c in sites)
        order = sorted(sites, key=lambda c: (d.fixed_cost, c[1]))
        pos = 0
        while total < d.mandate.min_units - 1e-9 and pos < len(order):
            coord = order[pos]
            room = float(info.ub[fs_index[coord]]) - x_hat[coord]
            add = min(room, d.mandate.min_units - total)
            if not keep_fractional:
                add = math.floor(add + 1e-9) if add >= 1.0 else 0.0
            x_hat[coord] += add
            total += add
            pos += 1
        if d.mandate.equality:
            for coord in reversed(order):
                if total <= d.mandate.min_units + 1e-9:
                    break
                trim = min(x_hat[coord], total - d.mandate.min_units)
                if not keep_fractional:
                    trim = math.floor(trim + 1e-9)
                x_hat[coord] -= trim
                total -= trim
    return x_hat


def check_first_stage_candidate(inst: PlanningInstance, info: FirstStageInfo,
                                x_hat: Mapping[Coord, float],
                                require_integral: bool = True) -> None:
    """Raise PHAError unless the candidate satisfies first-stage-only constraints."""
    fs_index = info.index_of()
    for coord in info.coords:
        if coord not in x_hat:
            raise PHAError(f"candidate misses first-stage coordinate {coord!r}")
        i = fs_index[coord]
        v = float(x_hat[coord])
        if v < info.lb[i] - 1e-6 or v > info.ub[i] + 1e-6:
            raise PHAError(f"candidate value {v!r} for {coord!r} violates its bounds")
        if require_integral and info.integer[i] and abs(v - round(v)) > 1e-6:
            raise PHAError(f"candidate value {v!r} for {coord!r} must be integral")
    for d in inst.load_techs:
        if d.mandate is None:
            continue
        total = sum(float(x_hat[("xD", b.id, d.id)]) for b in inst.buses)
        if total < d.mandate.min_units - 1e-6 or \
                (d.mandate.equality and abs(total - d.mandate.min_units) > 1e-6):
            raise PHAError(f"candidate violates the mandate on load tech '{d.id}'")


# ---------------------------------------------------------------------------
# Fix-and-iterate upper bounding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixAndIterateResult:
    accepted: bool
    upper_bound: float | None
    sigma_bar: dict[str, float]
    lam: dict[str, float]
    iterations: int
    lam_step_norms: tuple[float, ...]  # max |lam_{j+1} - lam_j| per iteration
    scenario_values: dict | None  # scen_id -> (VariableIndex, primal vector)


def _recombine_iterates(inst, handles, iterates, probabilities):
    """Best convex recombination of stored per-scenario LP solutions.

    Solves a tiny master LP choosing one convex combination per scenario so
    that every expected slack is <= 0 at minimum multiplier-free cost. Each
    scenario's combination stays feasible for that scenario (its feasible set
    is convex), so a feasible master yields exactly feasible expected slacks.
    Returns ``(blend weights per scenario, objective)`` or None.
    """
    mb = ModelBuilder(name="fix-iterate-master")
    theta = {}
    n_iter = len(iterates)
    for scen_id in probabilities:
        for j in range(n_iter):
            theta[scen_id, j] = mb.add_var(
                f"th[{scen_id},{j}]", lb=0.0, ub=1.0,
                obj=probabilities[scen_id] * iterates[j]["op_cost"][scen_id])
    for scen_id in probabilities:
        mb.add_row(f"mix[{scen_id}]", [(theta[scen_id, j], 1.0) for j in range(n_iter)],
                   EQ, 1.0)
    for h in handles:
        coeffs = []
        for scen_id, pi in probabilities.items():
            for j in range(n_iter):
                coeffs.append((theta[scen_id, j],
                               pi * iterates[j]["sigma"][scen_id][h.handle]))
        mb.add_row(f"exp[{h.handle}]", coeffs, LE, 0.0)
    res = solve(mb.freeze(), SolverConfig(time_limit_s=60.0))
    if res.status != OPTIMAL:
        return None
    weights = {scen_id: np.array([res.x[theta[scen_id, j]] for j in range(n_iter)])
               for scen_id in probabilities}
    return weights, float(res.objective)


def fix_and_iterate_upper_bound(inst: PlanningInstance, x_hat: Mapping[Coord, float],
                                lam_start: Mapping[str, float], cfg: PHAConfig,
                                solver: SolverConfig | None = None) -> FixAndIterateResult:
    """Evaluate a first-stage candidate by per-scenario LPs with multiplier updates.

    All first-stage variables are fixed (integers are snapped), then ``k_fix``
    rounds of scenario LP solves update ``lam`` by projected subgradient steps
    (harmonically decayed when configured). The candidate is accepted when the
    best observed expected-slack violation is within ``eps_sigma``; the
    reported bound is investment plus expected operation cost at those primal
    solutions, with the multiplier penalty excluded.
    """
    solver = solver or SolverConfig()
    info = first_stage_info(inst)
    check_first_stage_candidate(inst, info, x_hat,
                                require_integral=not cfg.relax_integrality)
    handles = enumerate_expectation_constraints(inst)
    beta = _beta_scales(cfg, inst)
    lam = {h.handle: max(0.0, float(lam_start.get(h.handle, 0.0))) for h in handles}

    # one LP template per scenario with first stage pinned; objectives get the
    # current multipliers swapped in each round
    templates = []
    for scen in inst.scenarios:
        model, index = build_scenario_subproblem(
            inst, SubproblemSpec(scenario=scen.id, mode=LR, lam={}))
        assign = {index.column(c): float(x_hat[c]) for c in info.coords}
        lp = fix_variables(relax_integrality(model), assign)
        sigma_cols = {h.handle: index.column(("sigma", h.handle, scen.id)) for h in handles}
        templates.append((scen, lp, index, sigma_cols))

    probabilities = {s.id: s.probability for s in inst.scenarios}
    best_viol = math.inf
    best_payload = None
    iterates: list[dict] = []
    step_norms: list[float] = []
    iterations = 0
    for j in range(cfg.k_fix):
        iterations = j + 1
        sigma_acc = {h.handle: 0.0 for h in handles}
        values = {}
        record = {"sigma": {}, "op_cost": {}, "x": {}}
        for scen, lp, index, sigma_cols in templates:
            obj = lp.obj.copy()
            for handle, col in sigma_cols.items():
                obj[col] = lam[handle]
            res = solve(lp.with_objective(obj, lp.obj_offset), solver)
            if res.status != OPTIMAL:
                raise PHAError(
                    f"fixed-stage LP for scenario '{scen.id}' ended '{res.status}'")
            values[scen.id] = (index, res.x)
            sigma = {handle: float(res.x[col]) for handle, col in sigma_cols.items()}
            for handle, val in sigma.items():
                sigma_acc[handle] += scen.probability * val
            reader = lambda coord, idx=index, xx=res.x: float(xx[idx.column(coord)])
            record["sigma"][scen.id] = sigma
            record["op_cost"][scen.id] = operation_cost_of(inst, scen.id, reader).total
            record["x"][scen.id] = res.x
        iterates.append(record)
        viol = sigma_violation(sigma_acc)
        if viol < best_viol:
            best_viol = viol
            best_payload = (dict(sigma_acc), dict(lam), values)
        step = 1.0 / (1.0 + j) if cfg.fix_beta_decay else 1.0
        new_lam = {h: max(0.0, lam[h] + step * beta[h] * sigma_acc[h]) for h in lam}
        step_norms.append(max((abs(new_lam[h] - lam[h]) for h in lam), default=0.0))
        stable = step_norms[-1] == 0.0
        lam = new_lam
        if stable and viol <= 0.0:
            break

    invest = investment_cost(inst, x_hat).total
    # a convex recombination of the collected solutions usually reaches exact
    # expected-slack feasibility and the tightest cost the iterates support
    master = _recombine_iterates(inst, handles, iterates, probabilities)
    if master is not None:
        weights, op_cost = master
        blend_values = {}
        sigma_blend = {h.handle: 0.0 for h in handles}
        for scen, lp, index, sigma_cols in templates:
            xs = [it["x"][scen.id] for it in iterates]
            blended = sum(wj * xv for wj, xv in zip(weights[scen.id], xs))
            blend_values[scen.id] = (index, blended)
            for handle, col in sigma_cols.items():
                sigma_blend[handle] += scen.probability * float(blended[col])
        return FixAndIterateResult(
            accepted=True, upper_bound=invest + op_cost, sigma_bar=sigma_blend,
            lam=dict(lam), iterations=iterations, lam_step_norms=tuple(step_norms),
            scenario_values=blend_values)

    sigma_best, lam_best, values_best = best_payload
    accepted = best_viol <= cfg.eps_sigma
    upper = None
    if accepted:
        reader = lambda scen_id: (lambda coord: float(
            values_best[scen_id][1][values_best[scen_id][0].column(coord)]))
        upper = invest + expected_operation_cost(inst, reader).total
    return FixAndIterateResult(accepted=accepted, upper_bound=upper,
                               sigma_bar=sigma_best, lam=lam_best,
                               iterations=iterations,
                               lam_step_norms=tuple(step_norms),
                               scenario_values=values_best)


def exact_candidate_evaluation(inst: PlanningInstance, x_hat: Mapping[Coord, float],
                               solver: SolverConfig | None = None,
                               bands: Mapping[Coord, tuple[float, float]] | None = None):
    """Certify a candidate on the joint fixed-first-stage LP (hard expectations).

    Every first-stage coordinate is pinned to its ``x_hat`` value except those
    listed in ``bands``, which are boxed to the given interval instead (a
    trust region, typically the scenario disagreement band around the
    consensus). Either way the LP is a restriction of the extensive form, so
    its optimum is a valid upper bound. Returns ``(objective, index, primal)``
    or None when no feasible completion exists.
    """
    solver = solver or SolverConfig()
    bands = bands or {}
    model, index = build_extensive_form(inst)
    assign = {index.column(c): float(v) for c, v in x_hat.items() if c not in bands}
    lp = fix_variables(relax_integrality(model), assign)
    if bands:
        lp = restrict_bounds(lp, {index.column(c): b for c, b in bands.items()})
    res = solve(lp, solver)
    if res.status != OPTIMAL:
        return None
    return float(res.objective), index, res.x


# ---------------------------------------------------------------------------
# The main loop
# ---------------------------------------------------------------------------


def run_pha(inst: PlanningInstance, cfg: PHAConfig | None = None,
            solver: SolverConfig | None = None,
            collect_timing: bool = False) -> tuple[SolveReport, PHAState]:
    """Run the augmented progressive hedging loop and assemble a report.

    Terminates on (consensus AND expected-slack feasibility), on the relative
    bound gap falling below the threshold, or on the iteration cap. The
    report's solution is the best incumbent found; when no candidate was ever
    accepted the report says so instead of inventing one.
    """
    cfg = cfg or PHAConfig()
    solver = solver or SolverConfig()
    sub_solver = replace(solver, pwl_segments=cfg.pwl_segments)
    violations = validate_instance(inst)
    if violations:
        raise InvalidInstanceError(violations)

    info = first_stage_info(inst)
    handles = enumerate_expectation_constraints(inst)
    rho = _rho_vector(cfg, info)
    beta = _beta_scales(cfg, inst)
    probabilities = {s.id: s.probability for s in inst.scenarios}
    state = PHAState(coords=info.coords, mw_scale=info.mw_scale.copy(),
                     probabilities=probabilities)
    state.lam = {h.handle: max(0.0, float(cfg.lambda0.get(h.handle, 0.0))) for h in handles}
    state.w = {s.id: np.zeros(len(info.coords)) for s in inst.scenarios}
    rho_map = {c: float(rho[i]) for i, c in enumerate(info.coords)}

    trace: list[TraceRow] = []
    incumbent_eval = None  # (upper, x_hat, values or (index, x))
    t_start = time.perf_counter()

    def attempt_incumbent(iteration: int) -> None:
        nonlocal incumbent_eval
        x_hat = round_and_repair(inst, info, state.x_bar, cfg.round_threshold,
                                 keep_fractional=cfg.relax_integrality)
        try:
            check_first_stage_candidate(inst, info, x_hat,
                                        require_integral=not cfg.relax_integrality)
        except PHAError:
            return
        if cfg.exact_incumbent_eval:
            # continuous coordinates keep a trust region spanning the current
            # scenario disagreement, so near-consensus residue cannot push the
            # evaluation over a feasibility cliff; the LP stays a restriction
            # of the extensive form, hence a valid upper bound
            bands = {}
            for i, coord in enumerate(info.coords):
                if info.integer[i] and not cfg.relax_integrality:
                    continue
                spread = max(abs(float(state.x[s.id][i]) - float(state.x_bar[i]))
                             for s in inst.scenarios)
                center = float(state.x_bar[i])
                bands[coord] = (center - spread, center + spread)
            exact = exact_candidate_evaluation(inst, x_hat, solver, bands=bands)
            if exact is None:
                upper = None
                payload = None
            else:
                upper = exact[0]
                payload = ("exact", x_hat, exact)
        else:
            fix_res = fix_and_iterate_upper_bound(inst, x_hat, state.lam, cfg, solver)
            upper = fix_res.upper_bound if fix_res.accepted else None
            payload = ("decomposed", x_hat, fix_res)
        if upper is not None and (state.best_upper is None or upper < state.best_upper):
            state.best_upper = upper
            state.best_x_hat = dict(x_hat)
            incumbent_eval = payload
        state.bounds_history.append(BoundsRecord.make(iteration, state.best_lower, upper))

    termination = ""
    for k in range(cfg.max_iterations):
        if k == 0:
            specs = [SubproblemSpec(scenario=s.id, mode=LR, lam=state.lam)
                     for s in inst.scenarios]
        else:
            anchor = {c: float(state.x_bar[i]) for i, c in enumerate(info.coords)}
            specs = [SubproblemSpec(
                scenario=s.id, mode=PHA, lam=state.lam,
                w={c: float(state.w[s.id][i]) for i, c in enumerate(info.coords)},
                anchor=anchor, rho=rho_map) for s in inst.scenarios]
        solved = _solve_scenarios(inst, specs, sub_solver, cfg.workers,
                                  relax=cfg.relax_integrality)

        sigma_bar = {h.handle: 0.0 for h in handles}
        lb_candidate = 0.0
        expected_cost = 0.0
        for scen, (model, index, res) in zip(inst.scenarios, solved):
            xv = _first_stage_vector(info, index, res.x)
            state.x[scen.id] = xv
            for handle, val in _sigma_values(handles, index, res.x, scen.id).items():
                sigma_bar[handle] += scen.probability * val
            if k == 0:
                lb_candidate += scen.probability * _proven_lower(res)
            x_first = {c: float(xv[i]) for i, c in enumerate(info.coords)}
            reader = lambda _sid, idx=index, xx=res.x: (
                lambda coord: float(xx[idx.column(coord)]))
            cost = merge_costs(investment_cost(inst, x_first),
                               operation_cost_of(inst, scen.id, reader(scen.id)))
            expected_cost += scen.probability * cost.total
        state.expected_cost_history.append(expected_cost)
        state.x_bar = sum(probabilities[s.id] * state.x[s.id] for s in inst.scenarios)
        for s in inst.scenarios:
            state.w[s.id] = state.w[s.id] + rho * (state.x[s.id] - state.x_bar)
        _assert_weight_balance(state)
        state.sigma_bar = sigma_bar
        decay = 1.0
        if cfg.beta_decay_after is not None and k + 1 > cfg.beta_decay_after:
            decay = cfg.beta_decay_after / (k + 1.0)
        state.lam = {h: max(0.0, state.lam[h] + decay * beta[h] * sigma_bar[h])
                     for h in state.lam}
        state.iteration = k + 1

        if k == 0:
            state.best_lower = lb_candidate
        elif cfg.lb_interval > 0 and (k + 1) % cfg.lb_interval == 0:
            w_maps = {s.id: {c: float(state.w[s.id][i]) for i, c in enumerate(info.coords)}
                      for s in inst.scenarios}
            lb = lagrangian_lower_bound(inst, state.lam, w_maps, solver, cfg.workers,
                                        relax=cfg.relax_integrality)
            state.best_lower = lb if state.best_lower is None else max(state.best_lower, lb)

        metric = consensus_metric(state)
        state.metric_history.append(metric)
        viol = sigma_violation(sigma_bar)

        converged = metric < cfg.eps_consensus and viol < cfg.eps_sigma
        if (k + 1) in cfg.incumbent_schedule or converged or k + 1 == cfg.max_iterations:
            attempt_incumbent(k + 1)
        gap = None
        if state.best_lower is not None and state.best_upper is not None:
            gap = (state.best_upper - state.best_lower) / max(abs(state.best_upper), 1.0)
        trace.append(TraceRow(
            iteration=k + 1, consensus=metric, sigma_violation=viol,
            lower_bound=state.best_lower, upper_bound=state.best_upper,
            wall_time_s=(time.perf_counter() - t_start) if collect_timing else 0.0))

        if converged:
            termination = "consensus"
            break
        if gap is not None and gap < cfg.gap_threshold:
            termination = "bound_gap"
            break
    if not termination:
        termination = "max_iterations"
    state.termination = termination

    report = _assemble_report(inst, state, incumbent_eval, termination, trace)
    return report, state


def _assert_weight_balance(state: PHAState) -> None:
    total = sum(state.probabilities[s] * state.w[s] for s in state.w)
    scale = max(1.0, max((float(np.max(np.abs(state.w[s]))) for s in state.w), default=1.0))
    if float(np.max(np.abs(total))) > 1e-8 * scale:
        raise PHAError("weight balance sum_w pi_w w_w = 0 violated; engine bug")


def _assemble_report(inst, state: PHAState, incumbent_eval, termination,
                     trace) -> SolveReport:
    gap = None
    if state.best_lower is not None and state.best_upper is not None:
        gap = (state.best_upper - state.best_lower) / max(abs(state.best_upper), 1.0)
    if incumbent_eval is None:
        return SolveReport(
            instance_name=inst.name, method="pha", status=NO_INCUMBENT,
            objective=None, lower_bound=state.best_lower, upper_bound=None,
            gap=None, termination=termination, costs=None,
            trace=tuple(trace), sigma_bar=dict(state.sigma_bar))
    kind, x_hat, payload = incumbent_eval
    if kind == "exact":
        _, index, x = payload
        report = report_from_solution(
            inst, index, x, method="pha", status=FEASIBLE_WITH_GAP,
            objective=state.best_upper, lower_bound=state.best_lower,
            upper_bound=state.best_upper, gap=gap, termination=termination,
            trace=trace)
        return report
    fix_res: FixAndIterateResult = payload
    values = fix_res.scenario_values

    def reader(scen_id):
        index, x = values[scen_id]
        return lambda coord: float(x[index.column(coord)])

    costs = merge_costs(investment_cost(inst, x_hat),
                        expected_operation_cost(inst, reader))
    return SolveReport(
        instance_name=inst.name, method="pha", status=FEASIBLE_WITH_GAP,
        objective=state.best_upper, lower_bound=state.best_lower,
        upper_bound=state.best_upper, gap=gap, termination=termination,
        costs=costs,
        buildout=buildout_rows(inst, x_hat),
        reliability=reliability_rows(inst, x_hat, reader),
        policies=policy_rows(inst, x_hat, reader),
        trace=tuple(trace),
        sigma_bar=sigma_bar_of_solution(inst, x_hat, reader),
    )
