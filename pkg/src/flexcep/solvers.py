"""Uniform solve interface over interchangeable LP/MILP backends.

Two backends share one contract: an in-process backend on scipy's HiGHS
bindings, and a subprocess backend that writes the model as an LP file,
invokes an external solver binary and parses its solution file. The binary
defaults to this package's own ``flexcep-lpsolve`` shim (run as
``python -m flexcep.lpsolve``) and can be overridden per config or with the
``FLEXCEP_LP_SOLVER`` environment variable.

Diagonal quadratic objective terms are linearized here: backends receive a
piecewise-linear outer approximation (tangent cuts on an epigraph variable,
``pwl_segments`` per term), and the reported objective is always re-evaluated
against the original model so it is exact for the returned point.
"""

from __future__ import annotations

import os
import shlex
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .canonical import (
    EQ,
    FEASIBLE_WITH_GAP,
    GE,
    INF,
    INFEASIBLE,
    LE,
    LIMIT_REACHED,
    OPTIMAL,
    UNBOUNDED,
    CanonicalModel,
    ModelBuilder,
    ModelError,
    SolveResult,
    objective_value,
)
from . import lpfile

INPROC = "inproc"
SUBPROCESS = "subprocess"

SOLVER_BIN_ENV = "FLEXCEP_LP_SOLVER"


class BackendError(RuntimeError):
    """Base class for solver backend failures."""


class BackendUnavailableError(BackendError):
    pass


class BackendCrashError(BackendError):
    pass


class ModelWriteError(BackendError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    backend: str = INPROC
    time_limit_s: float = 300.0
    mip_gap: float = 0.0
    threads: int = 1  # accepted for config compatibility; scipy solves single-threaded
    seed: int = 0
    solver_bin: str | None = None
    pwl_segments: int = 8

    def __post_init__(self):
        if self.time_limit_s <= 0:
            raise ValueError("time limit must be > 0")
        if not (0.0 <= self.mip_gap < 1.0):
            raise ValueError("mip gap target must lie in [0, 1)")


# ---------------------------------------------------------------------------
# Quadratic linearization
# ---------------------------------------------------------------------------


def _tangent_points(lo: float, hi: float, anchor: float, segments: int,
                    is_integer: bool) -> list[float]:
    """Cut locations for one quadratic term: the box ends plus a geometric
    grid around the anchor, where the proximal minimum will land."""
    if hi - lo < 1e-12:
        return [lo]
    if is_integer and hi - lo <= segments:
        return [float(v) for v in np.arange(np.ceil(lo), np.floor(hi) + 1.0)]
    span = hi - lo
    a = min(max(anchor, lo), hi)
    pts = {lo, hi, a}
    for j in range(1, max(1, segments // 2) + 1):
        off = span * 2.0 ** (-j)
        pts.add(min(hi, a + off))
        pts.add(max(lo, a - off))
    return sorted(pts)


def expand_quadratic(model: CanonicalModel, segments: int = 8) -> CanonicalModel:
    """Outer-approximate each ``coef*(x-a)^2`` term with tangent cuts.

    Adds one epigraph column per term plus one cut row per tangent point.
    Tangents sit at the box ends and on a geometric grid around the anchor
    (exact integer lattices for small integer ranges), so the approximation is
    tight where the term is near its minimum. It underestimates the true
    quadratic everywhere, is exact at the tangent points, and requires the
    column's box to be finite.
    """
    if not model.quad:
        return model
    mb = ModelBuilder(name=model.name)
    for i in range(model.num_vars):
        mb.add_var(model.var_names[i], lb=float(model.var_lb[i]), ub=float(model.var_ub[i]),
                   integer=bool(model.var_integer[i]), obj=float(model.obj[i]))
    mb.add_obj_offset(model.obj_offset)
    for i in range(model.num_rows):
        mb.add_row(model.row_names[i], model.row_coeffs(i),
                   int(model.row_sense[i]), float(model.row_rhs[i]))
    for j, term in enumerate(model.quad):
        lo, hi = float(model.var_lb[term.col]), float(model.var_ub[term.col])
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ModelError(
                f"quadratic term on unbounded column '{model.var_names[term.col]}' "
                "cannot be linearized")
        z = mb.add_var(f"qz{j}__", lb=0.0, ub=INF, obj=term.coef)
        points = _tangent_points(lo, hi, term.anchor, segments,
                                 bool(model.var_integer[term.col]))
        for n, p in enumerate(points):
            slope = 2.0 * (p - term.anchor)
            # z >= (x-a)^2 linearized at x=p: z - slope*x >= a^2 - p^2
            mb.add_row(f"qcut{j}_{n}__", [(z, 1.0), (term.col, -slope)],
                       GE, term.anchor * term.anchor - p * p)
    return mb.freeze()


# ---------------------------------------------------------------------------
# In-process backend (scipy / HiGHS)
# ---------------------------------------------------------------------------


def _row_bounds(model: CanonicalModel) -> tuple[np.ndarray, np.ndarray]:
    lo = np.where(model.row_sense == GE, model.row_rhs, -np.inf)
    lo = np.where(model.row_sense == EQ, model.row_rhs, lo)
    hi = np.where(model.row_sense == LE, model.row_rhs, np.inf)
    hi = np.where(model.row_sense == EQ, model.row_rhs, hi)
    return lo, hi


def _solve_inproc_milp(model: CanonicalModel, cfg: SolverConfig) -> SolveResult:
    t0 = time.perf_counter()
    kwargs = {}
    if model.num_rows:
        lo, hi = _row_bounds(model)
        kwargs["constraints"] = LinearConstraint(model.matrix(), lo, hi)
    res = milp(
        c=model.obj,
        integrality=model.var_integer.astype(np.uint8),
        bounds=Bounds(model.var_lb, model.var_ub),
        options={"time_limit": cfg.time_limit_s, "mip_rel_gap": cfg.mip_gap,
                 "presolve": True},
        **kwargs,
    )
    wall = time.perf_counter() - t0
    gap = getattr(res, "mip_gap", None)
    if res.status == 0:
        status = OPTIMAL if not gap or gap <= 1e-9 else FEASIBLE_WITH_GAP
    elif res.status == 1:
        status = FEASIBLE_WITH_GAP if res.x is not None else LIMIT_REACHED
    elif res.status == 2:
        return SolveResult(status=INFEASIBLE, wall_time_s=wall, message=res.message)
    elif res.status == 3:
        return SolveResult(status=UNBOUNDED, wall_time_s=wall, message=res.message)
    else:
        raise BackendCrashError(f"scipy.milp failed: {res.message}")
    x = np.asarray(res.x, dtype=float) if res.x is not None else None
    objective = float(res.fun) + model.obj_offset if res.fun is not None else None
    return SolveResult(status=status, objective=objective, x=x,
                       mip_gap=float(gap) if gap is not None else None,
                       wall_time_s=wall, message=res.message)


def _solve_inproc_lp_duals(model: CanonicalModel, cfg: SolverConfig) -> SolveResult:
    t0 = time.perf_counter()
    n = model.num_vars
    eq_rows = [i for i in range(model.num_rows) if model.row_sense[i] == EQ]
    ineq_rows = [i for i in range(model.num_rows) if model.row_sense[i] != EQ]
    mat = model.matrix()

    def take(rows, flip_ge):
        if not rows:
            return None, None
        sub = mat[rows]
        rhs = model.row_rhs[rows]
        if flip_ge:
            signs = np.where(model.row_sense[rows] == GE, -1.0, 1.0)
            sub = sparse.diags(signs) @ sub
            rhs = signs * rhs
        return sparse.csr_matrix(sub), rhs

    a_ub, b_ub = take(ineq_rows, flip_ge=True)
    a_eq, b_eq = take(eq_rows, flip_ge=False)
    bounds = [(lb if lb != -INF else None, ub if ub != INF else None)
              for lb, ub in zip(model.var_lb, model.var_ub)]
    res = linprog(c=model.obj, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=bounds, method="highs",
                  options={"time_limit": cfg.time_limit_s, "presolve": True})
    wall = time.perf_counter() - t0
    if res.status == 2:
        return SolveResult(status=INFEASIBLE, wall_time_s=wall, message=res.message)
    if res.status == 3:
        return SolveResult(status=UNBOUNDED, wall_time_s=wall, message=res.message)
    if res.status != 0:
        raise BackendCrashError(f"scipy.linprog failed: {res.message}")
    duals = np.zeros(model.num_rows)
    if ineq_rows:
        marg = np.asarray(res.ineqlin.marginals, dtype=float)
        for pos, i in enumerate(ineq_rows):
            duals[i] = -marg[pos] if model.row_sense[i] == GE else marg[pos]
    if eq_rows:
        marg = np.asarray(res.eqlin.marginals, dtype=float)
        for pos, i in enumerate(eq_rows):
            duals[i] = marg[pos]
    return SolveResult(
        status=OPTIMAL,
        objective=float(res.fun) + model.obj_offset,
        x=np.asarray(res.x, dtype=float),
        duals=duals,
        reduced_lb=np.asarray(res.lower.marginals, dtype=float),
        reduced_ub=np.asarray(res.upper.marginals, dtype=float),
        wall_time_s=wall,
        message=res.message,
    )


# ---------------------------------------------------------------------------
# Subprocess backend
# ---------------------------------------------------------------------------


def _solver_command(cfg: SolverConfig) -> list[str]:
    if cfg.solver_bin:
        return shlex.split(cfg.solver_bin)
    env = os.environ.get(SOLVER_BIN_ENV)
    if env:
        return shlex.split(env)
    return [sys.executable, "-m", "flexcep.lpsolve"]


def _solve_subprocess(model: CanonicalModel, cfg: SolverConfig) -> SolveResult:
    t0 = time.perf_counter()
    with tempfile.TemporaryDirectory(prefix="flexcep_solve_") as tmp:
        lp_path = os.path.join(tmp, "model.lp")
        sol_path = os.path.join(tmp, "model.sol")
        try:
            lpfile.write_lp_file(model, lp_path)
        except OSError as exc:
            raise ModelWriteError(f"cannot write LP file: {exc}") from exc
        cmd = _solver_command(cfg) + [lp_path, sol_path,
                                      "--time-limit", repr(cfg.time_limit_s),
                                      "--mip-gap", repr(cfg.mip_gap)]
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True,
                                  timeout=cfg.time_limit_s * 3 + 60)
        except FileNotFoundError as exc:
            raise BackendUnavailableError(f"solver binary not found: {cmd[0]}") from exc
        except subprocess.TimeoutExpired as exc:
            raise BackendCrashError(f"solver subprocess timed out: {cmd[0]}") from exc
        if proc.returncode != 0:
            raise BackendCrashError(
                f"solver subprocess failed (exit {proc.returncode}): "
                f"{proc.stderr.strip() or proc.stdout.strip()}")
        try:
            with open(sol_path, "r", encoding="utf-8") as fh:
                parsed = _parse_solution_file(fh.read())
        except OSError as exc:
            raise BackendCrashError(f"solver wrote no solution file: {exc}") from exc
    wall = time.perf_counter() - t0
    status, objective, gap, col_values, row_duals = parsed
    x = duals = None
    if col_values is not None:
        name_to_col = {name: i for i, name in enumerate(model.var_names)}
        x = np.zeros(model.num_vars)
        for name, val in col_values.items():
            if name not in name_to_col:
                raise BackendCrashError(f"solution references unknown column '{name}'")
            x[name_to_col[name]] = val
    if row_duals is not None:
        name_to_row = {name: i for i, name in enumerate(model.row_names)}
        duals = np.zeros(model.num_rows)
        for name, val in row_duals.items():
            if name not in name_to_row:
                raise BackendCrashError(f"solution references unknown row '{name}'")
            duals[name_to_row[name]] = val
    return SolveResult(status=status, objective=objective, x=x, mip_gap=gap,
                       duals=duals, wall_time_s=wall)


def _parse_solution_file(text: str):
    status = None
    objective = None
    gap = None
    col_values = None
    row_duals = None
    lines = iter(text.splitlines())
    for line in lines:
        parts = line.split()
        if not parts:
            continue
        key = parts[0].lower()
        if key == "status":
            status = parts[1]
        elif key == "objective":
            objective = float(parts[1])
        elif key == "mip_gap":
            gap = float(parts[1])
        elif key == "columns":
            col_values = {}
            for _ in range(int(parts[1])):
                name, val = next(lines).split()
                col_values[name] = float(val)
        elif key == "rows":
            row_duals = {}
            for _ in range(int(parts[1])):
                name, val = next(lines).split()
                row_duals[name] = float(val)
        elif key == "end":
            break
    if status is None:
        raise BackendCrashError("solution file has no status line")
    known = {OPTIMAL, FEASIBLE_WITH_GAP, INFEASIBLE, UNBOUNDED, LIMIT_REACHED}
    if status not in known:
        raise BackendCrashError(f"solution file has unknown status '{status}'")
    return status, objective, gap, col_values, row_duals


# ---------------------------------------------------------------------------
# Public interface
# ---------------------------------------------------------------------------


def solve(model: CanonicalModel, cfg: SolverConfig | None = None) -> SolveResult:
    """Solve an LP/MILP; quadratic terms are linearized transparently.

    The reported objective is re-evaluated against ``model`` at the returned
    point, so it always matches ``objective_value(model, result.x)``.
    """
    cfg = cfg or SolverConfig()
    model.check()
    solved = expand_quadratic(model, cfg.pwl_segments) if model.quad else model
    if cfg.backend == INPROC:
        res = _solve_inproc_milp(solved, cfg)
    elif cfg.backend == SUBPROCESS:
        res = _solve_subprocess(solved, cfg)
    else:
        raise BackendUnavailableError(f"unknown backend '{cfg.backend}'")
    if model.quad and res.x is not None:
        x = res.x[: model.num_vars].copy()
        res = replace(res, x=x, objective=objective_value(model, x), duals=None,
                      reduced_lb=None, reduced_ub=None)
    return res


def solve_lp_with_duals(model: CanonicalModel, cfg: SolverConfig | None = None,
                        verify: bool = True) -> SolveResult:
    """Solve a pure LP and return row duals (objective sensitivities to rhs).

    Raises ModelError when integer columns are present. With ``verify=True``
    an optimal solution is checked for complementary slackness within 1e-5.
    """
    cfg = cfg or SolverConfig()
    model.check()
    if model.var_integer.any():
        raise ModelError("dual values are defined for LPs only; relax integrality first")
    if model.quad:
        raise ModelError("dual solves support linear objectives only")
    if cfg.backend == SUBPROCESS:
        res = _solve_subprocess(model, cfg)
        if res.status == OPTIMAL and res.duals is None:
            raise BackendCrashError("subprocess solver returned no duals for an LP")
    else:
        res = _solve_inproc_lp_duals(model, cfg)
    if verify and res.status == OPTIMAL:
        verify_complementary_slackness(model, res)
    return res


def verify_complementary_slackness(model: CanonicalModel, res: SolveResult,
                                   tol: float = 1e-5) -> None:
    """Raise BackendError unless duals pass a complementary slackness check."""
    if res.x is None or res.duals is None:
        raise BackendError("verification needs both a primal and dual solution")
    ax = model.matrix() @ res.x
    for i in range(model.num_rows):
        sense = int(model.row_sense[i])
        if sense == EQ:
            continue
        slack = model.row_rhs[i] - ax[i] if sense == LE else ax[i] - model.row_rhs[i]
        scale = 1.0 + abs(float(model.row_rhs[i]))
        if abs(res.duals[i]) * max(slack, 0.0) > tol * scale * (1.0 + abs(res.duals[i])):
            raise BackendError(
                f"complementary slackness violated on row '{model.row_names[i]}': "
                f"dual={res.duals[i]!r} slack={slack!r}")
        # duals of <= rows must not tighten the objective upward and vice versa
        if sense == LE and res.duals[i] > tol:
            raise BackendError(f"row '{model.row_names[i]}' has a positive dual on <=")
        if sense == GE and res.duals[i] < -tol:
            raise BackendError(f"row '{model.row_names[i]}' has a negative dual on >=")


def dual_objective(model: CanonicalModel, res: SolveResult) -> float:
    """Dual objective value implied by the returned multipliers."""
    if res.duals is None:
        raise BackendError("no duals available")
    val = float(res.duals @ model.row_rhs) + model.obj_offset
    if res.reduced_lb is not None:
        lb = np.where(np.isfinite(model.var_lb), model.var_lb, 0.0)
        val += float(res.reduced_lb @ lb)
    if res.reduced_ub is not None:
        ub = np.where(np.isfinite(model.var_ub), model.var_ub, 0.0)
        val += float(res.reduced_ub @ ub)
    return val
