"""LP-format (CPLEX-LP dialect) writer and parser.

The writer emits a deterministic file: objective terms in column order, one
constraint per line in row order, and a Bounds section listing every column
in order; the parser reconstructs the exact model (same column order, names
and coefficients) from such a file, which is what the subprocess solver
backend and the golden-file tests rely on.

Two dialect notes: a bare numeric term in the objective is read as a constant
offset, and quadratic objectives are not representable here (expand them to
their piecewise-linear form first).
"""

from __future__ import annotations

import re
from typing import Iterable, TextIO

from .canonical import (
    CanonicalModel,
    EQ,
    GE,
    INF,
    LE,
    ModelBuilder,
    ModelError,
)

_NUM_RE = re.compile(r"^[+-]?(\d+\.?\d*([eE][+-]?\d+)?|\.\d+([eE][+-]?\d+)?|inf)$")


def _fmt(value: float) -> str:
    if value == INF:
        return "1e+30"
    if value == -INF:
        return "-1e+30"
    if value == 0.0:
        return "0.0"  # canonicalize -0.0
    return repr(float(value))


def _terms(coeffs: Iterable[tuple[str, float]]) -> str:
    parts: list[str] = []
    for name, val in coeffs:
        if val >= 0:
            parts.append(f"+ {_fmt(val)} {name}")
        else:
            parts.append(f"- {_fmt(-val)} {name}")
    return " ".join(parts) if parts else "+ 0 dummy__"


def write_lp(model: CanonicalModel, fh: TextIO) -> None:
    """Write ``model`` to ``fh`` in deterministic LP format."""
    if model.quad:
        raise ModelError("LP files carry linear objectives only; "
                         "expand quadratic terms before writing")
    names = model.var_names
    fh.write(f"\\ {model.name}\n")
    fh.write("Minimize\n")
    obj_terms = [(names[i], float(c)) for i, c in enumerate(model.obj) if c]
    line = f" obj: {_terms(obj_terms)}"
    if model.obj_offset:
        line += f" + {_fmt(model.obj_offset)}" if model.obj_offset > 0 \
            else f" - {_fmt(-model.obj_offset)}"
    fh.write(line + "\n")
    fh.write("Subject To\n")
    sense_txt = {LE: "<=", EQ: "=", GE: ">="}
    for i in range(model.num_rows):
        coeffs = [(names[c], v) for c, v in model.row_coeffs(i)]
        fh.write(f" {model.row_names[i]}: {_terms(coeffs)} "
                 f"{sense_txt[int(model.row_sense[i])]} {_fmt(float(model.row_rhs[i]))}\n")
    fh.write("Bounds\n")
    for i, name in enumerate(names):
        lb, ub = float(model.var_lb[i]), float(model.var_ub[i])
        if lb == ub:
            fh.write(f" {name} = {_fmt(lb)}\n")
        elif lb == -INF and ub == INF:
            fh.write(f" {name} free\n")
        else:
            fh.write(f" {_fmt(lb)} <= {name} <= {_fmt(ub)}\n")
    integers = [names[i] for i in range(model.num_vars) if model.var_integer[i]]
    if integers:
        fh.write("Generals\n")
        for name in integers:
            fh.write(f" {name}\n")
    fh.write("End\n")


def write_lp_file(model: CanonicalModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_lp(model, fh)


class LpParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def _is_number(tok: str) -> bool:
    return bool(_NUM_RE.match(tok))


def _to_float(tok: str) -> float:
    t = tok.lower()
    if t in ("inf", "+inf", "1e+30", "1e30"):
        return INF
    if t in ("-inf", "-1e+30", "-1e30"):
        return -INF
    return float(tok)


_SECTIONS = {
    "minimize": "objective", "minimise": "objective", "min": "objective",
    "subject": "rows", "st": "rows", "s.t.": "rows", "such": "rows",
    "bounds": "bounds", "bound": "bounds",
    "generals": "generals", "general": "generals", "gen": "generals",
    "binaries": "binaries", "binary": "binaries", "bin": "binaries",
    "end": "end",
}


def _section_of(stripped: str) -> str | None:
    head = stripped.split()[0].lower() if stripped.split() else ""
    return _SECTIONS.get(head)


def _parse_expr(tokens: list[str], lineno: int):
    """Parse '+ 2.5 x - y + 3' into (coeff terms, constant)."""
    terms: list[tuple[str, float]] = []
    constant = 0.0
    sign = 1.0
    coef: float | None = None
    for tok in tokens:
        if tok == "+":
            if coef is not None:
                constant += sign * coef
                coef = None
            sign = 1.0
        elif tok == "-":
            if coef is not None:
                constant += sign * coef
                coef = None
            sign = -1.0
        elif _is_number(tok):
            coef = _to_float(tok) if coef is None else coef * _to_float(tok)
        else:
            terms.append((tok, sign * (1.0 if coef is None else coef)))
            sign, coef = 1.0, None
    if coef is not None:
        constant += sign * coef
    return terms, constant


def parse_lp(text: str) -> CanonicalModel:
    """Rebuild a CanonicalModel from LP text produced by :func:`write_lp`.

    Columns are created in Bounds-section order when present (the writer
    always lists every column there), otherwise in first-appearance order.
    """
    name = "model"
    section = None
    obj_tokens: list[str] = []
    row_specs: list[tuple[str, list[str], int]] = []
    bound_specs: list[tuple[list[str], int]] = []
    integer_names: list[str] = []
    binary_names: list[str] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("\\", 1)
        if len(line) > 1 and lineno == 1 and not line[0].strip():
            name = line[1].strip() or name
        line = line[0].rstrip()
        stripped = line.strip()
        if not stripped:
            continue
        sec = _section_of(stripped)
        if sec is not None and not raw.startswith(" "):
            section = sec
            if section == "end":
                break
            continue
        if section == "objective":
            obj_tokens.extend(_strip_label(stripped)[1])
        elif section == "rows":
            label, tokens = _strip_label(stripped)
            row_specs.append((label or f"c{len(row_specs)}", tokens, lineno))
        elif section == "bounds":
            # pad operators so foreign files without spaces still tokenize
            bound_specs.append((stripped.replace("<", " < ").replace(">", " > ")
                                .replace("=", " = ").split(), lineno))
        elif section == "generals":
            integer_names.extend(stripped.split())
        elif section == "binaries":
            binary_names.extend(stripped.split())
        elif section is None:
            raise LpParseError("content before any section header", lineno)

    columns: dict[str, int] = {}
    order: list[str] = []

    def col_of(tok: str) -> int | None:
        if tok == "dummy__":
            return None
        if tok not in columns:
            columns[tok] = len(order)
            order.append(tok)
        return columns[tok]

    # Bound lines define the canonical column order.
    parsed_bounds: list[tuple[str, float, float]] = []
    for tokens, lineno in bound_specs:
        tokens = [t for t in tokens if t]
        # normalize the '=' splits done above back into comparison operators
        toks: list[str] = []
        i = 0
        while i < len(tokens):
            if tokens[i] in ("<", ">") and i + 1 < len(tokens) and tokens[i + 1] == "=":
                toks.append(tokens[i] + "=")
                i += 2
            else:
                toks.append(tokens[i])
                i += 1
        if len(toks) == 2 and toks[1].lower() == "free":
            parsed_bounds.append((toks[0], -INF, INF))
        elif len(toks) == 3 and toks[1] == "=":
            parsed_bounds.append((toks[0], _to_float(toks[2]), _to_float(toks[2])))
        elif len(toks) == 3 and toks[1] == "<=":
            parsed_bounds.append((toks[0], 0.0, _to_float(toks[2])))
        elif len(toks) == 3 and toks[1] == ">=":
            parsed_bounds.append((toks[0], _to_float(toks[2]), INF))
        elif len(toks) == 5 and toks[1] == "<=" and toks[3] == "<=":
            parsed_bounds.append((toks[2], _to_float(toks[0]), _to_float(toks[4])))
        else:
            raise LpParseError(f"unrecognized bound line: {' '.join(toks)}", lineno)
    for vname, _, _ in parsed_bounds:
        if vname == "dummy__":
            raise LpParseError("'dummy__' is reserved for empty expressions")
        col_of(vname)

    obj_terms, offset = _parse_expr(obj_tokens, 0)
    for vname, _ in obj_terms:
        col_of(vname)

    rows = []
    for label, tokens, lineno in row_specs:
        sense, pivot = None, None
        for i, tok in enumerate(tokens):
            if tok in ("<=", ">=", "=", "<", ">"):
                sense = {"<=": LE, "<": LE, ">=": GE, ">": GE, "=": EQ}[tok]
                pivot = i
                break
        if sense is None:
            raise LpParseError(f"constraint '{label}' has no comparison", lineno)
        lhs, lhs_const = _parse_expr(tokens[:pivot], lineno)
        rhs_terms, rhs_const = _parse_expr(tokens[pivot + 1:], lineno)
        if rhs_terms:
            raise LpParseError(f"constraint '{label}' has variables on the right side", lineno)
        for vname, _ in lhs:
            col_of(vname)
        rows.append((label, lhs, sense, rhs_const - lhs_const))

    mb = ModelBuilder(name=name)
    bound_map = {vname: (lb, ub) for vname, lb, ub in parsed_bounds}
    int_set = set(integer_names)
    bin_set = set(binary_names)
    for vname in order:
        lb, ub = bound_map.get(vname, (0.0, INF))
        if vname in bin_set:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        mb.add_var(vname, lb=lb, ub=ub, integer=vname in int_set or vname in bin_set)
    for vname, coef in obj_terms:
        if vname == "dummy__":
            continue
        mb.add_obj(columns[vname], coef)
    mb.add_obj_offset(offset)
    for label, lhs, sense, rhs in rows:
        coeffs = [(columns[v], c) for v, c in lhs if v != "dummy__"]
        mb.add_row(label, coeffs, sense, rhs)
    return mb.freeze()


def parse_lp_file(path) -> CanonicalModel:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_lp(fh.read())


def _strip_label(stripped: str) -> tuple[str | None, list[str]]:
    if ":" in stripped:
        label, rest = stripped.split(":", 1)
        return label.strip(), rest.split()
    return None, stripped.split()
