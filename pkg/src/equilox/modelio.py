"""Model file emit/parse: MPS (free and fixed form) and CPLEX-style LP text.

Both emitters are byte-deterministic for identical models: iteration follows
the model's insertion order and numbers are formatted with shortest
round-trip ``repr``. The fixed form aliases every row and column to an
8-character name (R0000001/C0000001) so the classic column layout holds; the
free form keeps the full bracketed names.

The parser reads back what the emitters produce (plus ordinary MPS files
using the same sections) and is the basis of the round-trip test that the
emitted constraint matrix is faithful.
"""

from __future__ import annotations

import math

from .models import BINARY, CONTINUOUS, ModelIR

INF = math.inf


def _num(x: float) -> str:
    value = float(x)
    if value == int(value) and abs(value) < 1e15:
        return repr(int(value))  # 1 instead of 1.0; shorter, same value
    return repr(value)


def _column_entries(model: ModelIR) -> dict[str, list[tuple[str, float]]]:
    """Per-variable (row, coefficient) lists in constraint insertion order."""
    out: dict[str, list[tuple[str, float]]] = {v: [] for v in model.variables}
    for con in model.constraints.values():
        for var, coef in con.terms:
            out[var].append((con.name, coef))
    return out


def _aliases(model: ModelIR) -> tuple[dict[str, str], dict[str, str]]:
    rows = {name: f"R{i + 1:07d}" for i, name in enumerate(model.constraints)}
    cols = {name: f"C{i + 1:07d}" for i, name in enumerate(model.variables)}
    return rows, cols


ROW_TYPE = {"<=": "L", ">=": "G", "==": "E"}
COMPARATOR = {"L": "<=", "G": ">=", "E": "=="}


def write_mps(model: ModelIR, form: str = "free") -> str:
    """Serialize to MPS text; ``form`` is ``free`` (full names) or ``fixed``."""
    if form not in ("free", "fixed"):
        raise ValueError(f"unknown MPS form {form!r}")
    if form == "fixed":
        row_name, col_name = _aliases(model)
    else:
        row_name = {name: name for name in model.constraints}
        col_name = {name: name for name in model.variables}

    def pad(token: str) -> str:
        return f"{token:<8}" if form == "fixed" else token

    lines: list[str] = [f"NAME          {model.name}"]
    lines.append("OBJSENSE")
    lines.append(f"    {'MAX' if model.sense == 'max' else 'MIN'}")
    lines.append("ROWS")
    lines.append(" N  OBJ")
    for con in model.constraints.values():
        lines.append(f" {ROW_TYPE[con.comparator]}  {row_name[con.name]}")

    lines.append("COLUMNS")
    entries = _column_entries(model)
    in_integer = False
    marker = 0
    for var in model.variables.values():
        wants_integer = var.kind == BINARY
        if wants_integer and not in_integer:
            marker += 1
            lines.append(
                f"    MARKER{marker:04d}  'MARKER'                 'INTORG'"
            )
            in_integer = True
        elif not wants_integer and in_integer:
            marker += 1
            lines.append(
                f"    MARKER{marker:04d}  'MARKER'                 'INTEND'"
            )
            in_integer = False
        name = pad(col_name[var.name])
        obj = model.objective.get(var.name, 0.0)
        if obj:
            lines.append(f"    {name}  {pad('OBJ')}  {_num(obj)}")
        for row, coef in entries[var.name]:
            lines.append(f"    {name}  {pad(row_name[row])}  {_num(coef)}")
    if in_integer:
        marker += 1
        lines.append(f"    MARKER{marker:04d}  'MARKER'                 'INTEND'")

    lines.append("RHS")
    for con in model.constraints.values():
        if con.rhs != 0.0:
            lines.append(
                f"    {pad('RHS')}  {pad(row_name[con.name])}  {_num(con.rhs)}"
            )

    lines.append("BOUNDS")
    for var in model.variables.values():
        name = pad(col_name[var.name])
        bnd = pad("BND")
        if var.lower == var.upper:
            lines.append(f" FX {bnd}  {name}  {_num(var.lower)}")
            continue
        if var.kind == BINARY:
            if var.lower == 0.0 and var.upper == 1.0:
                lines.append(f" BV {bnd}  {name}")
            else:
                lines.append(f" LI {bnd}  {name}  {_num(var.lower)}")
                lines.append(f" UI {bnd}  {name}  {_num(var.upper)}")
            continue
        if var.lower == -INF:
            lines.append(f" MI {bnd}  {name}")
        elif var.lower != 0.0:
            lines.append(f" LO {bnd}  {name}  {_num(var.lower)}")
        if var.upper != INF:
            lines.append(f" UP {bnd}  {name}  {_num(var.upper)}")

    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def mps_name_map(model: ModelIR) -> dict[str, str]:
    """Fixed-form alias -> original name, for rows and columns together."""
    rows, cols = _aliases(model)
    out = {alias: name for name, alias in rows.items()}
    out.update({alias: name for name, alias in cols.items()})
    out["OBJ"] = "OBJ"
    return out


def parse_mps(text: str) -> ModelIR:
    """Parse MPS text (free or fixed form) back into a ModelIR.

    Supports the sections the writer emits: NAME, OBJSENSE, ROWS, COLUMNS
    with integer markers, RHS, BOUNDS, ENDATA. Integer columns must end up
    binary (bounds within [0,1] or fixed); RANGES is not supported.
    """
    name = "parsed"
    sense = "min"  # MPS default when no OBJSENSE record
    obj_row: str | None = None
    row_types: dict[str, str] = {}
    row_order: list[str] = []
    col_order: list[str] = []
    col_terms: dict[str, list[tuple[str, float]]] = {}
    col_obj: dict[str, float] = {}
    col_integer: dict[str, bool] = {}
    rhs: dict[str, float] = {}
    bounds: dict[str, list[float | None]] = {}  # name -> [lower, upper]

    section = ""
    in_integer = False
    for raw in text.splitlines():
        if not raw.strip() or raw.startswith("*"):
            continue
        if not raw[0].isspace():
            tokens = raw.split()
            section = tokens[0].upper()
            if section == "NAME" and len(tokens) > 1:
                name = tokens[1]
            if section == "OBJSENSE" and len(tokens) > 1:
                sense = "max" if tokens[1].upper().startswith("MAX") else "min"
            if section == "ENDATA":
                break
            continue
        tokens = raw.split()
        if section == "OBJSENSE":
            sense = "max" if tokens[0].upper().startswith("MAX") else "min"
        elif section == "ROWS":
            rtype, rname = tokens[0].upper(), tokens[1]
            if rtype == "N":
                if obj_row is None:
                    obj_row = rname
            elif rtype in ("L", "G", "E"):
                row_types[rname] = rtype
                row_order.append(rname)
            else:
                raise ValueError(f"unsupported row type {rtype!r}")
        elif section == "COLUMNS":
            if "'MARKER'" in tokens:
                if "'INTORG'" in tokens:
                    in_integer = True
                elif "'INTEND'" in tokens:
                    in_integer = False
                continue
            col = tokens[0]
            if col not in col_terms:
                col_terms[col] = []
                col_order.append(col)
                col_integer[col] = in_integer
            pairs = tokens[1:]
            if len(pairs) % 2:
                raise ValueError(f"odd COLUMNS record: {raw!r}")
            for row, value in zip(pairs[::2], pairs[1::2]):
                coef = float(value)
                if row == obj_row:
                    col_obj[col] = col_obj.get(col, 0.0) + coef
                elif row in row_types:
                    col_terms[col].append((row, coef))
                else:
                    raise ValueError(f"unknown row {row!r} in COLUMNS")
        elif section == "RHS":
            pairs = tokens[1:]
            if len(pairs) % 2:
                raise ValueError(f"odd RHS record: {raw!r}")
            for row, value in zip(pairs[::2], pairs[1::2]):
                if row in row_types:
                    rhs[row] = float(value)
        elif section == "RANGES":
            raise ValueError("RANGES section not supported")
        elif section == "BOUNDS":
            btype = tokens[0].upper()
            col = tokens[2]
            if col not in col_terms:
                col_terms[col] = []
                col_order.append(col)
                col_integer[col] = False
            entry = bounds.setdefault(col, [None, None])
            value = float(tokens[3]) if len(tokens) > 3 else None
            if btype == "UP" or btype == "UI":
                entry[1] = value
            elif btype == "LO" or btype == "LI":
                entry[0] = value
            elif btype == "FX":
                entry[0] = entry[1] = value
            elif btype == "FR":
                entry[0], entry[1] = -INF, INF
            elif btype == "MI":
                entry[0] = -INF
            elif btype == "PL":
                entry[1] = INF
            elif btype == "BV":
                entry[0], entry[1] = 0.0, 1.0
            else:
                raise ValueError(f"unsupported bound type {btype!r}")
            if btype in ("UI", "LI", "BV"):
                col_integer[col] = True

    model = ModelIR(name, sense=sense)
    for col in col_order:
        lower, upper = bounds.get(col, [None, None])
        lo = 0.0 if lower is None else lower
        up = INF if upper is None else upper
        if col_integer[col]:
            if not (0.0 <= lo and up <= 1.0):
                raise ValueError(f"integer column {col!r} is not binary")
            model.add_variable(col, BINARY, lo, up)
        else:
            model.add_variable(col, CONTINUOUS, lo, up)
    terms_by_row: dict[str, list[tuple[str, float]]] = {r: [] for r in row_order}
    for col in col_order:
        for row, coef in col_terms[col]:
            terms_by_row[row].append((col, coef))
    for row in row_order:
        model.add_constraint(
            row, terms_by_row[row], COMPARATOR[row_types[row]], rhs.get(row, 0.0)
        )
    for col, coef in col_obj.items():
        model.add_objective_term(col, coef)
    model.meta["parsed_from"] = "mps"
    return model.freeze()


def _lp_terms(terms, first_var: str | None = None) -> str:
    """Render a linear expression; empty expressions use a zero coefficient."""
    if not terms:
        return f"0 {first_var}" if first_var else "0"
    parts: list[str] = []
    for i, (var, coef) in enumerate(terms):
        mag = _num(abs(coef))
        if i == 0:
            parts.append(f"{'-' if coef < 0 else ''}{mag} {var}")
        else:
            parts.append(f"{'-' if coef < 0 else '+'} {mag} {var}")
    return " ".join(parts)


def write_lp(model: ModelIR) -> str:
    """Serialize to CPLEX-style LP text (full names, one constraint per line)."""
    first_var = next(iter(model.variables), None)
    lines = [f"\\ {model.name}"]
    lines.append("Maximize" if model.sense == "max" else "Minimize")
    obj_terms = [(v, c) for v, c in model.objective.items()]
    lines.append(f" OBJ: {_lp_terms(obj_terms, first_var)}")
    lines.append("Subject To")
    op = {"<=": "<=", ">=": ">=", "==": "="}
    for con in model.constraints.values():
        lines.append(
            f" {con.name}: {_lp_terms(con.terms, first_var)} "
            f"{op[con.comparator]} {_num(con.rhs)}"
        )
    lines.append("Bounds")
    for var in model.variables.values():
        if var.lower == var.upper:
            lines.append(f" {var.name} = {_num(var.lower)}")
        elif var.kind == BINARY and var.lower == 0.0 and var.upper == 1.0:
            continue  # implied by the Binaries section
        elif var.upper == INF:
            if var.lower == -INF:
                lines.append(f" {var.name} free")
            elif var.lower != 0.0:
                lines.append(f" {var.name} >= {_num(var.lower)}")
        else:
            lo = "-inf" if var.lower == -INF else _num(var.lower)
            lines.append(f" {lo} <= {var.name} <= {_num(var.upper)}")
    binaries = model.binary_names()
    if binaries:
        lines.append("Binaries")
        for name in binaries:
            lines.append(f" {name}")
    lines.append("End")
    return "\n".join(lines) + "\n"
