"""CPLEX-LP export/import and the plain-text solution format.

Keywords written: ``Minimize``/``Maximize``, ``Subject To``, ``Bounds``,
``Binaries``, ``End``; comment lines start with a backslash. Every variable
is listed in ``Bounds`` in index order so that :func:`read_lp` recovers the
variable table exactly. Feasibility models are written as ``Minimize`` with a
zero objective.

Solution files are line oriented::

    status Optimal
    objective 1.5
    bound 1.5
    x0 0.25
    d3 1

``objective`` and ``bound`` are optional; every other line is ``name value``.
"""

from __future__ import annotations

import math
import re
from pathlib import Path

from .model import LinExpr, MilpModel, ModelError

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]{0,254}$")
_TERM_RE = re.compile(r"([+-])\s*([0-9.eE+-]+|inf)\s+([A-Za-z_][A-Za-z0-9_.]*)")


class LpFormatError(ModelError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


def lp_names(model: MilpModel) -> list[str]:
    names, seen = [], set()
    for v in model.variables():
        name = model._vars[v.index].name
        if name is None or not _NAME_RE.match(name) or name in seen or name.lower() in _RESERVED:
            name = f"x{v.index}"
            while name in seen:
                name = "_" + name
        seen.add(name)
        names.append(name)
    return names


_RESERVED = {"st", "end", "bounds", "binaries", "binary", "bin", "free", "inf", "infinity",
             "minimize", "maximize", "subject", "to", "general", "generals"}


def _expr_str(expr: LinExpr, names: list[str]) -> str:
    parts = []
    for v, a in sorted(expr.terms.items(), key=lambda kv: kv[0].index):
        if a == 0.0:
            continue
        parts.append(f"{'-' if a < 0 else '+'} {_fmt(abs(a))} {names[v.index]}")
    if not parts:
        return "0 " + names[0] if names else "0"
    return " ".join(parts)


def write_lp(model: MilpModel, path: str | Path | None = None) -> str:
    names = lp_names(model)
    sense = "Maximize" if model.objective_sense == "maximize" else "Minimize"
    lines = [f"\\ {model.name}", f"\\ objective_sense {model.objective_sense}"]
    if model.objective.constant:
        lines.append(f"\\ objective_constant {_fmt(model.objective.constant)}")
    lines += [sense, f" obj: {_expr_str(model.objective, names)}", "Subject To"]
    for r, con in enumerate(model.constraints):
        op = {"<=": "<=", ">=": ">=", "==": "="}[con.sense]
        lines.append(f" c{r}: {_expr_str(con.expr, names)} {op} {_fmt(con.rhs)}")
    lines.append("Bounds")
    binaries = []
    for v in model.variables():
        lb, ub = model.bounds(v)
        name = names[v.index]
        if model.is_binary(v):
            binaries.append(name)
        if lb == ub:
            lines.append(f" {name} = {_fmt(lb)}")
        elif math.isinf(lb) and math.isinf(ub):
            lines.append(f" {name} free")
        else:
            lo = "-inf" if math.isinf(lb) else _fmt(lb)
            hi = "+inf" if math.isinf(ub) else _fmt(ub)
            lines.append(f" {lo} <= {name} <= {hi}")
    if binaries:
        lines.append("Binaries")
        lines += [f" {b}" for b in binaries]
    lines.append("End")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def _parse_float(tok: str) -> float:
    t = tok.strip().lower()
    if t in ("inf", "+inf", "infinity", "+infinity"):
        return math.inf
    if t in ("-inf", "-infinity"):
        return -math.inf
    return float(t)


def _parse_expr(text: str, index: dict[str, int]) -> dict[int, float]:
    text = text.strip()
    if not text.startswith(("+", "-")):
        text = "+ " + text
    terms: dict[int, float] = {}
    pos = 0
    for mt in _TERM_RE.finditer(text):
        if text[pos:mt.start()].strip():
            raise LpFormatError(f"cannot parse expression near {text[pos:mt.start()]!r}")
        pos = mt.end()
        coef = _parse_float(mt.group(2)) * (-1.0 if mt.group(1) == "-" else 1.0)
        name = mt.group(3)
        if name not in index:
            raise LpFormatError(f"unknown variable {name!r}")
        terms[index[name]] = terms.get(index[name], 0.0) + coef
    rest = text[pos:].strip()
    if rest and rest not in ("+ 0", "0"):
        raise LpFormatError(f"trailing text in expression: {rest!r}")
    return terms


def read_lp(text_or_path: str | Path) -> MilpModel:
    """Parse the subset of CPLEX-LP written by :func:`write_lp`."""
    text = str(text_or_path)
    if "\n" not in text and Path(text).exists():
        text = Path(text).read_text()
    lines = [ln.rstrip() for ln in text.splitlines()]
    obj_sense = None
    obj_const = 0.0
    name = "milp"
    sections: dict[str, list[str]] = {"obj": [], "st": [], "bounds": [], "bin": []}
    cur = None
    for ln in lines:
        s = ln.strip()
        if not s:
            continue
        if s.startswith("\\"):
            body = s[1:].strip()
            if body.startswith("objective_sense"):
                obj_sense = body.split()[1]
            elif body.startswith("objective_constant"):
                obj_const = float(body.split()[1])
            elif cur is None and obj_sense is None:
                name = body or name
            continue
        low = s.lower()
        if low in ("minimize", "maximize"):
            cur = "obj"
            obj_sense = obj_sense or ("maximize" if low == "maximize" else "minimize")
        elif low in ("subject to", "st", "s.t."):
            cur = "st"
        elif low == "bounds":
            cur = "bounds"
        elif low in ("binaries", "binary", "bin"):
            cur = "bin"
        elif low == "end":
            cur = None
        elif cur is None:
            raise LpFormatError(f"content outside a section: {s!r}")
        else:
            sections[cur].append(s)
    model = MilpModel(name=name)
    index: dict[str, int] = {}
    binset = {b.strip() for b in sections["bin"]}
    for s in sections["bounds"]:
        m_free = re.match(r"^(\S+)\s+free$", s)
        m_fix = re.match(r"^(\S+)\s*=\s*(\S+)$", s)
        m_rng = re.match(r"^(\S+)\s*<=\s*(\S+)\s*<=\s*(\S+)$", s)
        if m_free:
            nm, lb, ub = m_free.group(1), -math.inf, math.inf
        elif m_fix:
            nm = m_fix.group(1)
            lb = ub = _parse_float(m_fix.group(2))
        elif m_rng:
            nm, lb, ub = m_rng.group(2), _parse_float(m_rng.group(1)), _parse_float(m_rng.group(3))
        else:
            raise LpFormatError(f"cannot parse bound line {s!r}")
        if nm in index:
            raise LpFormatError(f"variable {nm!r} bounded twice")
        if nm in binset:
            v = model.add_binary(nm)
            model.set_bounds(v, lb, ub)
        else:
            v = model.add_var(lb, ub, nm)
        index[nm] = v.index
    vars_ = model.variables()
    obj_text = " ".join(sections["obj"])
    obj_text = obj_text.split(":", 1)[1] if ":" in obj_text else obj_text
    terms = _parse_expr(obj_text, index)
    expr = LinExpr({vars_[k]: a for k, a in terms.items()}, obj_const)
    model.set_objective(expr, obj_sense or "minimize")
    for s in sections["st"]:
        label, _, body = s.partition(":") if ":" in s else ("", "", s)
        m_con = re.match(r"^(.*?)(<=|>=|=)\s*(\S+)$", body.strip())
        if not m_con:
            raise LpFormatError(f"cannot parse constraint {s!r}")
        terms = _parse_expr(m_con.group(1), index)
        sense = {"<=": "<=", ">=": ">=", "=": "=="}[m_con.group(2)]
        model.add_constraint(LinExpr({vars_[k]: a for k, a in terms.items()}), sense,
                             _parse_float(m_con.group(3)), label.strip() or None)
    return model


# -- solution files -------------------------------------------------------------

def write_solution(path: str | Path, status: str, values: dict[str, float],
                   objective: float | None = None, bound: float | None = None) -> None:
    lines = [f"status {status}"]
    if objective is not None:
        lines.append(f"objective {_fmt(objective)}")
    if bound is not None:
        lines.append(f"bound {_fmt(bound)}")
    lines += [f"{k} {_fmt(v)}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_solution(path: str | Path) -> tuple[str, float | None, float | None, dict[str, float]]:
    status = None
    objective = bound = None
    values: dict[str, float] = {}
    for ln in Path(path).read_text().splitlines():
        parts = ln.split()
        if not parts:
            continue
        if len(parts) != 2:
            raise LpFormatError(f"bad solution line {ln!r}")
        key, val = parts
        if key == "status":
            status = val
        elif key == "objective":
            objective = _parse_float(val)
        elif key == "bound":
            bound = _parse_float(val)
        else:
            values[key] = _parse_float(val)
    if status is None:
        raise LpFormatError(f"solution file {path} has no status line")
    return status, objective, bound, values
