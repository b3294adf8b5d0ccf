"""Problem file loader.

The format is a line-oriented sectioned text file:

    # comment
    [space]
    t  = time  in [0, 1]          # exactly one time variable, box [0, T]
    x1 = state in [-1, 1]
    u  = control in [-20, 20]     # optional controls / lifts
    l1 = lift  in [0, 2]

    [mode.<name>]                 # one section per mode, file order kept
    x1' = <expr>                  # one line per state
    lagrangian = <expr>
    ineq = <expr>                 # optional, repeatable: extra mode set
    eq = <expr>

    [set]                         # shared semialgebraic domain (optional)
    ineq = <expr>
    eq = <expr>

    [boundary]
    initial = point: x1 = 1, x2 = 1     | free | distribution
    terminal = point: x1 = 0, x2 = 0    | free
    horizon = fixed | free
    terminal_cost = <expr>              # optional Mayer term
    initial_ineq = <expr>               # optional, repeatable
    terminal_ineq = <expr>

    [initial_moments]             # only with 'initial = distribution'
    0 0 = 1.0                     # exponents over states = raw moment
    1 0 = 0.5

    [integral.<name>]             # optional, repeatable
    mode.<modename> = <expr>      # integrand per mode (omitted modes: 0)
    bound = 0.5
    sense = <=

Expressions use +, -, *, ^ (nonnegative integer powers), parentheses and
decimal literals over the declared variable names.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .poly import ParseError, Polynomial, VariableSpace, parse_polynomial
from .problem import (
    BoundarySpec,
    Distribution,
    FixedPoint,
    FreeBoundary,
    IntegralConstraint,
    ModeSpec,
    ProblemError,
    SemialgebraicSet,
    SwitchedProblem,
    validate,
)

_SECTION_RE = re.compile(r"^\[([A-Za-z0-9_.\-]+)\]$")
_SPACE_LINE_RE = re.compile(
    r"^(time|state|control|lift)\s+in\s+\[\s*([^,\]]+)\s*,\s*([^,\]]+)\s*\]$"
)


class FileFormatError(ProblemError):
    pass


@dataclass
class _Line:
    no: int
    key: str
    value: str


def _read_sections(text: str, origin: str) -> list[tuple[str, list[_Line]]]:
    sections: list[tuple[str, list[_Line]]] = []
    current: list[_Line] | None = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION_RE.match(line)
        if m:
            current = []
            sections.append((m.group(1), current))
            continue
        if current is None:
            raise FileFormatError(f"{origin}:{no}: content before any [section]")
        if "=" not in line:
            raise FileFormatError(f"{origin}:{no}: expected 'key = value'")
        key, value = line.split("=", 1)
        current.append(_Line(no, key.strip(), value.strip()))
    return sections


def _parse_number(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise FileFormatError(f"{where}: not a number: {text!r}") from None


def _parse_expr(text: str, space: VariableSpace, where: str) -> Polynomial:
    try:
        return parse_polynomial(text, space)
    except ParseError as exc:
        raise FileFormatError(f"{where}: {exc}") from None


def _parse_point(value: str, states, where: str) -> dict[str, float]:
    body = value.split(":", 1)
    if len(body) != 2:
        raise FileFormatError(f"{where}: expected 'point: x = v, ...'")
    values = {}
    for piece in body[1].split(","):
        piece = piece.strip()
        if not piece:
            continue
        if "=" not in piece:
            raise FileFormatError(f"{where}: expected 'name = value' in point")
        name, val = (s.strip() for s in piece.split("=", 1))
        if name not in states:
            raise FileFormatError(f"{where}: {name!r} is not a state variable")
        values[name] = _parse_number(val, where)
    missing = set(states) - set(values)
    if missing:
        raise FileFormatError(f"{where}: point misses states {sorted(missing)}")
    return values


def load_problem(path: str) -> SwitchedProblem:
    """Load, parse and validate a problem file."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_problem_text(text, origin=str(path))


def parse_problem_text(text: str, origin: str = "<string>") -> SwitchedProblem:
    sections = _read_sections(text, origin)
    index = {name: lines for name, lines in sections}
    if "space" not in index:
        raise FileFormatError(f"{origin}: missing [space] section")

    # ---- space -----------------------------------------------------------
    names, roles, box = [], [], {}
    for ln in index["space"]:
        where = f"{origin}:{ln.no} [space] {ln.key}"
        m = _SPACE_LINE_RE.match(ln.value)
        if not m:
            raise FileFormatError(f"{where}: expected '<role> in [lo, hi]'")
        role, lo, hi = m.group(1), _parse_number(m.group(2), where), _parse_number(m.group(3), where)
        names.append(ln.key)
        roles.append(role)
        box[ln.key] = (lo, hi)
    try:
        space = VariableSpace(tuple(names), tuple(roles))
    except Exception as exc:
        raise FileFormatError(f"{origin} [space]: {exc}") from None
    states = space.states
    controls = set(space.names_with_role("control"))

    # ---- modes -----------------------------------------------------------
    modes = []
    for sec_name, lines in sections:
        if not sec_name.startswith("mode."):
            continue
        mode_name = sec_name[len("mode."):]
        dynamics: dict[str, Polynomial] = {}
        lagrangian = None
        ineqs, eqs = [], []
        for ln in lines:
            where = f"{origin}:{ln.no} [mode.{mode_name}] {ln.key}"
            if ln.key.endswith("'"):
                st = ln.key[:-1].strip()
                if st not in states:
                    raise FileFormatError(f"{where}: {st!r} is not a state variable")
                if st in dynamics:
                    raise FileFormatError(f"{where}: duplicate dynamics for {st!r}")
                dynamics[st] = _parse_expr(ln.value, space, where)
            elif ln.key == "lagrangian":
                lagrangian = _parse_expr(ln.value, space, where)
            elif ln.key == "ineq":
                ineqs.append(_parse_expr(ln.value, space, where))
            elif ln.key == "eq":
                eqs.append(_parse_expr(ln.value, space, where))
            else:
                raise FileFormatError(f"{where}: unknown entry")
        missing = set(states) - set(dynamics)
        if missing:
            raise FileFormatError(
                f"{origin} [mode.{mode_name}]: missing dynamics for {sorted(missing)}"
            )
        if lagrangian is None:
            lagrangian = Polynomial.zero(space)
        extra = SemialgebraicSet(tuple(ineqs), tuple(eqs))
        used = set()
        for q in (*dynamics.values(), lagrangian, *ineqs, *eqs):
            used |= q.variables_used() & controls
        modes.append(
            ModeSpec(
                mode_name,
                tuple(dynamics[s] for s in states),
                lagrangian,
                extra,
                {u: box[u] for u in sorted(used)},
            )
        )
    if not modes:
        raise FileFormatError(f"{origin}: no [mode.<name>] sections")

    # ---- shared set ------------------------------------------------------
    ineqs, eqs = [], []
    for ln in index.get("set", []):
        where = f"{origin}:{ln.no} [set] {ln.key}"
        if ln.key == "ineq":
            ineqs.append(_parse_expr(ln.value, space, where))
        elif ln.key == "eq":
            eqs.append(_parse_expr(ln.value, space, where))
        else:
            raise FileFormatError(f"{where}: unknown entry")
    shared = SemialgebraicSet(tuple(ineqs), tuple(eqs))

    # ---- boundary --------------------------------------------------------
    if "boundary" not in index:
        raise FileFormatError(f"{origin}: missing [boundary] section")
    initial = terminal = horizon = None
    terminal_cost = None
    init_extra, term_extra = [], []
    for ln in index["boundary"]:
        where = f"{origin}:{ln.no} [boundary] {ln.key}"
        if ln.key == "initial":
            if ln.value.startswith("point"):
                initial = FixedPoint(_parse_point(ln.value, states, where))
            elif ln.value == "free":
                initial = FreeBoundary()
            elif ln.value == "distribution":
                initial = "distribution"  # resolved below
            else:
                raise FileFormatError(f"{where}: expected point:/free/distribution")
        elif ln.key == "terminal":
            if ln.value.startswith("point"):
                terminal = FixedPoint(_parse_point(ln.value, states, where))
            elif ln.value == "free":
                terminal = FreeBoundary()
            else:
                raise FileFormatError(f"{where}: expected point:/free")
        elif ln.key == "horizon":
            if ln.value not in ("fixed", "free"):
                raise FileFormatError(f"{where}: expected fixed/free")
            horizon = ln.value
        elif ln.key == "terminal_cost":
            terminal_cost = _parse_expr(ln.value, space, where)
        elif ln.key == "initial_ineq":
            init_extra.append(_parse_expr(ln.value, space, where))
        elif ln.key == "terminal_ineq":
            term_extra.append(_parse_expr(ln.value, space, where))
        else:
            raise FileFormatError(f"{where}: unknown entry")
    if initial is None or terminal is None or horizon is None:
        raise FileFormatError(f"{origin} [boundary]: initial, terminal and horizon are required")

    if initial == "distribution":
        lines = index.get("initial_moments")
        if not lines:
            raise FileFormatError(f"{origin}: 'initial = distribution' needs [initial_moments]")
        moments = {}
        for ln in lines:
            where = f"{origin}:{ln.no} [initial_moments]"
            try:
                exps = tuple(int(tok) for tok in ln.key.split())
            except ValueError:
                raise FileFormatError(f"{where}: exponents must be integers") from None
            if len(exps) != len(states) or any(e < 0 for e in exps):
                raise FileFormatError(
                    f"{where}: expected {len(states)} nonnegative exponents"
                )
            moments[exps] = _parse_number(ln.value, where)
        initial = Distribution(moments)
    if init_extra:
        if not isinstance(initial, FreeBoundary):
            raise FileFormatError(f"{origin}: initial_ineq requires 'initial = free'")
        initial = FreeBoundary(SemialgebraicSet(tuple(init_extra), ()))
    if term_extra:
        if not isinstance(terminal, FreeBoundary):
            raise FileFormatError(f"{origin}: terminal_ineq requires 'terminal = free'")
        terminal = FreeBoundary(SemialgebraicSet(tuple(term_extra), ()))

    boundary = BoundarySpec(initial, terminal, horizon)

    # ---- integral constraints ---------------------------------------------
    integrals = []
    mode_names = [m.name for m in modes]
    for sec_name, lines in sections:
        if not sec_name.startswith("integral."):
            continue
        cname = sec_name[len("integral."):]
        integrands = {m: Polynomial.zero(space) for m in mode_names}
        bound = sense = None
        for ln in lines:
            where = f"{origin}:{ln.no} [integral.{cname}] {ln.key}"
            if ln.key.startswith("mode."):
                mn = ln.key[len("mode."):]
                if mn not in mode_names:
                    raise FileFormatError(f"{where}: unknown mode {mn!r}")
                integrands[mn] = _parse_expr(ln.value, space, where)
            elif ln.key == "bound":
                bound = _parse_number(ln.value, where)
            elif ln.key == "sense":
                if ln.value not in ("<=", "=", ">="):
                    raise FileFormatError(f"{where}: sense must be <=, = or >=")
                sense = ln.value
            else:
                raise FileFormatError(f"{where}: unknown entry")
        if bound is None or sense is None:
            raise FileFormatError(f"{origin} [integral.{cname}]: bound and sense required")
        integrals.append(IntegralConstraint(cname, integrands, bound, sense))

    known = {"space", "set", "boundary", "initial_moments"}
    for sec_name, _ in sections:
        if sec_name in known or sec_name.startswith(("mode.", "integral.")):
            continue
        raise FileFormatError(f"{origin}: unknown section [{sec_name}]")

    problem = SwitchedProblem(
        space=space,
        modes=tuple(modes),
        shared_set=shared,
        boundary=boundary,
        scaling_box=box,
        integral_constraints=tuple(integrals),
        terminal_cost=terminal_cost,
        name=origin.rsplit("/", 1)[-1].removesuffix(".prob"),
    )
    return validate(problem)
