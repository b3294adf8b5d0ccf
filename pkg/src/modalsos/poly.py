"""Sparse multivariate polynomials over a named variable space.

Polynomials are stored as a map from exponent tuples to float coefficients,
one exponent per variable of the ambient :class:`VariableSpace`.  The module
provides the arithmetic, calculus (partial derivatives and the mode Lie
derivative d/dt + grad . f), graded-lexicographic monomial enumeration, a
small expression parser, and a canonical printer whose output parses back to
an identical term map.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from math import comb

VALID_ROLES = ("time", "state", "control", "lift")

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUM_RE = re.compile(r"(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?")


class PolyError(ValueError):
    pass


class ParseError(PolyError):
    """Raised on malformed expressions; carries the character position."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


@dataclass(frozen=True)
class VariableSpace:
    """Ordered, role-tagged variable list fixing the (t, x, u/lift) ordering."""

    names: tuple[str, ...]
    roles: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) != len(self.roles):
            raise PolyError("names and roles must have equal length")
        if len(set(self.names)) != len(self.names):
            raise PolyError("variable names must be unique")
        for r in self.roles:
            if r not in VALID_ROLES:
                raise PolyError(f"unknown variable role {r!r}")
        if self.roles.count("time") != 1:
            raise PolyError("exactly one time variable is required")

    @property
    def nvars(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise PolyError(f"unknown variable {name!r}") from None

    @property
    def time(self) -> str:
        return self.names[self.roles.index("time")]

    def names_with_role(self, *roles: str) -> tuple[str, ...]:
        return tuple(n for n, r in zip(self.names, self.roles) if r in roles)

    @property
    def states(self) -> tuple[str, ...]:
        return self.names_with_role("state")

    def subspace(self, keep: tuple[str, ...]) -> "VariableSpace":
        """Space restricted to ``keep``, preserving declaration order."""
        keep_set = set(keep)
        unknown = keep_set - set(self.names)
        if unknown:
            raise PolyError(f"unknown variables {sorted(unknown)}")
        names = tuple(n for n in self.names if n in keep_set)
        roles = tuple(r for n, r in zip(self.names, self.roles) if n in keep_set)
        return VariableSpace(names, roles)


def _grlex_key(exps: tuple[int, ...]):
    # Degree first, then lexicographic with earlier variables dominating,
    # so (2,0) precedes (1,1) precedes (0,2).
    return (sum(exps), tuple(-e for e in exps))


def monomials_up_to(nvars: int, deg: int) -> list[tuple[int, ...]]:
    """All exponent tuples of total degree <= deg, in graded-lex order.

    The count is C(nvars + deg, nvars) and the first element is the zero
    index.
    """
    if deg < 0:
        raise PolyError("degree must be nonnegative")
    if nvars == 0:
        return [()]
    out = []
    for d in range(deg + 1):
        level = []
        for slots in combinations_with_replacement(range(nvars), d):
            exps = [0] * nvars
            for i in slots:
                exps[i] += 1
            level.append(tuple(exps))
        level.sort(key=_grlex_key)
        out.extend(level)
    assert len(out) == comb(nvars + deg, nvars)
    return out


class Polynomial:
    """Immutable sparse polynomial tied to a :class:`VariableSpace`.

    ``terms`` maps exponent tuples (length = space.nvars) to nonzero float
    coefficients.  All operations return new instances.
    """

    __slots__ = ("space", "terms")

    def __init__(self, space: VariableSpace, terms: dict[tuple[int, ...], float]):
        clean = {}
        n = space.nvars
        for exps, c in terms.items():
            if len(exps) != n:
                raise PolyError(f"exponent tuple {exps} does not match {n} variables")
            if any(e < 0 for e in exps):
                raise PolyError(f"negative exponent in {exps}")
            c = float(c)
            if c != 0.0:
                clean[tuple(int(e) for e in exps)] = c
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "terms", clean)

    def __setattr__(self, *a):  # pragma: no cover - guards immutability
        raise AttributeError("Polynomial is immutable")

    # -- constructors ------------------------------------------------------
    @classmethod
    def zero(cls, space: VariableSpace) -> "Polynomial":
        return cls(space, {})

    @classmethod
    def constant(cls, space: VariableSpace, c: float) -> "Polynomial":
        return cls(space, {(0,) * space.nvars: c})

    @classmethod
    def variable(cls, space: VariableSpace, name: str) -> "Polynomial":
        exps = [0] * space.nvars
        exps[space.index(name)] = 1
        return cls(space, {tuple(exps): 1.0})

    @classmethod
    def monomial(cls, space: VariableSpace, exps: tuple[int, ...], c: float = 1.0) -> "Polynomial":
        return cls(space, {tuple(exps): c})

    # -- basic queries -----------------------------------------------------
    @property
    def degree(self) -> int:
        """Total degree; the zero polynomial has degree 0 by convention."""
        return max((sum(e) for e in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def coefficient(self, exps: tuple[int, ...]) -> float:
        return self.terms.get(tuple(exps), 0.0)

    def variables_used(self) -> set[str]:
        used = set()
        for exps in self.terms:
            for name, e in zip(self.space.names, exps):
                if e:
                    used.add(name)
        return used

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    # -- arithmetic --------------------------------------------------------
    def _check_space(self, other: "Polynomial"):
        if self.space != other.space:
            raise PolyError("polynomials live in different variable spaces")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.space, other)
        self._check_space(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0.0) + c
        return Polynomial(self.space, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.space, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.space, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Polynomial(self.space, {e: c * other for e, c in self.terms.items()})
        self._check_space(other)
        out: dict[tuple[int, ...], float] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Polynomial(self.space, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise PolyError("only nonnegative integer powers are supported")
        result = Polynomial.constant(self.space, 1.0)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other):
        return (
            isinstance(other, Polynomial)
            and self.space == other.space
            and self.terms == other.terms
        )

    def __hash__(self):
        return hash((self.space, frozenset(self.terms.items())))

    # -- calculus ----------------------------------------------------------
    def diff(self, var: str) -> "Polynomial":
        """Exact partial derivative with respect to ``var``."""
        i = self.space.index(var)
        out = {}
        for e, c in self.terms.items():
            if e[i] == 0:
                continue
            de = list(e)
            de[i] -= 1
            out[tuple(de)] = out.get(tuple(de), 0.0) + c * e[i]
        return Polynomial(self.space, out)

    def evaluate(self, point) -> float:
        if len(point) != self.space.nvars:
            raise PolyError(
                f"point has {len(point)} coordinates, space has {self.space.nvars}"
            )
        total = 0.0
        for e, c in self.terms.items():
            v = c
            for x, k in zip(point, e):
                if k:
                    v *= float(x) ** k
            total += v
        return total

    __call__ = evaluate

    # -- space changes -----------------------------------------------------
    def in_space(self, target: VariableSpace) -> "Polynomial":
        """Re-express over ``target``; every used variable must exist there."""
        if target == self.space:
            return self
        idx = {}
        for name in self.variables_used():
            idx[name] = target.index(name)  # raises on missing variable
        out = {}
        for e, c in self.terms.items():
            ne = [0] * target.nvars
            for name, k in zip(self.space.names, e):
                if k:
                    ne[idx[name]] = k
            key = tuple(ne)
            out[key] = out.get(key, 0.0) + c
        return Polynomial(target, out)

    def substitute_affine(self, offsets: dict[str, float], scales: dict[str, float]) -> "Polynomial":
        """Substitute var <- offset + scale * var for each listed variable.

        Used for the box-to-[-1,1] change of variables; exact up to float
        round-off via binomial expansion.
        """
        result = Polynomial.zero(self.space)
        one = Polynomial.constant(self.space, 1.0)
        # Precompute the affine image of each variable.
        images = []
        for name in self.space.names:
            if name in offsets or name in scales:
                img = Polynomial.constant(self.space, offsets.get(name, 0.0)) + (
                    scales.get(name, 1.0) * Polynomial.variable(self.space, name)
                )
            else:
                img = Polynomial.variable(self.space, name)
            images.append(img)
        for e, c in self.terms.items():
            term = one * c
            for img, k in zip(images, e):
                if k:
                    term = term * img**k
            result = result + term
        return result

    # -- printing ----------------------------------------------------------
    def to_string(self) -> str:
        """Canonical printer: graded-lex order, explicit float coefficients."""
        if not self.terms:
            return "0.0"
        ordered = sorted(self.terms, key=_grlex_key, reverse=True)
        pieces = []
        for e in ordered:
            c = self.terms[e]
            mono = "*".join(
                name if k == 1 else f"{name}^{k}"
                for name, k in zip(self.space.names, e)
                if k
            )
            mag = repr(abs(c))
            body = f"{mag}*{mono}" if mono else mag
            pieces.append(("- " if c < 0 else "+ ") + body)
        text = " ".join(pieces)
        return ("-" + text[2:]) if text.startswith("- ") else text[2:]

    def __repr__(self):
        return f"Polynomial({self.to_string()})"


def differentiate(p: Polynomial, var: str) -> Polynomial:
    return p.diff(var)


def lie_derivative(v: Polynomial, f: list[Polynomial]) -> Polynomial:
    """Mode Lie derivative dv/dt + sum_i dv/dx_i * f_i.

    ``v`` must live in a space whose state variables match the length of
    ``f``; each f_i may live in the same or a larger space (e.g. one that
    also carries the mode's controls), in which case the result lives there.
    """
    states = v.space.states
    if len(f) != len(states):
        raise PolyError(
            f"dynamics has {len(f)} components, space has {len(states)} states"
        )
    target = f[0].space if f else v.space
    out = v.diff(v.space.time).in_space(target)
    for name, fi in zip(states, f):
        if fi.space != target:
            raise PolyError("all dynamics components must share one space")
        out = out + v.diff(name).in_space(target) * fi
    return out


# -- expression parser -----------------------------------------------------

class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self):
        self._skip_ws()
        if self.pos >= len(self.text):
            return ("end", "", self.pos)
        ch = self.text[self.pos]
        if ch in "+-*^()":
            return ("op", ch, self.pos)
        if ch == "/":
            raise ParseError("division is not part of the polynomial grammar", self.pos)
        m = _NUM_RE.match(self.text, self.pos)
        if m:
            return ("num", m.group(0), self.pos)
        m = _NAME_RE.match(self.text, self.pos)
        if m:
            return ("name", m.group(0), self.pos)
        raise ParseError(f"unexpected character {ch!r}", self.pos)

    def next(self):
        kind, val, pos = self.peek()
        self.pos = pos + len(val)
        return kind, val, pos


class _Parser:
    """Recursive descent for:  expr := term (('+'|'-') term)*
    term := factor ('*' factor)*;  factor := atom ('^' uint)?;
    atom := number | name | '(' expr ')' | ('+'|'-') factor
    """

    def __init__(self, text: str, space: VariableSpace):
        self.tok = _Tokenizer(text)
        self.space = space

    def parse(self) -> Polynomial:
        p = self._expr()
        kind, val, pos = self.tok.peek()
        if kind != "end":
            raise ParseError(f"unexpected {val!r}", pos)
        return p

    def _expr(self) -> Polynomial:
        p = self._term()
        while True:
            kind, val, _ = self.tok.peek()
            if kind == "op" and val in "+-":
                self.tok.next()
                q = self._term()
                p = p + q if val == "+" else p - q
            else:
                return p

    def _term(self) -> Polynomial:
        p = self._factor()
        while True:
            kind, val, pos = self.tok.peek()
            if kind == "op" and val == "*":
                self.tok.next()
                p = p * self._factor()
            elif kind in ("num", "name") or (kind == "op" and val == "("):
                raise ParseError("missing '*' between factors", pos)
            else:
                return p

    def _factor(self) -> Polynomial:
        p = self._atom()
        kind, val, _ = self.tok.peek()
        if kind == "op" and val == "^":
            self.tok.next()
            kind, val, pos = self.tok.peek()
            if kind == "op" and val == "-":
                raise ParseError("negative exponent", pos)
            if kind != "num":
                raise ParseError("exponent must be a nonnegative integer", pos)
            if "." in val or "e" in val or "E" in val:
                raise ParseError("fractional exponent", pos)
            self.tok.next()
            p = p ** int(val)
        return p

    def _atom(self) -> Polynomial:
        kind, val, pos = self.tok.next()
        if kind == "op" and val in "+-":
            q = self._factor()
            return q if val == "+" else -q
        if kind == "num":
            return Polynomial.constant(self.space, float(val))
        if kind == "name":
            if val not in self.space.names:
                raise ParseError(f"unknown identifier {val!r}", pos)
            return Polynomial.variable(self.space, val)
        if kind == "op" and val == "(":
            p = self._expr()
            kind, val, pos = self.tok.next()
            if not (kind == "op" and val == ")"):
                raise ParseError("expected ')'", pos)
            return p
        if kind == "end":
            raise ParseError("unexpected end of expression", pos)
        raise ParseError(f"unexpected {val!r}", pos)


def parse_polynomial(text: str, space: VariableSpace) -> Polynomial:
    """Parse an expression with +, -, *, ^ (nonnegative integer powers),
    parentheses, decimal literals and declared variable names."""
    return _Parser(text, space).parse()
