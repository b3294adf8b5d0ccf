"""Assembly of the order-d moment relaxation of a switched problem.

One truncated moment vector per measure: a modal occupation measure per mode
over (time, states, that mode's algebraic variables), plus an initial and/or
terminal measure over (time, states) when the corresponding boundary data is
free.  The relaxation consists of

* equality rows: the weak-dynamics constraints generated by monomial test
  functions, boundary-measure normalizations, point-support substitution
  rows, localizing rows for equality constraints, and the redundant total
  mass row on fixed horizons;
* PSD blocks: one moment matrix per measure plus a localizing matrix per
  applicable inequality (box rows, ball, user constraints, control bounds);
* a cost vector pairing each modal measure with its running cost and the
  terminal measure with the terminal cost when one is present.

All polynomial data must come from a scaled, ball-augmented problem
(see problem.normalize).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .poly import Polynomial, VariableSpace, lie_derivative, monomials_up_to
from .problem import (
    Distribution,
    FixedPoint,
    FreeBoundary,
    ProblemError,
    SwitchedProblem,
    ball_constraint,
)


class RelaxationError(ProblemError):
    pass


@dataclass(frozen=True)
class Measure:
    """One truncated moment sequence of the aggregate decision vector."""

    id: str
    kind: str  # "mode" | "initial" | "terminal"
    mode_name: str | None
    space: VariableSpace
    offset: int
    monomials: tuple[tuple[int, ...], ...]
    rank: dict[tuple[int, ...], int] = field(repr=False, hash=False, compare=False, default=None)

    @property
    def count(self) -> int:
        return len(self.monomials)

    def gidx(self, exps: tuple[int, ...]) -> int:
        try:
            return self.offset + self.rank[tuple(exps)]
        except KeyError:
            raise RelaxationError(
                f"moment {exps} outside the degree cap of measure {self.id}"
            ) from None


@dataclass(frozen=True)
class MeasureLayout:
    d: int
    measures: tuple[Measure, ...]

    @property
    def total(self) -> int:
        return sum(m.count for m in self.measures)

    def measure(self, mid: str) -> Measure:
        for m in self.measures:
            if m.id == mid:
                return m
        raise RelaxationError(f"unknown measure {mid!r}")

    @property
    def modal(self) -> tuple[Measure, ...]:
        return tuple(m for m in self.measures if m.kind == "mode")

    def boundary(self, kind: str) -> Measure | None:
        for m in self.measures:
            if m.kind == kind:
                return m
        return None

    def locate(self, g: int) -> tuple[Measure, tuple[int, ...]]:
        for m in self.measures:
            if m.offset <= g < m.offset + m.count:
                return m, m.monomials[g - m.offset]
        raise RelaxationError(f"moment index {g} out of range")


@dataclass
class Reduction:
    """Affine dependence of the full moment vector on the reduced one.

    y_full = expand @ y_red + offset.  Dependent moments arise from pinned
    boundary supports, isolated-square equality rewrites and distribution
    data; the reduced ones are exactly those the PSD blocks reference.
    """

    reduced_idx: np.ndarray  # sorted indices of the reduced moments
    expand: np.ndarray  # (n_full, n_red)
    offset: np.ndarray  # (n_full,)

    @property
    def n_red(self) -> int:
        return len(self.reduced_idx)

    def to_full(self, y_red: np.ndarray) -> np.ndarray:
        return self.expand @ y_red + self.offset


@dataclass
class LinearMatrixForm:
    """Symmetric matrix map  M(y) = const + sum_g A_g y_g  of one PSD block.

    Entries are stored as parallel arrays (row, col, moment index, coeff),
    both triangles present, so that mat(y) and the adjoint <A_g, Z> are plain
    scatter/gather operations.
    """

    measure_id: str
    label: str
    size: int
    basis: tuple[tuple[int, ...], ...]
    rows: np.ndarray
    cols: np.ndarray
    gidx: np.ndarray
    coeff: np.ndarray
    const: np.ndarray | None = None

    def mat(self, y: np.ndarray) -> np.ndarray:
        out = np.zeros((self.size, self.size))
        np.add.at(out, (self.rows, self.cols), self.coeff * y[self.gidx])
        if self.const is not None:
            out += self.const
        return out

    def adjoint(self, Z: np.ndarray, out: np.ndarray):
        """out[g] += <A_g, Z> accumulated over this block's entries."""
        np.add.at(out, self.gidx, self.coeff * Z[self.rows, self.cols])

    def matrix_coefficient(self, g: int) -> np.ndarray:
        """Dense A_g for one moment index (test/inspection helper)."""
        out = np.zeros((self.size, self.size))
        mask = self.gidx == g
        np.add.at(out, (self.rows[mask], self.cols[mask]), self.coeff[mask])
        return out

    def touched(self) -> np.ndarray:
        return np.unique(self.gidx)


@dataclass
class EqRow:
    label: tuple
    cols: np.ndarray
    vals: np.ndarray
    rhs: float


@dataclass
class IneqRow:
    """Record of an integral inequality, also realized as a 1x1 block."""

    label: tuple
    cols: np.ndarray
    vals: np.ndarray
    bound: float
    sense: str


@dataclass
class SDPInstance:
    layout: MeasureLayout | None
    blocks: list[LinearMatrixForm]
    eq_rows: list[EqRow]
    ineq_rows: list[IneqRow]
    cost: np.ndarray
    objective_offset: float = 0.0
    reduction: Reduction | None = None

    @property
    def n(self) -> int:
        return self.layout.total if self.layout is not None else len(self.cost)


@dataclass(frozen=True)
class RelaxationInfo:
    d: int
    d0: int
    nbar: int
    block_sizes: tuple[int, ...]
    eq_count: int
    measure_counts: dict[str, int]


# ---------------------------------------------------------------------------

def _require_normalized(p: SwitchedProblem):
    if not p.is_scaled:
        raise RelaxationError("relaxation expects a scaled problem (see problem.normalize)")


def first_order(p: SwitchedProblem) -> int:
    """Smallest order whose degree cap 2d covers all problem data."""
    degs = [2]  # box and ball constraints are quadratic
    for m in p.modes:
        degs.append(m.lagrangian.degree)
        degs.extend(f.degree for f in m.dynamics)  # deg of Lie images of x_i
        degs.extend(g.degree for g in m.extra_set.inequalities)
        degs.extend(h.degree for h in m.extra_set.equalities)
    degs.extend(g.degree for g in p.shared_set.inequalities)
    degs.extend(h.degree for h in p.shared_set.equalities)
    for c in p.integral_constraints:
        degs.extend(h.degree for h in c.integrands.values())
    if p.terminal_cost is not None:
        degs.append(p.terminal_cost.degree)
    return max(1, math.ceil(max(degs) / 2))


def _mode_vars(p: SwitchedProblem, m) -> tuple[str, ...]:
    algebraic = set(p.space.names_with_role("control", "lift"))
    used = set()
    for q in (*m.dynamics, m.lagrangian, *m.extra_set.inequalities, *m.extra_set.equalities):
        used |= q.variables_used() & algebraic
    keep = (p.space.time,) + p.space.states + tuple(
        v for v in p.space.names if v in used
    )
    # preserve the global declaration order
    return tuple(v for v in p.space.names if v in keep)


def build_layout(p: SwitchedProblem, d: int) -> MeasureLayout:
    """One modal measure per mode; boundary measures only for free data."""
    _require_normalized(p)
    if d < first_order(p):
        raise RelaxationError(f"order {d} below the first relaxation order {first_order(p)}")
    measures = []
    offset = 0

    def add(mid, kind, mode_name, names):
        nonlocal offset
        space = p.space.subspace(names)
        monos = tuple(monomials_up_to(space.nvars, 2 * d))
        rank = {e: i for i, e in enumerate(monos)}
        measures.append(Measure(mid, kind, mode_name, space, offset, monos, rank))
        offset += len(monos)

    for m in p.modes:
        add(f"mode:{m.name}", "mode", m.name, _mode_vars(p, m))
    tx = (p.space.time,) + p.space.states
    if not isinstance(p.boundary.initial, FixedPoint):
        add("initial", "initial", None, tx)
    if isinstance(p.boundary.terminal, FreeBoundary) or p.boundary.horizon == "free":
        add("terminal", "terminal", None, tx)
    return MeasureLayout(d, tuple(measures))


def _test_space(p: SwitchedProblem) -> VariableSpace:
    return p.space.subspace((p.space.time,) + p.space.states)


def _accumulate(row: dict[int, float], meas: Measure, poly: Polynomial):
    q = poly.in_space(meas.space)
    for exps, c in q.terms.items():
        g = meas.gidx(exps)
        row[g] = row.get(g, 0.0) + c


def _to_eqrow(label, row: dict[int, float], rhs: float) -> EqRow:
    cols = np.array(sorted(row), dtype=np.intp)
    vals = np.array([row[c] for c in cols])
    return EqRow(label, cols, vals, float(rhs))


def _fixed_coords(p: SwitchedProblem, meas: Measure) -> dict[str, float]:
    """Coordinates of a boundary measure pinned to a point value."""
    fixed: dict[str, float] = {}
    if meas.kind == "initial":
        fixed[p.space.time] = -1.0
        # Distribution pins are handled separately; FixedPoint has no measure.
    elif meas.kind == "terminal":
        if p.boundary.horizon == "fixed":
            fixed[p.space.time] = 1.0
        if isinstance(p.boundary.terminal, FixedPoint):
            fixed.update(p.boundary.terminal.values)
    return fixed


def dynamics_rows(p: SwitchedProblem, layout: MeasureLayout) -> list[EqRow]:
    """Weak-dynamics equality rows from monomial test functions.

    One row per test exponent a with |a| <= 2d and deg L'_j v_a <= 2d for
    every mode, plus boundary-measure normalizations and the redundant
    total-mass row for fixed horizons.  Support pins of boundary measures
    are not rows: they live in the instance's variable reduction.
    """
    _require_normalized(p)
    d = layout.d
    tspace = _test_space(p)
    mu0 = layout.boundary("initial")
    muT = layout.boundary("terminal")
    init_pt = p.fixed_initial_point()
    term_pt = p.fixed_terminal_point()

    mode_dyn = {}
    for meas in layout.modal:
        m = p.mode(meas.mode_name)
        mode_dyn[meas.id] = [f.in_space(meas.space) for f in m.dynamics]

    rows: list[EqRow] = []
    for alpha in monomials_up_to(tspace.nvars, 2 * d):
        v = Polynomial.monomial(tspace, alpha)
        images = {}
        ok = True
        for meas in layout.modal:
            img = lie_derivative(v.in_space(meas.space), mode_dyn[meas.id])
            if img.degree > 2 * d:
                ok = False
                break
            images[meas.id] = img
        if not ok:
            continue
        row: dict[int, float] = {}
        for meas in layout.modal:
            _accumulate(row, meas, images[meas.id])
        rhs = 0.0
        if muT is not None:
            g = muT.gidx(tuple(alpha))
            row[g] = row.get(g, 0.0) - 1.0
        else:
            rhs += v.evaluate((1.0, *[term_pt[s] for s in p.space.states]))
        if mu0 is not None:
            g = mu0.gidx(tuple(alpha))
            row[g] = row.get(g, 0.0) + 1.0
        else:
            rhs -= v.evaluate((-1.0, *[init_pt[s] for s in p.space.states]))
        if not row:
            if abs(rhs) > 1e-12:
                raise RelaxationError(f"inconsistent trivial test row for {alpha}")
            continue
        rows.append(_to_eqrow(("dyn", alpha), row, rhs))

    for meas, tag in ((mu0, "norm0"), (muT, "normT")):
        if meas is not None:
            rows.append(_to_eqrow((tag,), {meas.gidx((0,) * meas.space.nvars): 1.0}, 1.0))

    if p.boundary.horizon == "fixed":
        row = {}
        for meas in layout.modal:
            g = meas.gidx((0,) * meas.space.nvars)
            row[g] = row.get(g, 0.0) + 1.0
        rows.append(_to_eqrow(("tmass",), row, 2.0))
    return rows


def equality_localizing_rows(p: SwitchedProblem, layout: MeasureLayout) -> list[EqRow]:
    """Rows L_y(h * w) = 0 for equalities not absorbed by a rewrite rule.

    This realizes the two-sided localizing condition M(h y) = 0 entrywise;
    unlike a pair of +-PSD blocks it leaves the cone interior nonempty.
    Equalities that match the isolated-square pattern are handled exactly by
    the instance's variable reduction instead and emit no rows.
    """
    d = layout.d
    rows = []
    for meas in layout.measures:
        if meas.kind == "initial" and isinstance(p.boundary.initial, Distribution):
            continue
        local = set(meas.space.names)
        eqs = [h for h in p.shared_set.equalities if h.variables_used() <= local]
        if meas.kind == "mode":
            eqs += [
                h
                for h in p.mode(meas.mode_name).extra_set.equalities
                if h.variables_used() <= local
            ]
        _, handled = _measure_rules(p, meas)
        eqs = [h for h in eqs if not any(h == done for done in handled)]
        for k, h in enumerate(eqs):
            h_loc = h.in_space(meas.space)
            cap = 2 * d - h_loc.degree
            if cap < 0:
                raise RelaxationError(
                    f"equality of degree {h_loc.degree} exceeds the cap 2d={2 * d}"
                )
            for w in monomials_up_to(meas.space.nvars, cap):
                prod = h_loc * Polynomial.monomial(meas.space, w)
                row: dict[int, float] = {}
                _accumulate(row, meas, prod)
                if row:
                    rows.append(_to_eqrow(("eqloc", meas.id, k, w), row, 0.0))
    return rows


# -- monomial rewriting ------------------------------------------------------
#
# PSD blocks are built on a reduced monomial basis so that the moment and
# localizing matrices of each measure stay nonsingular on the feasible set
# (the interior-point method needs a strictly feasible point).  Two kinds of
# reductions apply:
#
#   * pinned coordinates of boundary measures (t = 1, fixed endpoint states):
#     rule (v, power=1, constant) removes v from the basis entirely;
#   * equality constraints with an isolated square, h = c v^2 + r(others):
#     rule (v, power=2, -r/c) caps the v-exponent at 1 (the lift pattern
#     l^2 = x and the circle l1^2 + l2^2 = 1 both match).
#
# The full moment vector keeps every monomial; the substitution/localizing
# equality rows make the removed moments affinely dependent, and the blocks
# below only reference reduced ones.


def _measure_rules(
    p: SwitchedProblem, meas: Measure
) -> tuple[dict[int, tuple[int, Polynomial]], list[Polynomial]]:
    """Rewrite rules of one measure and the equalities they absorb."""
    rules: dict[int, tuple[int, Polynomial]] = {}
    handled: list[Polynomial] = []
    for v, val in _fixed_coords(p, meas).items():
        i = meas.space.index(v)
        rules[i] = (1, Polynomial.constant(meas.space, val))
    local = set(meas.space.names)
    eqs = [h for h in p.shared_set.equalities if h.variables_used() <= local]
    if meas.kind == "mode":
        eqs += [
            h
            for h in p.mode(meas.mode_name).extra_set.equalities
            if h.variables_used() <= local
        ]
    for h_orig in eqs:
        h = h_orig.in_space(meas.space)
        for i in range(meas.space.nvars):
            if i in rules:
                continue
            sq = tuple(2 if k == i else 0 for k in range(meas.space.nvars))
            c = h.coefficient(sq)
            if c == 0.0:
                continue
            if any(e[i] for e in h.terms if e != sq):
                continue  # v appears outside the isolated square
            repl = (Polynomial.monomial(meas.space, sq, c) - h) * (1.0 / c)
            # avoid rewrite cycles through other squared rules
            if any(
                meas.space.index(u) in rules and rules[meas.space.index(u)][0] == 2
                for u in repl.variables_used()
            ):
                continue
            rules[i] = (2, repl)
            handled.append(h_orig)
            break
    return rules, handled


class _Rewriter:
    def __init__(self, space: VariableSpace, rules: dict[int, tuple[int, Polynomial]]):
        self.space = space
        self.rules = rules
        self.cache: dict[tuple[int, ...], Polynomial] = {}

    def monomial(self, exps: tuple[int, ...]) -> Polynomial:
        hit = self.cache.get(exps)
        if hit is not None:
            return hit
        for i, (power, repl) in self.rules.items():
            if exps[i] >= power:
                rest = list(exps)
                rest[i] -= power
                out = self.poly(self.monomial(tuple(rest)) * repl)
                self.cache[exps] = out
                return out
        out = Polynomial.monomial(self.space, exps)
        self.cache[exps] = out
        return out

    def poly(self, q: Polynomial) -> Polynomial:
        out = Polynomial.zero(self.space)
        for exps, c in q.terms.items():
            out = out + self.monomial(exps) * c
        return out

    def is_reduced(self, exps: tuple[int, ...]) -> bool:
        return all(exps[i] < power for i, (power, _) in self.rules.items())


def _applicable_inequalities(p: SwitchedProblem, meas: Measure) -> list[tuple[str, Polynomial]]:
    local = set(meas.space.names)
    gs: list[tuple[str, Polynomial]] = []
    for i, g in enumerate(p.shared_set.inequalities):
        if g.variables_used() <= local:
            gs.append((f"g{i}", g.in_space(meas.space)))
    if meas.kind == "mode":
        m = p.mode(meas.mode_name)
        for i, g in enumerate(m.extra_set.inequalities):
            if g.variables_used() <= local:
                gs.append((f"mode_g{i}", g.in_space(meas.space)))
    elif meas.kind == "initial" and isinstance(p.boundary.initial, FreeBoundary):
        for i, g in enumerate(p.boundary.initial.extra.inequalities):
            if g.variables_used() <= local:
                gs.append((f"init_g{i}", g.in_space(meas.space)))
    elif meas.kind == "terminal" and isinstance(p.boundary.terminal, FreeBoundary):
        for i, g in enumerate(p.boundary.terminal.extra.inequalities):
            if g.variables_used() <= local:
                gs.append((f"term_g{i}", g.in_space(meas.space)))
    ball = ball_constraint(meas.space)
    if not any(g == ball for _, g in gs):
        gs.append(("ball", ball))
    return gs


def _build_block(
    meas: Measure, label: str, g: Polynomial, d: int, rw: _Rewriter, keep_constant=False
) -> LinearMatrixForm | None:
    """Localizing matrix of g on the reduced basis; None when g reduces to a
    nonnegative constant (then it only rescales the moment matrix) or to
    zero (pinned away).  ``keep_constant`` forces the g = 1 moment matrix."""
    g_red = rw.poly(g)
    if g_red.is_zero():
        return None
    if not g_red.variables_used() and not keep_constant:
        c0 = g_red.coefficient((0,) * meas.space.nvars)
        if c0 < 0:
            raise RelaxationError(
                f"measure {meas.id}: constraint {label} is violated on the pinned support"
            )
        return None
    dg = d - math.ceil(g.degree / 2)
    assert dg >= 0
    basis = tuple(
        e for e in monomials_up_to(meas.space.nvars, dg) if rw.is_reduced(e)
    )
    s = len(basis)
    rows, cols, gidx, coeff = [], [], [], []
    for a in range(s):
        for b in range(a, s):
            prod = g_red * rw.monomial(
                tuple(x + y for x, y in zip(basis[a], basis[b]))
            )
            prod = rw.poly(prod)
            for beta, c in prod.terms.items():
                gi = meas.gidx(beta)
                rows.append(a)
                cols.append(b)
                gidx.append(gi)
                coeff.append(c)
                if a != b:
                    rows.append(b)
                    cols.append(a)
                    gidx.append(gi)
                    coeff.append(c)
    return LinearMatrixForm(
        meas.id,
        label,
        s,
        basis,
        np.array(rows, dtype=np.intp),
        np.array(cols, dtype=np.intp),
        np.array(gidx, dtype=np.intp),
        np.array(coeff, dtype=float),
    )


def localizing_blocks(p: SwitchedProblem, layout: MeasureLayout) -> list[LinearMatrixForm]:
    """Moment matrix (g = 1) and one localizing matrix per inequality
    applicable to each measure (constraint variables within the measure's).

    Constraints that reduce to constants or duplicates on a pinned support
    are dropped; distribution-pinned initial measures carry no blocks.
    """
    _require_normalized(p)
    blocks = []
    for meas in layout.measures:
        if meas.kind == "initial" and isinstance(p.boundary.initial, Distribution):
            continue
        rules, _ = _measure_rules(p, meas)
        rw = _Rewriter(meas.space, rules)
        one = Polynomial.constant(meas.space, 1.0)
        blocks.append(_build_block(meas, "moment", one, layout.d, rw, keep_constant=True))
        seen: list[Polynomial] = [rw.poly(one)]
        for label, g in _applicable_inequalities(p, meas):
            g_red = rw.poly(g)
            if any(g_red == other for other in seen):
                continue
            blk = _build_block(meas, label, g, layout.d, rw)
            if blk is not None:
                seen.append(g_red)
                blocks.append(blk)
    return blocks


def integral_rows(
    p: SwitchedProblem, layout: MeasureLayout
) -> tuple[list[EqRow], list[IneqRow]]:
    """Linear rows sum_j L_{y_j}(h_j^k) (sense) e_k from integral constraints."""
    eqs, ineqs = [], []
    for k, c in enumerate(p.integral_constraints):
        row: dict[int, float] = {}
        for meas in layout.modal:
            h = c.integrands[meas.mode_name]
            if h.degree > 2 * layout.d:
                raise RelaxationError(
                    f"integral {c.name!r}: integrand degree {h.degree} exceeds 2d"
                )
            _accumulate(row, meas, h)
        cols = np.array(sorted(row), dtype=np.intp)
        vals = np.array([row[g] for g in cols])
        if c.sense == "=":
            eqs.append(EqRow(("integral", k), cols, vals, c.bound))
        else:
            ineqs.append(IneqRow(("integral", k), cols, vals, c.bound, c.sense))
    return eqs, ineqs


def _ineq_block(r: IneqRow, idx: int) -> LinearMatrixForm:
    # <=  ->  bound - row.y >= 0 ;  >=  ->  row.y - bound >= 0
    sign = -1.0 if r.sense == "<=" else 1.0
    return LinearMatrixForm(
        measure_id="*",
        label=f"integral{idx}",
        size=1,
        basis=((),),
        rows=np.zeros(len(r.cols), dtype=np.intp),
        cols=np.zeros(len(r.cols), dtype=np.intp),
        gidx=r.cols.copy(),
        coeff=sign * r.vals,
        const=np.array([[-sign * r.bound]]),
    )


def build_reduction(p: SwitchedProblem, layout: MeasureLayout) -> Reduction:
    """Affine expansion of every moment in terms of the reduced ones.

    Moments with pinned variables or rewritable squares are expressed
    through the reduced set; a distribution-pinned initial measure is pure
    data and contributes only to the constant offset.
    """
    n = layout.total
    cols: list[int] = []
    expansions: list[tuple[int, list[tuple[int, float]], float]] = []
    for meas in layout.measures:
        if meas.kind == "initial" and isinstance(p.boundary.initial, Distribution):
            dist = p.boundary.initial
            t_i = meas.space.index(p.space.time)
            for k, exps in enumerate(meas.monomials):
                states_exp = tuple(e for i, e in enumerate(exps) if i != t_i)
                if states_exp not in dist.moments:
                    raise RelaxationError(
                        f"initial distribution moment {states_exp} is required up to 2d"
                    )
                value = (-1.0) ** exps[t_i] * dist.moments[states_exp]
                expansions.append((meas.offset + k, [], value))
            continue
        rules, _ = _measure_rules(p, meas)
        rw = _Rewriter(meas.space, rules)
        for k, exps in enumerate(meas.monomials):
            g = meas.offset + k
            if rw.is_reduced(exps):
                cols.append(g)
                continue
            # <mono, mu> = <rewrite(mono), mu>: each term, the constant one
            # included, pairs with a reduced moment (constants hit the mass).
            red = rw.monomial(exps)
            combo = [(meas.gidx(e), c) for e, c in red.terms.items()]
            expansions.append((g, combo, 0.0))
    reduced_idx = np.array(sorted(cols), dtype=np.intp)
    pos = {int(g): i for i, g in enumerate(reduced_idx)}
    expand = np.zeros((n, len(reduced_idx)))
    offset = np.zeros(n)
    for g in reduced_idx:
        expand[g, pos[int(g)]] = 1.0
    for g, combo, const in expansions:
        offset[g] = const
        for gg, c in combo:
            if gg not in pos:
                raise RelaxationError(
                    f"moment {gg} appears in a rewrite expansion but is not reduced"
                )
            expand[g, pos[gg]] += c
    return Reduction(reduced_idx, expand, offset)


def assemble(p: SwitchedProblem, d: int) -> tuple[SDPInstance, RelaxationInfo]:
    """Build the full order-d instance: rows, blocks, cost."""
    _require_normalized(p)
    d0 = first_order(p)
    if d < d0:
        raise RelaxationError(f"order {d} below the first relaxation order {d0}")
    layout = build_layout(p, d)
    rows = dynamics_rows(p, layout)
    rows += equality_localizing_rows(p, layout)
    int_eqs, int_ineqs = integral_rows(p, layout)
    rows += int_eqs
    blocks = localizing_blocks(p, layout)
    blocks += [_ineq_block(r, i) for i, r in enumerate(int_ineqs)]
    reduction = build_reduction(p, layout)
    red_set = set(int(g) for g in reduction.reduced_idx)
    for b in blocks:
        assert set(int(g) for g in b.gidx) <= red_set, (b.measure_id, b.label)

    cost = np.zeros(layout.total)
    offset = 0.0
    for meas in layout.modal:
        lag = p.mode(meas.mode_name).lagrangian.in_space(meas.space)
        for exps, c in lag.terms.items():
            cost[meas.gidx(exps)] += c
    if p.terminal_cost is not None:
        muT = layout.boundary("terminal")
        if muT is not None:
            phi = p.terminal_cost.in_space(muT.space)
            for exps, c in phi.terms.items():
                cost[muT.gidx(exps)] += c
        else:
            term_pt = p.fixed_terminal_point()
            point = (1.0, *[term_pt[s] for s in p.space.states])
            offset += p.terminal_cost.in_space(_test_space(p)).evaluate(point)

    inst = SDPInstance(layout, blocks, rows, int_ineqs, cost, offset, reduction)
    info = RelaxationInfo(
        d=d,
        d0=d0,
        nbar=layout.total,
        block_sizes=tuple(b.size for b in blocks),
        eq_count=len(rows),
        measure_counts={m.id: m.count for m in layout.measures},
    )
    return inst, info
