"""Declarative model of a switched optimal control problem.

A problem is a set of polynomial modes (dynamics + running cost) over a
shared semialgebraic domain, boundary conditions, optional integral
constraints and a bounded box per variable.  Before relaxation the problem
is normalized: every variable is mapped affinely onto [-1, 1], the running
costs absorb the time rescaling so that scaled and original costs agree,
and a ball constraint covering the unit box is appended.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .poly import Polynomial, PolyError, VariableSpace

POINT_TOL = 1e-9


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class SemialgebraicSet:
    """Conjunction of polynomial inequalities g >= 0 and equalities h = 0."""

    inequalities: tuple[Polynomial, ...] = ()
    equalities: tuple[Polynomial, ...] = ()

    def map_polys(self, fn) -> "SemialgebraicSet":
        return SemialgebraicSet(
            tuple(fn(g) for g in self.inequalities),
            tuple(fn(h) for h in self.equalities),
        )

    def __bool__(self):
        return bool(self.inequalities or self.equalities)


@dataclass(frozen=True)
class FixedPoint:
    """Boundary condition pinning every state to a value."""

    values: dict[str, float]


@dataclass(frozen=True)
class FreeBoundary:
    """Boundary state free on the domain, optionally cut by extra constraints."""

    extra: SemialgebraicSet = SemialgebraicSet()


@dataclass(frozen=True)
class Distribution:
    """Known spatial distribution of the initial state, given by its moments.

    ``moments`` maps exponent tuples over the state variables (declaration
    order) to the corresponding raw moments of the distribution; the zeroth
    moment must be 1.
    """

    moments: dict[tuple[int, ...], float]


@dataclass(frozen=True)
class BoundarySpec:
    initial: FixedPoint | FreeBoundary | Distribution
    terminal: FixedPoint | FreeBoundary
    horizon: str  # "fixed" | "free"

    def __post_init__(self):
        if self.horizon not in ("fixed", "free"):
            raise ProblemError(f"horizon must be 'fixed' or 'free', got {self.horizon!r}")
        if isinstance(self.terminal, Distribution):
            raise ProblemError("terminal distributions are not supported")


@dataclass(frozen=True)
class ModeSpec:
    name: str
    dynamics: tuple[Polynomial, ...]
    lagrangian: Polynomial
    extra_set: SemialgebraicSet = SemialgebraicSet()
    control_bounds: dict[str, tuple[float, float]] = field(default_factory=dict)


@dataclass(frozen=True)
class IntegralConstraint:
    """Constraint sum_j <h_j, mu_j> (sense) bound, one integrand per mode."""

    name: str
    integrands: dict[str, Polynomial]
    bound: float
    sense: str  # "<=", "=", ">="

    def __post_init__(self):
        if self.sense not in ("<=", "=", ">="):
            raise ProblemError(f"integral sense must be <=, = or >=, got {self.sense!r}")


@dataclass(frozen=True)
class SwitchedProblem:
    space: VariableSpace
    modes: tuple[ModeSpec, ...]
    shared_set: SemialgebraicSet
    boundary: BoundarySpec
    scaling_box: dict[str, tuple[float, float]]
    integral_constraints: tuple[IntegralConstraint, ...] = ()
    terminal_cost: Polynomial | None = None
    is_scaled: bool = False
    name: str = "problem"

    @property
    def n_states(self) -> int:
        return len(self.space.states)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def mode(self, name: str) -> ModeSpec:
        for m in self.modes:
            if m.name == name:
                return m
        raise ProblemError(f"unknown mode {name!r}")

    def fixed_initial_point(self) -> dict[str, float] | None:
        if isinstance(self.boundary.initial, FixedPoint):
            return self.boundary.initial.values
        return None

    def fixed_terminal_point(self) -> dict[str, float] | None:
        if isinstance(self.boundary.terminal, FixedPoint):
            return self.boundary.terminal.values
        return None

    @property
    def horizon_length(self) -> float:
        """T for a fixed horizon, T_max for a free one (the time box width)."""
        lo, hi = self.scaling_box[self.space.time]
        return hi - lo


@dataclass(frozen=True)
class ScalingMaps:
    """Affine maps original <-> scaled coordinates, one per variable.

    original = center + halfwidth * scaled.  ``time_scale`` (the time
    half-width) also converts measure masses and integrals: a modal
    occupation measure of the scaled problem carries 1/time_scale times the
    original mass.  Running costs are pre-multiplied by time_scale during
    scaling, so objective values need no conversion.
    """

    names: tuple[str, ...]
    centers: dict[str, float]
    halfwidths: dict[str, float]
    time_name: str

    @property
    def time_scale(self) -> float:
        return self.halfwidths[self.time_name]

    # Cost of the scaled problem equals the original cost directly; the
    # factor is kept explicit for reporting.
    @property
    def cost_factor(self) -> float:
        return 1.0

    def to_scaled(self, name: str, value: float) -> float:
        return (value - self.centers[name]) / self.halfwidths[name]

    def to_original(self, name: str, value: float) -> float:
        return self.centers[name] + self.halfwidths[name] * value

    def scale_polynomial(self, p: Polynomial) -> Polynomial:
        offsets = {n: self.centers[n] for n in p.space.names}
        scales = {n: self.halfwidths[n] for n in p.space.names}
        return p.substitute_affine(offsets, scales)


def _check_poly_space(p: Polynomial, space: VariableSpace, where: str):
    if p.space != space:
        raise ProblemError(f"{where}: polynomial not expressed over the problem space")


def validate(p: SwitchedProblem) -> SwitchedProblem:
    """Check structural and geometric consistency; returns the problem.

    Fixed boundary points must satisfy every (time,state)-only constraint of
    the shared set to POINT_TOL in scaled coordinates.
    """
    if not p.modes:
        raise ProblemError("problem has no modes")
    names = [m.name for m in p.modes]
    if len(set(names)) != len(names):
        raise ProblemError("duplicate mode names")

    states = p.space.states
    controls = set(p.space.names_with_role("control"))
    for v in p.space.names:
        if v not in p.scaling_box:
            raise ProblemError(f"variable {v!r} has no scaling box")
        lo, hi = p.scaling_box[v]
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ProblemError(f"variable {v!r}: unbounded scaling box")
        if not lo < hi:
            raise ProblemError(f"variable {v!r}: empty scaling box [{lo}, {hi}]")

    t_lo, t_hi = p.scaling_box[p.space.time]
    if not p.is_scaled and t_lo != 0.0:
        raise ProblemError("the time box must start at 0")
    if t_hi <= t_lo:
        raise ProblemError("the horizon must be positive")

    for m in p.modes:
        where = f"mode {m.name!r}"
        if len(m.dynamics) != len(states):
            raise ProblemError(
                f"{where}: {len(m.dynamics)} dynamics components for {len(states)} states"
            )
        for f in m.dynamics:
            _check_poly_space(f, p.space, where)
        _check_poly_space(m.lagrangian, p.space, where)
        used_controls = set()
        for q in (*m.dynamics, m.lagrangian, *m.extra_set.inequalities, *m.extra_set.equalities):
            used_controls |= q.variables_used() & controls
        if used_controls != set(m.control_bounds):
            raise ProblemError(
                f"{where}: control bounds given for {sorted(m.control_bounds)} "
                f"but mode uses {sorted(used_controls)}"
            )

    for c in p.integral_constraints:
        missing = set(names) - set(c.integrands)
        if missing:
            raise ProblemError(f"integral {c.name!r}: missing integrand for modes {sorted(missing)}")

    if p.terminal_cost is not None:
        bad = p.terminal_cost.variables_used() - set(states) - {p.space.time}
        if bad:
            raise ProblemError(f"terminal cost may only use time and states, found {sorted(bad)}")

    if isinstance(p.boundary.initial, Distribution):
        mass = p.boundary.initial.moments.get((0,) * len(states))
        if mass is None or abs(mass - 1.0) > 1e-9:
            raise ProblemError("initial distribution must have mass 1")

    # Geometric checks happen in scaled coordinates.
    sp = p if p.is_scaled else scale(p)[0]
    checkable = set(states) | {p.space.time}
    for tag, point in (("initial", sp.fixed_initial_point()), ("terminal", sp.fixed_terminal_point())):
        if point is None:
            continue
        if set(point) != set(states):
            raise ProblemError(f"{tag} point must fix every state exactly once")
        t_val = -1.0 if tag == "initial" else (1.0 if sp.boundary.horizon == "fixed" else None)
        for v, val in point.items():
            if abs(val) > 1.0 + POINT_TOL:
                raise ProblemError(f"{tag} point leaves the box for variable {v!r}")
        if t_val is None:
            continue  # free time: only state feasibility is point-checkable
        full = {**point, sp.space.time: t_val}
        coords = [full[n] if n in checkable else 0.0 for n in sp.space.names]
        for g in sp.shared_set.inequalities:
            if g.variables_used() <= checkable and g.evaluate(coords) < -POINT_TOL:
                orig = _find_original(p, sp, g)
                raise ProblemError(f"{tag} point violates g: {orig.to_string()}")
        for h in sp.shared_set.equalities:
            if h.variables_used() <= checkable and abs(h.evaluate(coords)) > POINT_TOL:
                orig = _find_original(p, sp, h)
                raise ProblemError(f"{tag} point violates h: {orig.to_string()}")
    return p


def _find_original(p: SwitchedProblem, sp: SwitchedProblem, g_scaled: Polynomial) -> Polynomial:
    """Best-effort map from a scaled constraint back to its original for messages."""
    for orig, scal in zip(
        p.shared_set.inequalities + p.shared_set.equalities,
        sp.shared_set.inequalities + sp.shared_set.equalities,
    ):
        if scal == g_scaled:
            return orig
    return g_scaled


def _box_inequality(space: VariableSpace, name: str) -> Polynomial:
    # 1 - z^2 >= 0 for a scaled variable.
    z = Polynomial.variable(space, name)
    return Polynomial.constant(space, 1.0) - z * z


def scale(p: SwitchedProblem) -> tuple[SwitchedProblem, ScalingMaps]:
    """Map every variable affinely onto [-1, 1].

    Dynamics pick up the factor time_halfwidth / state_halfwidth; running
    costs and integral integrands are multiplied by the time half-width so
    the scaled cost of any arc equals the original cost.  The time-box row
    1 - t^2 is appended (the horizon is intrinsic to the formulation);
    all other domain constraints are the model's own, with compactness
    supplied by the ball augmentation.
    """
    if p.is_scaled:
        return p, ScalingMaps(
            p.space.names,
            {n: 0.0 for n in p.space.names},
            {n: 1.0 for n in p.space.names},
            p.space.time,
        )
    centers, halfs = {}, {}
    for v in p.space.names:
        lo, hi = p.scaling_box[v]
        if hi - lo <= 0:
            raise ProblemError(f"variable {v!r}: degenerate interval [{lo}, {hi}]")
        centers[v] = (lo + hi) / 2.0
        halfs[v] = (hi - lo) / 2.0
    maps = ScalingMaps(p.space.names, centers, halfs, p.space.time)
    s_t = maps.time_scale

    def sub(q: Polynomial) -> Polynomial:
        return maps.scale_polynomial(q)

    modes = []
    for m in p.modes:
        dyn = tuple(sub(f) * (s_t / halfs[x]) for f, x in zip(m.dynamics, p.space.states))
        modes.append(
            ModeSpec(
                m.name,
                dyn,
                sub(m.lagrangian) * s_t,
                m.extra_set.map_polys(sub),
                {u: (-1.0, 1.0) for u in m.control_bounds},
            )
        )

    ineqs = [sub(g) for g in p.shared_set.inequalities]
    tbox = _box_inequality(p.space, p.space.time)
    if not any(tbox == g for g in ineqs):
        ineqs.append(tbox)
    shared = SemialgebraicSet(tuple(ineqs), tuple(sub(h) for h in p.shared_set.equalities))

    def scale_boundary(side):
        if isinstance(side, FixedPoint):
            return FixedPoint({v: maps.to_scaled(v, val) for v, val in side.values.items()})
        if isinstance(side, FreeBoundary):
            return FreeBoundary(side.extra.map_polys(sub))
        if isinstance(side, Distribution):
            return Distribution(
                _affine_moment_transform(side.moments, p.space.states, centers, halfs)
            )
        raise ProblemError(f"unknown boundary spec {side!r}")

    boundary = BoundarySpec(
        scale_boundary(p.boundary.initial),
        scale_boundary(p.boundary.terminal),
        p.boundary.horizon,
    )
    integrals = tuple(
        IntegralConstraint(
            c.name,
            {k: sub(h) * s_t for k, h in c.integrands.items()},
            c.bound,
            c.sense,
        )
        for c in p.integral_constraints
    )
    scaled = SwitchedProblem(
        space=p.space,
        modes=tuple(modes),
        shared_set=shared,
        boundary=boundary,
        scaling_box={v: (-1.0, 1.0) for v in p.space.names},
        integral_constraints=integrals,
        terminal_cost=None if p.terminal_cost is None else sub(p.terminal_cost),
        is_scaled=True,
        name=p.name,
    )
    return scaled, maps


def _affine_moment_transform(moments, state_names, centers, halfs):
    """Raw moments of z = (x - c)/s from raw moments of x, exact expansion."""
    out = {}
    max_deg = max((sum(g) for g in moments), default=0)
    for gamma in moments:
        # scaled moment E[z^gamma] via binomial expansion of prod ((x-c)/s)^g
        coeffs = {(): 1.0}
        for i, name in enumerate(state_names):
            g = gamma[i]
            c, s = centers[name], halfs[name]
            new = {}
            for k in range(g + 1):
                w = math.comb(g, k) * (-c) ** (g - k) / s**g
                for prefix, val in coeffs.items():
                    key = prefix + (k,)
                    new[key] = new.get(key, 0.0) + val * w
            coeffs = new
        total = 0.0
        for beta, w in coeffs.items():
            if sum(beta) > max_deg or beta not in moments:
                raise ProblemError(
                    f"initial distribution moment {beta} needed for scaling is missing"
                )
            total += w * moments[beta]
        out[gamma] = total
    return out


def ball_constraint(space: VariableSpace) -> Polynomial:
    """nvars - sum z_i^2, valid on the unit box of all variables."""
    ball = Polynomial.constant(space, float(space.nvars))
    for v in space.names:
        z = Polynomial.variable(space, v)
        ball = ball - z * z
    return ball


def augment_ball(p: SwitchedProblem) -> SwitchedProblem:
    """Append the unit-box ball constraint to the shared set (idempotent)."""
    if not p.is_scaled:
        raise ProblemError("augment_ball expects a scaled problem")
    ball = ball_constraint(p.space)
    if any(g == ball for g in p.shared_set.inequalities):
        return p
    shared = SemialgebraicSet(
        p.shared_set.inequalities + (ball,), p.shared_set.equalities
    )
    return replace(p, shared_set=shared)


def normalize(p: SwitchedProblem) -> tuple[SwitchedProblem, ScalingMaps]:
    """validate + scale + ball augmentation, the standard pre-relaxation pipe."""
    validate(p)
    sp, maps = scale(p)
    return augment_ball(sp), maps
