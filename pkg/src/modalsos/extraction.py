"""Trajectory and duty-cycle extraction from truncated moments.

The modal measures of a solved relaxation are approximated by discrete
measures on a time x state mesh, coupled across modes by the exact time
marginal (the sum of all modal measures disintegrates as dt on the active
horizon).  Matching the truncated moments in l1 norm is a plain linear
program; from its optimal weights the state way points are conditional
means per time cell and the duty cycles are the relative modal masses.

Everything here works in the scaled coordinates of the relaxation; reports
convert way points back through the scaling maps.  simulate_relaxed plays
the validation role: integrating the convexified dynamics under extracted
duty cycles produces an admissible cost, an upper bound that sandwiches the
relaxation's lower bound.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .poly import Polynomial
from .problem import FixedPoint, SwitchedProblem
from .relaxation import MeasureLayout
from .simplex import LPResult, solve_standard_lp


class ExtractionError(ValueError):
    pass


@dataclass
class Mesh:
    """Cells over the active time range and tensorized state nodes.

    ``eps`` is the resolution as a fraction of each variable's range: node
    spacing is 2 * eps * range, so every point lies within eps * range of
    a node.
    """

    time_edges: np.ndarray
    state_axes: list[np.ndarray]
    eps: float

    @property
    def time_nodes(self) -> np.ndarray:
        return 0.5 * (self.time_edges[:-1] + self.time_edges[1:])

    @property
    def delta_t(self) -> np.ndarray:
        return np.diff(self.time_edges)

    @property
    def state_points(self) -> np.ndarray:
        cols = list(itertools.product(*self.state_axes))
        return np.array(cols)

    @property
    def n_cells(self) -> int:
        return len(self.time_edges) - 1


def build_mesh(n_states: int, eps: float = 1 / 40, time_extent=(-1.0, 1.0)) -> Mesh:
    """Uniform mesh on the scaled domain: states span [-1, 1], time spans
    the given extent (shorter than [-1, 1] for free-horizon problems)."""
    if eps <= 0 or eps >= 0.5:
        raise ExtractionError("eps must lie in (0, 0.5)")
    lo, hi = time_extent
    if hi <= lo:
        raise ExtractionError("empty time extent")
    spacing = 2.0 * eps * 2.0  # 2 eps of the scaled range 2
    n_cells = max(1, math.ceil((hi - lo) / spacing))
    edges = np.linspace(lo, hi, n_cells + 1)
    nodes_per_axis = np.linspace(-1.0, 1.0, math.ceil(1.0 / (2 * eps)) + 1)
    return Mesh(edges, [nodes_per_axis.copy() for _ in range(n_states)], eps)


def time_extent_from_moments(p: SwitchedProblem, layout: MeasureLayout, y) -> tuple[float, float]:
    """Active scaled time range [-1, -1 + total modal mass]."""
    total = sum(float(y[m.gidx((0,) * m.space.nvars)]) for m in layout.modal)
    return (-1.0, min(1.0, -1.0 + total))


def marginal_moments(p: SwitchedProblem, layout: MeasureLayout, y, r: int):
    """Truncated (time, states) moments of each modal measure up to 2r."""
    from .poly import monomials_up_to

    n = len(p.space.states) + 1
    gammas = monomials_up_to(n, 2 * r)
    out = {}
    for meas in layout.modal:
        tx = [meas.space.index(v) for v in (p.space.time,) + p.space.states]
        vals = []
        for gamma in gammas:
            exps = [0] * meas.space.nvars
            for pos, e in zip(tx, gamma):
                exps[pos] = e
            try:
                vals.append(float(y[meas.gidx(tuple(exps))]))
            except Exception:
                raise ExtractionError(
                    f"moment degree 2r={2*r} exceeds the available moments"
                ) from None
        out[meas.mode_name] = np.array(vals)
    return gammas, out


@dataclass
class ExtractionLP:
    mesh: Mesh
    mode_names: list[str]
    gammas: list[tuple[int, ...]]
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    n_weights: int


@dataclass
class DiscreteMeasureSet:
    mesh: Mesh
    mode_names: list[str]
    weights: np.ndarray  # (modes, cells, state nodes), all >= 0
    mismatch: float
    lp: LPResult = field(repr=False, default=None)


@dataclass
class ExtractionResult:
    time_nodes: np.ndarray
    way_points: np.ndarray  # (cells, n_states)
    duty_cycles: np.ndarray  # (cells, modes)
    mode_names: list[str]
    mismatch: float


def build_extraction_lp(
    p: SwitchedProblem, layout: MeasureLayout, y, mesh: Mesh, r: int
) -> ExtractionLP:
    """l1 moment-matching LP over nonnegative atom weights, coupled by the
    exact time-marginal rows sum_jk w_j(t_i, x_k) = delta_t_i.

    Moments are matched in the Chebyshev product basis (same span as the
    monomials up to 2r, but the coefficient matrix stays well conditioned
    on [-1, 1], which raw power bases at degree ~10 are not).
    """
    from numpy.polynomial import chebyshev

    gammas, moments = marginal_moments(p, layout, y, r)
    modes = [m.mode_name for m in layout.modal]
    nodes = mesh.state_points
    t_nodes = mesh.time_nodes
    n_m, n_i, n_k, n_g = len(modes), mesh.n_cells, len(nodes), len(gammas)

    # per-variable Chebyshev-to-power coefficients: U[k, j] = [z^j] T_k(z)
    deg = 2 * r
    U = np.zeros((deg + 1, deg + 1))
    for k in range(deg + 1):
        U[k, : k + 1] = chebyshev.cheb2poly(np.eye(deg + 1)[k])[: k + 1]

    # Chebyshev moments: pair each product T_g0(t) T_g1(x1)... with the raw
    # moments through the tensor expansion of its power coefficients
    rank = {g: i for i, g in enumerate(gammas)}
    cheb_targets = {}
    for mode in modes:
        raw = moments[mode]
        vals = np.zeros(n_g)
        for gi, gamma in enumerate(gammas):
            total = 0.0
            # expand prod_v T_{gamma_v} into monomials
            combos = [((), 1.0)]
            for e in gamma:
                new = []
                for prefix, cf in combos:
                    row = U[e]
                    for j in range(e + 1):
                        if row[j]:
                            new.append((prefix + (j,), cf * row[j]))
                combos = new
            for beta, cf in combos:
                total += cf * raw[rank[beta]]
            vals[gi] = total
        cheb_targets[mode] = vals

    # Chebyshev values of every atom: (cells, nodes, gammas)
    t_cheb = chebyshev.chebvander(t_nodes, deg)  # (n_i, deg+1)
    x_cheb = [chebyshev.chebvander(nodes[:, s], deg) for s in range(nodes.shape[1])]
    atom_vals = np.ones((n_i, n_k, n_g))
    for g, gamma in enumerate(gammas):
        v = np.ones((n_i, n_k))
        if gamma[0]:
            v *= t_cheb[:, gamma[0]][:, None]
        for s, e in enumerate(gamma[1:]):
            if e:
                v *= x_cheb[s][:, e][None, :]
        atom_vals[:, :, g] = v
    atom_flat = atom_vals.reshape(n_i * n_k, n_g)
    moments = cheb_targets

    # layout: [weights | mismatch slack pairs | balance u | balance slacks]
    # A truncated moment set cannot distinguish fast per-cell alternation
    # from genuine mixing (discrete quadrature freedom), so the optimal face
    # contains both; a tiny penalty on the deviation of each modal cell
    # mass from the equal share picks the mixed vertex, consistent with the
    # uniqueness assumption behind the reconstruction formulas.
    balance_weight = 1e-4
    n_w = n_m * n_i * n_k
    n_slack = 2 * n_m * n_g
    n_u = n_m * n_i
    n_rows = n_m * n_g + n_i + 2 * n_u
    n_cols = n_w + n_slack + 3 * n_u
    A = np.zeros((n_rows, n_cols))
    b = np.zeros(n_rows)
    c = np.zeros(n_cols)
    c[n_w : n_w + n_slack] = 1.0
    c[n_w + n_slack : n_w + n_slack + n_u] = balance_weight
    for j, mode in enumerate(modes):
        rows = slice(j * n_g, (j + 1) * n_g)
        cols = slice(j * n_i * n_k, (j + 1) * n_i * n_k)
        A[rows, cols] = atom_flat.T
        sl = n_w + 2 * j * n_g
        A[rows, sl : sl + n_g] = np.eye(n_g)
        A[rows, sl + n_g : sl + 2 * n_g] = -np.eye(n_g)
        b[rows] = moments[mode]
    for i in range(n_i):
        row = n_m * n_g + i
        for j in range(n_m):
            base = j * n_i * n_k + i * n_k
            A[row, base : base + n_k] = 1.0
        b[row] = mesh.delta_t[i]
    # |modal cell mass - delta_t/m| <= u_(j,i) via two slack rows each
    u0 = n_w + n_slack
    s0 = u0 + n_u
    for j in range(n_m):
        for i in range(n_i):
            u = u0 + j * n_i + i
            base = j * n_i * n_k + i * n_k
            r1 = n_m * n_g + n_i + 2 * (j * n_i + i)
            r2 = r1 + 1
            A[r1, base : base + n_k] = 1.0
            A[r1, u] = -1.0
            A[r1, s0 + 2 * (j * n_i + i)] = 1.0
            b[r1] = mesh.delta_t[i] / n_m
            A[r2, base : base + n_k] = -1.0
            A[r2, u] = -1.0
            A[r2, s0 + 2 * (j * n_i + i) + 1] = 1.0
            b[r2] = -mesh.delta_t[i] / n_m
    return ExtractionLP(mesh, modes, gammas, A, b, c, n_w)


def solve_lp(lp: ExtractionLP, engine: str = "highs") -> DiscreteMeasureSet:
    """Solve the extraction LP to an optimal basic solution.

    ``engine="highs"`` (default) uses scipy's HiGHS dual simplex, which is
    deterministic and far faster on these degenerate mesh LPs;
    ``engine="builtin"`` runs the in-repo revised simplex, which the test
    suite cross-checks against it.
    """
    if engine == "builtin":
        res = solve_standard_lp(lp.A, lp.b, lp.c)
        if res.status != "optimal":
            raise ExtractionError(f"extraction LP ended with status {res.status!r}")
        x, obj, lpres = res.x, res.obj, res
    elif engine == "highs":
        from scipy.optimize import linprog

        ref = linprog(lp.c, A_eq=lp.A, b_eq=lp.b, bounds=(0, None), method="highs-ds")
        if ref.status != 0:
            raise ExtractionError(f"extraction LP ended with status {ref.status}")
        x, obj, lpres = ref.x, float(ref.fun), LPResult(ref.x, float(ref.fun), "optimal", int(ref.nit))
    else:
        raise ExtractionError(f"unknown LP engine {engine!r}")
    n_i, n_k = lp.mesh.n_cells, len(lp.mesh.state_points)
    w = x[: lp.n_weights].reshape(len(lp.mode_names), n_i, n_k)
    return DiscreteMeasureSet(lp.mesh, lp.mode_names, np.maximum(w, 0.0), float(obj), lpres)


def reconstruct(dm: DiscreteMeasureSet) -> ExtractionResult:
    """Way points as per-cell conditional means, duty cycles as relative
    modal masses; the marginal rows guarantee positive cell mass."""
    mesh = dm.mesh
    nodes = mesh.state_points
    cell_mass = dm.weights.sum(axis=(0, 2))
    if (cell_mass <= 0).any():
        raise ExtractionError("a mesh cell carries no mass")
    n_i = mesh.n_cells
    n_states = nodes.shape[1]
    way = np.zeros((n_i, n_states))
    for s in range(n_states):
        way[:, s] = (dm.weights.sum(axis=0) * nodes[None, :, s]).sum(axis=1) / cell_mass
    duty = dm.weights.sum(axis=2) / cell_mass[None, :]
    return ExtractionResult(
        mesh.time_nodes, way, duty.T, list(dm.mode_names), dm.mismatch
    )


def extract(p: SwitchedProblem, layout: MeasureLayout, y, eps: float = 1 / 40,
            r: int | None = None) -> ExtractionResult:
    """Mesh + LP + reconstruction with the default settings."""
    if r is None:
        r = layout.d
    extent = (-1.0, 1.0)
    if p.boundary.horizon == "free":
        extent = time_extent_from_moments(p, layout, y)
    mesh = build_mesh(len(p.space.states), eps, extent)
    lp = build_extraction_lp(p, layout, y, mesh, r)
    return reconstruct(solve_lp(lp))


# ---------------------------------------------------------------------------

def simulate_relaxed(
    p: SwitchedProblem,
    duty,
    dt: float,
    t_end: float | None = None,
    x0=None,
    domain_tol: float = 1e-6,
):
    """RK4 integration of the convexified dynamics dx/dt = sum_j d_j f_j.

    ``duty`` maps a time to the tuple of duty cycles (they must sum to 1);
    the running cost sum_j d_j l_j is integrated as an extra state by the
    same scheme.  Returns (ts, xs, cost, violations) where violations lists
    (t, constraint) pairs exceeding ``domain_tol``; leaving the scaling box
    by more than 10% of its width raises.
    """
    t_lo, t_hi = p.scaling_box[p.space.time]
    if t_end is None:
        t_end = t_hi
    if x0 is None:
        init = p.fixed_initial_point()
        if init is None:
            raise ExtractionError("x0 is required for non-fixed initial data")
        x0 = [init[s] for s in p.space.states]
    states = p.space.states
    n = len(states)
    if any(
        q.variables_used() - set(states) - {p.space.time}
        for m in p.modes
        for q in (*m.dynamics, m.lagrangian)
    ):
        raise ExtractionError("simulate_relaxed supports pure switching data only")

    def rhs(t, xc):
        w = duty(t)
        if abs(sum(w) - 1.0) > 1e-8:
            raise ExtractionError(f"duty cycles at t={t} sum to {sum(w)}, not 1")
        point = (t, *xc[:n])
        out = np.zeros(n + 1)
        for wj, m in zip(w, p.modes):
            if wj == 0.0:
                continue
            for i, f in enumerate(m.dynamics):
                out[i] += wj * f.evaluate(point)
            out[n] += wj * m.lagrangian.evaluate(point)
        return out

    steps = max(1, int(round((t_end - t_lo) / dt)))
    h = (t_end - t_lo) / steps
    ts = t_lo + h * np.arange(steps + 1)
    xs = np.zeros((steps + 1, n))
    xs[0] = x0
    cost = 0.0
    checkable = [
        g
        for g in p.shared_set.inequalities
        if g.variables_used() <= set(states) | {p.space.time}
    ]
    violations = []
    xc = np.array([*x0, 0.0])
    for i in range(steps):
        t = ts[i]
        k1 = rhs(t, xc)
        k2 = rhs(t + h / 2, xc + h / 2 * k1)
        k3 = rhs(t + h / 2, xc + h / 2 * k2)
        k4 = rhs(t + h, xc + h * k3)
        xc = xc + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        xs[i + 1] = xc[:n]
        point = (ts[i + 1], *xc[:n])
        for g, name in zip(xs[i + 1], states):
            lo, hi = p.scaling_box[name]
            margin = 0.1 * (hi - lo)
            if g < lo - margin or g > hi + margin:
                raise ExtractionError(
                    f"state {name} left the box by more than 10% at t={ts[i+1]:.4f}"
                )
        for g in checkable:
            if g.evaluate(point) < -domain_tol:
                violations.append((float(ts[i + 1]), g.to_string()))
    cost = float(xc[n])
    if p.terminal_cost is not None:
        cost += p.terminal_cost.evaluate((ts[-1], *xs[-1]))
    return ts, xs, cost, violations
