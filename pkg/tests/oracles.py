"""Independent oracles shared by the test suite.

Everything here deliberately avoids the library's relaxation/solver code
paths: arcs are integrated with a local RK4, measure moments come from
composite Simpson quadrature, and costs from the same quadrature.  The
helpers work on the ORIGINAL problem and map points into scaled coordinates
only when building moment vectors for an assembled instance.
"""

from __future__ import annotations

import numpy as np

from modalsos.problem import FixedPoint, ScalingMaps, SwitchedProblem
from modalsos.relaxation import MeasureLayout, SDPInstance


class Segment:
    """Piecewise-constant piece of a relaxed arc: duty cycles + controls."""

    def __init__(self, duration, duty, controls=None):
        self.duration = float(duration)
        self.duty = tuple(duty)
        self.controls = dict(controls or {})


def simulate_arc(p: SwitchedProblem, segments, x0, steps_per_unit=2000, lift_fn=None):
    """RK4 integration of dx/dt = sum_j duty_j f_j on the original problem.

    Returns a list of (ts, xs) arrays, one per segment, with grid points
    shared at the joints.  ``lift_fn(x) -> dict`` supplies algebraic lift
    values; controls are per-segment constants.
    """
    states = p.space.states
    arcs = []
    x = np.asarray(x0, dtype=float)
    t = 0.0
    for seg in segments:
        n = max(8, int(round(steps_per_unit * seg.duration)))
        if n % 2:
            n += 1  # Simpson wants an even interval count
        ts = t + np.linspace(0.0, seg.duration, n + 1)
        xs = np.empty((n + 1, len(states)))
        xs[0] = x
        h = seg.duration / n

        def rhs(tt, xx):
            point = _point(p, tt, xx, seg.controls, lift_fn)
            out = np.zeros(len(states))
            for w, m in zip(seg.duty, p.modes):
                if w == 0.0:
                    continue
                for i, f in enumerate(m.dynamics):
                    out[i] += w * f.evaluate(point)
            return out

        for i in range(n):
            tt = ts[i]
            k1 = rhs(tt, xs[i])
            k2 = rhs(tt + h / 2, xs[i] + h / 2 * k1)
            k3 = rhs(tt + h / 2, xs[i] + h / 2 * k2)
            k4 = rhs(tt + h, xs[i] + h * k3)
            xs[i + 1] = xs[i] + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        arcs.append((ts, xs))
        x = xs[-1]
        t = ts[-1]
    return arcs


def _point(p, t, x, controls, lift_fn):
    values = {p.space.time: t}
    for name, v in zip(p.space.states, x):
        values[name] = v
    if lift_fn is not None:
        values.update(lift_fn(x))
    values.update(controls)
    return tuple(values.get(n, 0.0) for n in p.space.names)


def arc_cost(p: SwitchedProblem, segments, arcs, lift_fn=None):
    """Simpson quadrature of sum_j duty_j l_j along the arc (original units)."""
    total = 0.0
    for seg, (ts, xs) in zip(segments, arcs):
        vals = np.zeros(len(ts))
        for i, (tt, xx) in enumerate(zip(ts, xs)):
            point = _point(p, tt, xx, seg.controls, lift_fn)
            vals[i] = sum(
                w * m.lagrangian.evaluate(point) for w, m in zip(seg.duty, p.modes)
            )
        total += _simpson(vals, ts[1] - ts[0])
    if p.terminal_cost is not None:
        ts, xs = arcs[-1]
        point = _point(p, ts[-1], xs[-1], {}, lift_fn)
        total += p.terminal_cost.evaluate(point)
    return total


def _simpson(vals, h):
    n = len(vals) - 1
    assert n % 2 == 0
    return h / 3 * (vals[0] + vals[-1] + 4 * vals[1:-1:2].sum() + 2 * vals[2:-1:2].sum())


def arc_moment_vector(
    p: SwitchedProblem,
    sp: SwitchedProblem,
    maps: ScalingMaps,
    layout: MeasureLayout,
    segments,
    arcs,
    lift_fn=None,
):
    """Quadrature moments of the modal/boundary measures of a relaxed arc.

    The measures live on the scaled problem ``sp``; the arc was simulated on
    the original ``p``.  Modal masses carry the 1/time_scale factor from
    dt_scaled = dt / time_scale.
    """
    y = np.zeros(layout.total)
    s_t = maps.time_scale
    for meas in layout.measures:
        names = meas.space.names
        if meas.kind == "mode":
            j = [m.name for m in p.modes].index(meas.mode_name)
            for seg, (ts, xs) in zip(segments, arcs):
                w = seg.duty[j]
                if w == 0.0:
                    continue
                cols = _scaled_columns(p, maps, names, ts, xs, seg.controls, lift_fn)
                h_scaled = (ts[1] - ts[0]) / s_t
                for k, exps in enumerate(meas.monomials):
                    vals = np.ones(len(ts))
                    for c, e in zip(cols, exps):
                        if e:
                            vals = vals * c**e
                    y[meas.offset + k] += w * _simpson(vals, h_scaled)
        else:
            if meas.kind == "initial":
                ts, xs = arcs[0]
                tt, xx = ts[0], xs[0]
            else:
                ts, xs = arcs[-1]
                tt, xx = ts[-1], xs[-1]
            cols = _scaled_columns(
                p, maps, names, np.array([tt]), xx.reshape(1, -1), {}, lift_fn
            )
            for k, exps in enumerate(meas.monomials):
                v = 1.0
                for c, e in zip(cols, exps):
                    if e:
                        v *= c[0] ** e
                y[meas.offset + k] += v
    return y


def _scaled_columns(p, maps, names, ts, xs, controls, lift_fn):
    state_idx = {n: i for i, n in enumerate(p.space.states)}
    cols = []
    for n in names:
        if n == p.space.time:
            orig = ts
        elif n in state_idx:
            orig = xs[:, state_idx[n]]
        elif n in controls:
            orig = np.full(len(ts), controls[n])
        elif lift_fn is not None:
            orig = np.array([lift_fn(x).get(n, 0.0) for x in xs])
        else:
            raise KeyError(f"no value source for variable {n!r}")
        cols.append((orig - maps.centers[n]) / maps.halfwidths[n])
    return cols


def feasibility_of(inst: SDPInstance, y: np.ndarray):
    """(max |equality residual|, min PSD-block eigenvalue) of a moment vector."""
    max_eq = 0.0
    for r in inst.eq_rows:
        max_eq = max(max_eq, abs(float(r.vals @ y[r.cols]) - r.rhs))
    min_eig = np.inf
    for b in inst.blocks:
        w = np.linalg.eigvalsh(b.mat(y))
        min_eig = min(min_eig, float(w[0]))
    return max_eq, min_eig


def chattering_optimal_moment_vector(layout: MeasureLayout):
    """Closed-form scaled moments of the optimal chattering arc.

    Mode 'down' carries weight 1 on scaled time [-1, 0] with x = -t/2, and
    weight 1/2 on [0, 1] with x = 0; mode 'up' carries weight 1/2 on [0, 1]
    with x = 0; the terminal measure is the Dirac at (1, 0).
    """
    y = np.zeros(layout.total)
    for meas in layout.measures:
        for k, (a, b) in enumerate(meas.monomials):
            if meas.id == "mode:down":
                left = (-0.5) ** b * (-1.0) ** (a + b) / (a + b + 1)
                right = 0.5 / (a + 1) if b == 0 else 0.0
                y[meas.offset + k] = left + right
            elif meas.id == "mode:up":
                y[meas.offset + k] = 0.5 / (a + 1) if b == 0 else 0.0
            else:  # terminal Dirac at (1, 0)
                y[meas.offset + k] = 1.0 if b == 0 else 0.0
    return y
