import math

import numpy as np
import pytest
from scipy.optimize import linprog

from modalsos import benchmarks
from modalsos.extraction import (
    DiscreteMeasureSet,
    ExtractionError,
    Mesh,
    build_extraction_lp,
    build_mesh,
    extract,
    marginal_moments,
    reconstruct,
    simulate_relaxed,
    solve_lp,
    time_extent_from_moments,
)
from modalsos.probfile import parse_problem_text
from modalsos.problem import normalize
from modalsos.relaxation import build_layout


class TestMesh:
    def test_default_resolution(self):
        mesh = build_mesh(1, eps=1 / 40)
        # scaled range 2, node spacing 2*eps*2 = 0.1: 20 cells, 21 nodes
        assert mesh.n_cells == 20
        assert len(mesh.state_axes[0]) == 21
        assert mesh.delta_t == pytest.approx(np.full(20, 0.1))

    def test_free_horizon_extent(self):
        mesh = build_mesh(2, eps=1 / 40, time_extent=(-1.0, 0.4))
        assert mesh.time_edges[0] == -1.0
        assert mesh.time_edges[-1] == pytest.approx(0.4)
        assert (mesh.delta_t > 0).all()

    def test_every_point_within_eps(self):
        mesh = build_mesh(1, eps=1 / 20)
        axis = mesh.state_axes[0]
        probes = np.linspace(-1, 1, 257)
        dist = np.abs(probes[:, None] - axis[None, :]).min(axis=1)
        assert dist.max() <= 2 / 20 + 1e-12


def _dirac_moment_vector(sp, layout, t0, x0):
    """Moments of (mode 'down' carrying a unit Dirac at (t0, x0)); the other
    measures stay empty except where normalization demands nothing."""
    y = np.zeros(layout.total)
    meas = layout.measure("mode:down")
    for k, exps in enumerate(meas.monomials):
        y[meas.offset + k] = t0 ** exps[0] * x0 ** exps[1]
    return y


class TestExtractionLP:
    @pytest.fixture(scope="class")
    def setup(self, chattering_pipeline):
        _, sp, _ = chattering_pipeline
        layout = build_layout(sp, 2)
        return sp, layout

    def test_dirac_exactly_representable(self, setup):
        sp, layout = setup
        # one atom on the mesh: time node of cell 3, state node 0.3
        mesh = build_mesh(1, eps=1 / 40)
        t0 = mesh.time_nodes[3]
        x0 = 0.3  # a node of the default axis? ensure it is
        assert any(abs(x0 - v) < 1e-12 for v in mesh.state_axes[0])
        y = _dirac_moment_vector(sp, layout, t0, x0)
        # marginal rows require mass delta_t per cell: scale the Dirac into
        # cell 3 and pad the remaining cells uniformly via mode 'up'
        lp = build_extraction_lp(sp, layout, y, mesh, r=2)
        # drop marginal rows for this representability check: match moments
        n_rows = len(lp.gammas) * 2
        A = lp.A[:n_rows]
        b = lp.b[:n_rows]
        from modalsos.simplex import solve_standard_lp

        res = solve_standard_lp(A, b, lp.c)
        assert res.status == "optimal"
        assert res.obj < 1e-9  # exact representation, zero mismatch
        w = res.x[: lp.n_weights].reshape(2, mesh.n_cells, -1)
        nz = np.flatnonzero(w[0].ravel() > 1e-8)
        assert len(nz) == 1

    def test_marginal_only_lp(self, setup):
        sp, layout = setup
        mesh = build_mesh(1, eps=1 / 10)
        y = np.zeros(layout.total)
        for meas in layout.modal:
            y[meas.offset] = 1.0  # masses only; r=0 matches nothing else
        lp = build_extraction_lp(sp, layout, y, mesh, r=0)
        dm = solve_lp(lp)
        per_cell = dm.weights.sum(axis=(0, 2))
        assert per_cell == pytest.approx(mesh.delta_t)

    def test_uniform_measure_against_scipy_oracle(self, setup):
        # both modes carry half the uniform measure on [-1,1]^2; the LP
        # solution must match an independent solver's optimum
        sp, layout = setup
        mesh = build_mesh(1, eps=1 / 8)
        y = np.zeros(layout.total)
        for meas in layout.modal:
            for k, (a, b_) in enumerate(meas.monomials):
                iv_t = (1 - (-1) ** (a + 1)) / (a + 1) / 2  # mean of t^a on [-1,1]
                iv_x = (1 - (-1) ** (b_ + 1)) / (b_ + 1) / 2
                y[meas.offset + k] = 0.5 * 2 * iv_t * iv_x
        lp = build_extraction_lp(sp, layout, y, mesh, r=2)
        dm = solve_lp(lp)
        ref = linprog(lp.c, A_eq=lp.A, b_eq=lp.b, bounds=(0, None), method="highs")
        assert ref.status == 0
        assert dm.mismatch == pytest.approx(ref.fun, abs=1e-8)
        # near-uniform: duty cycles about (1/2, 1/2) everywhere
        duty = reconstruct(dm).duty_cycles
        assert np.abs(duty - 0.5).max() < 0.2

    def test_degree_guard(self, setup):
        sp, layout = setup
        mesh = build_mesh(1, eps=1 / 10)
        y = np.zeros(layout.total)
        with pytest.raises(ExtractionError, match="exceeds"):
            build_extraction_lp(sp, layout, y, mesh, r=layout.d + 1)

    def test_state_refinement_never_increases_mismatch(self, chattering_solved, chattering_pipeline):
        _, sp, _ = chattering_pipeline
        inst, _, sol = chattering_solved[3]
        layout = inst.layout
        coarse = build_mesh(1, eps=1 / 10)
        fine = Mesh(coarse.time_edges, [np.linspace(-1, 1, 41)], coarse.eps)
        m_coarse = solve_lp(build_extraction_lp(sp, layout, sol.y, coarse, r=2)).mismatch
        m_fine = solve_lp(build_extraction_lp(sp, layout, sol.y, fine, r=2)).mismatch
        assert m_fine <= m_coarse + 1e-9


class TestReconstruct:
    def _single_cell_mesh(self):
        return Mesh(np.array([-1.0, 1.0]), [np.linspace(-1, 1, 21)], 0.5)

    def test_point_mass(self):
        mesh = self._single_cell_mesh()
        w = np.zeros((2, 1, 21))
        k = int(np.argmin(np.abs(mesh.state_axes[0] - 0.3)))
        w[0, 0, k] = 2.0  # all of delta_t = 2
        res = reconstruct(DiscreteMeasureSet(mesh, ["down", "up"], w, 0.0))
        assert res.way_points[0, 0] == pytest.approx(0.3, abs=1e-12)
        assert res.duty_cycles[0] == pytest.approx([1.0, 0.0])

    def test_equal_modes_at_origin(self):
        mesh = self._single_cell_mesh()
        w = np.zeros((2, 1, 21))
        k = int(np.argmin(np.abs(mesh.state_axes[0])))
        w[0, 0, k] = 1.0
        w[1, 0, k] = 1.0
        res = reconstruct(DiscreteMeasureSet(mesh, ["down", "up"], w, 0.0))
        assert res.way_points[0, 0] == pytest.approx(0.0)
        assert res.duty_cycles[0] == pytest.approx([0.5, 0.5])
        assert res.duty_cycles.sum(axis=1) == pytest.approx([1.0])


class TestChatteringExtraction:
    def test_duty_cycle_pattern(self, chattering_solved, chattering_pipeline):
        # the published optimal plan: mode 'down' alone before t=0.5, then
        # an equal chatter; cells straddling the switch are left out
        p, sp, maps = chattering_pipeline
        inst, _, sol = chattering_solved[5]
        res = extract(sp, inst.layout, sol.y, eps=1 / 40)
        t_orig = np.array([maps.to_original("t", t) for t in res.time_nodes])
        duty = res.duty_cycles
        early = t_orig < 0.45
        late = t_orig > 0.55
        assert np.abs(duty[early, 0] - 1.0).max() < 0.05
        assert np.abs(duty[late, 0] - 0.5).max() < 0.05
        assert np.abs(duty[late, 1] - 0.5).max() < 0.05
        assert res.mismatch < 1e-2

    def test_way_points_follow_optimal_arc(self, chattering_solved, chattering_pipeline):
        p, sp, maps = chattering_pipeline
        inst, _, sol = chattering_solved[5]
        res = extract(sp, inst.layout, sol.y, eps=1 / 40)
        t_orig = np.array([maps.to_original("t", t) for t in res.time_nodes])
        x_exact = np.where(t_orig < 0.5, 0.5 - t_orig, 0.0)
        assert np.abs(res.way_points[:, 0] - x_exact).max() < 0.1


class TestSimulateRelaxed:
    def test_chattering_optimal_cost(self, chattering_pipeline):
        p, _, _ = chattering_pipeline

        def duty(t):
            return (1.0, 0.0) if t < 0.5 else (0.5, 0.5)

        ts, xs, cost, violations = simulate_relaxed(p, duty, dt=1e-4)
        assert cost == pytest.approx(1 / 24, abs=1e-3)
        assert not violations

    def test_exponential_mode_cost(self):
        # single multiplicative mode x' = -x from 1/2: closed-form cost
        text = """
[space]
t = time  in [0, 1]
x = state in [-1, 1]

[mode.decay]
x' = -x
lagrangian = x^2

[set]
ineq = 1 - x^2

[boundary]
initial = point: x = 0.5
terminal = free
horizon = fixed
"""
        p = parse_problem_text(text)
        ts, xs, cost, _ = simulate_relaxed(p, lambda t: (1.0,), dt=1e-4)
        assert cost == pytest.approx((1 - math.exp(-2)) / 8, abs=1e-6)

    def test_double_integrator_bang_chatter_bang(self, double_integrator_pipeline):
        p, _, _ = double_integrator_pipeline

        def duty(t):
            if t < 2.0:
                return (1.0, 0.0)
            if t < 2.5:
                return (0.5, 0.5)
            return (0.0, 1.0)

        ts, xs, cost, violations = simulate_relaxed(p, duty, dt=1e-4, t_end=3.5)
        assert cost == pytest.approx(3.5, abs=1e-6)
        assert np.abs(xs[-1]).max() < 1e-3
        assert not violations

    def test_duty_must_sum_to_one(self, chattering_pipeline):
        p, _, _ = chattering_pipeline
        with pytest.raises(ExtractionError, match="sum"):
            simulate_relaxed(p, lambda t: (0.7, 0.7), dt=1e-3)

    def test_blow_up_detection(self, chattering_pipeline):
        p, _, _ = chattering_pipeline
        # mode 'up' alone pushes x through the box edge
        with pytest.raises(ExtractionError, match="left the box"):
            simulate_relaxed(p, lambda t: (0.0, 1.0), dt=1e-3)

    def test_domain_violations_flagged(self, chattering_pipeline):
        p, _, _ = chattering_pipeline

        def duty(t):  # ride the boundary then lean outward slightly
            return (0.0, 1.0) if t < 0.5 else (0.45, 0.55)

        ts, xs, cost, violations = simulate_relaxed(p, duty, dt=1e-3)
        assert violations  # x exceeds 1 slightly but stays within 10%


class TestFreeHorizonExtent:
    def test_extent_matches_masses(self, double_integrator_solved, double_integrator_pipeline):
        _, sp, maps = double_integrator_pipeline
        inst, _, sol = double_integrator_solved[4]
        lo, hi = time_extent_from_moments(sp, inst.layout, sol.y)
        assert lo == -1.0
        # total scaled mass = T*/s_t = 3.5/2.5 = 1.4
        assert hi == pytest.approx(-1.0 + 3.5 / 2.5, abs=2e-3)
