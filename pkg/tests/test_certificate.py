from dataclasses import replace

import numpy as np
import pytest

from modalsos import benchmarks
from modalsos.certificate import (
    Certificate,
    CertificateError,
    arc_residual,
    identity_residual,
    recover,
)
from modalsos.poly import Polynomial
from modalsos.probfile import parse_problem_text
from modalsos.problem import normalize
from modalsos.relaxation import assemble
from modalsos.sdp import solve

ZERO_DYNAMICS = """
[space]
t = time  in [0, 1]
x = state in [-1, 1]

[mode.only]
x' = 0
lagrangian = 1

[set]
ineq = 1 - x^2

[boundary]
initial = point: x = 0
terminal = point: x = 0
horizon = fixed
"""


@pytest.fixture(scope="module")
def chattering_d5():
    sp, maps = normalize(benchmarks.load("chattering"))
    inst, _ = assemble(sp, 5)
    sol = solve(inst)
    assert sol.status == "optimal"
    return sp, inst, sol


class TestRecover:
    def test_zero_dynamics_time_certificate(self):
        # With l = 1 and no motion the bound is T and v is (a shift of) t.
        sp, _ = normalize(parse_problem_text(ZERO_DYNAMICS))
        inst, _ = assemble(sp, 1)
        sol = solve(inst)
        assert sol.status == "optimal"
        assert sol.primal_obj == pytest.approx(1.0, abs=1e-7)
        cert = recover(sol, inst, sp)
        assert max(cert.residuals.values()) < 1e-7
        # dv/dt must match the scaled Lagrangian 0.5 exactly
        assert cert.v.diff("t").coefficient((0, 0)) == pytest.approx(0.5, abs=1e-6)
        assert cert.dual_value == pytest.approx(1.0, abs=1e-7)

    def test_chattering_d3_defect(self):
        sp, _ = normalize(benchmarks.load("chattering"))
        inst, _ = assemble(sp, 3)
        sol = solve(inst)
        cert = recover(sol, inst, sp)
        scale = max(m.lagrangian.max_abs_coeff() for m in sp.modes)
        assert max(cert.residuals.values()) <= 1e-6 * max(1.0, scale)

    def test_trivial_certificate_defect_equals_data(self):
        # v = 0, s = 0: the defect per mode is the Lagrangian itself.
        sp, _ = normalize(benchmarks.load("chattering"))
        tspace = sp.space
        cert = Certificate(
            v=Polynomial.zero(sp.space.subspace(("t", "x"))),
            multipliers={},
            sos_terms={},
            dual_value=0.0,
            gram_min_eig=0.0,
        )
        res = identity_residual(sp, cert)
        for m in sp.modes:
            assert res[m.name] == pytest.approx(m.lagrangian.max_abs_coeff())

    def test_requires_optimal_status(self, chattering_d5):
        sp, inst, sol = chattering_d5
        bad = replace(sol, status="max_iters")
        with pytest.raises(CertificateError):
            recover(bad, inst, sp)


class TestIdentityResidual:
    def test_chattering_d5_accuracy(self, chattering_d5):
        sp, inst, sol = chattering_d5
        cert = recover(sol, inst, sp)
        scale = max(1.0, max(m.lagrangian.max_abs_coeff() for m in sp.modes))
        assert max(cert.residuals.values()) <= 1e-5 * scale
        assert cert.gram_min_eig >= -1e-8
        assert abs(cert.dual_value - sol.primal_obj) <= 1e-6

    def test_perturbation_linearity(self, chattering_d5):
        sp, inst, sol = chattering_d5
        cert = recover(sol, inst, sp)
        base = max(cert.residuals.values())
        eps = 1e-4
        bumped = replace(
            cert, v=cert.v + Polynomial.monomial(cert.v.space, (1, 1), eps)
        )
        res = identity_residual(sp, bumped)
        # d(L'_j v)/d z_alpha has coefficient norm <= 1 + max|f| here
        assert max(res.values()) <= base + eps * (1 + 1.0) + 1e-12

    def test_constant_shift_invariance(self):
        sp, _ = normalize(parse_problem_text(ZERO_DYNAMICS))
        inst, _ = assemble(sp, 2)
        sol = solve(inst)
        cert = recover(sol, inst, sp)
        shifted = replace(cert, v=cert.v + 7.5)
        res = identity_residual(sp, shifted)
        for k in res:
            assert res[k] == pytest.approx(cert.residuals[k], abs=1e-12)
        assert shifted.dual_value == cert.dual_value


def _optimal_scaled_arc(n=4000):
    # scaled chattering optimum: x = -t/2 on [-1, 0], then rest at 0
    t1 = np.linspace(-1.0, 0.0, n // 2 + 1)
    t2 = np.linspace(0.0, 1.0, n // 2 + 1)
    ts = np.concatenate([t1, t2[1:]])
    xs = np.concatenate([-t1 / 2.0, np.zeros(len(t2) - 1)]).reshape(-1, 1)
    duties = np.zeros((len(ts), 2))
    duties[: len(t1)] = (1.0, 0.0)
    duties[len(t1):] = (0.5, 0.5)
    return ts, xs, duties


class TestArcResidual:
    def test_optimal_arc_near_zero(self, chattering_d5):
        sp, inst, sol = chattering_d5
        cert = recover(sol, inst, sp)
        ts, xs, duties = _optimal_scaled_arc()
        r = arc_residual(sp, cert, ts, xs, duties)
        assert 0.0 <= r <= 1e-3

    def test_suboptimal_arc_is_flagged(self, chattering_d5):
        # drive x up with mode 2 until the box edge, then hold: admissible
        # but badly suboptimal, and the running defect must expose it (the
        # arc spends all its time where l - L'v is strictly positive).
        sp, inst, sol = chattering_d5
        cert = recover(sol, inst, sp)
        n = 2000
        t1 = np.linspace(-1.0, 0.0, n + 1)
        t2 = np.linspace(0.0, 1.0, n + 1)
        ts = np.concatenate([t1, t2[1:]])
        xs = np.concatenate([0.5 + 0.5 * (t1 + 1.0), np.ones(n)]).reshape(-1, 1)
        duties = np.zeros((len(ts), 2))
        duties[: n + 1] = (0.0, 1.0)
        duties[n + 1:] = (0.5, 0.5)
        r = arc_residual(sp, cert, ts, xs, duties)
        # independent check: residual = cost - (v at end - v at start)
        cost = np.trapezoid(0.5 * xs[:, 0] ** 2, ts)
        vdiff = cert.v.evaluate((1.0, 1.0)) - cert.v.evaluate((-1.0, 0.5))
        assert r == pytest.approx(cost - vdiff, abs=1e-4)
        assert r >= 0.1

    def test_zero_length_horizon(self, chattering_d5):
        sp, inst, sol = chattering_d5
        cert = recover(sol, inst, sp)
        r = arc_residual(sp, cert, np.array([-1.0]), np.array([[0.5]]),
                         np.array([[1.0, 0.0]]))
        assert r == 0.0

    def test_rejects_arc_outside_domain(self, chattering_d5):
        sp, inst, sol = chattering_d5
        cert = recover(sol, inst, sp)
        ts = np.linspace(-1.0, 1.0, 101)
        xs = np.full((101, 1), 1.5)  # outside |x| <= 1
        duties = np.tile((1.0, 0.0), (101, 1))
        with pytest.raises(CertificateError, match="leaves the domain"):
            arc_residual(sp, cert, ts, xs, duties)

    def test_pointwise_nonnegativity_on_samples(self, chattering_d5):
        # psd Grams + arc inside the domain make the integrand nonnegative
        sp, inst, sol = chattering_d5
        cert = recover(sol, inst, sp)
        rng = np.random.default_rng(3)
        ts = rng.uniform(-1, 1, 200)
        xs = rng.uniform(-1, 1, (200, 1))
        duties = rng.uniform(0, 1, (200, 2))
        duties /= duties.sum(axis=1, keepdims=True)
        from modalsos.poly import lie_derivative

        for m in sp.modes:
            gap = m.lagrangian - lie_derivative(
                cert.v.in_space(sp.space), [f for f in m.dynamics]
            )
            vals = [gap.evaluate((t, x[0])) for t, x in zip(ts, xs)]
            assert min(vals) >= -1e-6


class TestSandwich:
    def test_dual_below_primal_below_arc_cost(self, chattering_d5):
        sp, inst, sol = chattering_d5
        assert sol.dual_obj <= sol.primal_obj + 1e-8
        # any admissible arc cost sits above the bound; take mode-1-only
        ts = np.linspace(-1.0, 1.0, 4001)
        xs = -ts / 2.0
        cost = np.trapezoid(0.5 * xs**2, ts)
        assert sol.primal_obj <= cost + 1e-8
