"""Dual certificates: the polynomial v, its SOS multipliers, and residuals.

At a solved relaxation the dual provides a polynomial v(t, x) (coefficients
are the multipliers of the weak-dynamics rows, plus the redundant-mass
multiplier folded in along t) and one PSD Gram matrix per localizing block.
Together they satisfy, coefficient for coefficient and per mode,

    l_j - L'_j v = sum_i g_i s_{i,j} + sum_k h_k q_{k,j} + integral terms

up to the solver's dual accuracy, where the s_{i,j} are the SOS polynomials
read off the Gram blocks and the q_{k,j} come from equality-row multipliers.
On measures with rewrite rules (pinned supports, lift squares) the identity
holds modulo those exact relations; the defect is therefore reduced by the
measure's rewriter before its coefficients are measured.

The certified lower bound is the dual objective; along any admissible arc
the integrand sum_j duty_j (l_j - L'_j v) is nonnegative up to the Gram
tolerance, and its integral measures how far the arc is from optimality.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .poly import Polynomial, VariableSpace, lie_derivative
from .problem import SwitchedProblem
from .relaxation import (
    SDPInstance,
    _measure_rules,
    _mode_vars,
    _Rewriter,
    _test_space,
)
from .sdp import SDPSolution


class CertificateError(ValueError):
    pass


@dataclass
class Certificate:
    v: Polynomial
    # SOS multiplier polynomials per (measure id, block label), basis' Z basis
    multipliers: dict[tuple[str, str], Polynomial]
    # everything the dual pairs against mode j's moments except l_j itself
    sos_terms: dict[str, Polynomial]
    dual_value: float
    gram_min_eig: float
    residuals: dict[str, float] = field(default_factory=dict)

    def report(self) -> str:
        lines = ["certificate"]
        lines.append(f"  dual value: {self.dual_value!r}")
        lines.append(f"  gram min eigenvalue: {self.gram_min_eig:.3e}")
        lines.append(f"  v = {self.v.to_string()}")
        for mode, r in sorted(self.residuals.items()):
            lines.append(f"  identity residual [{mode}]: {r:.3e}")
        for (mid, label), s in sorted(self.multipliers.items()):
            if not s.is_zero():
                lines.append(f"  s[{mid}, {label}] = {s.to_string()}")
        return "\n".join(lines)


def _block_contribution(blk, Z, meas) -> Polynomial:
    """Polynomial sum over entries coeff * Z[r, c] * monomial(gidx), which is
    exactly what this block adds to the dual constraints of ``meas``."""
    terms: dict[tuple[int, ...], float] = {}
    lo, hi = meas.offset, meas.offset + meas.count
    for r, c, g, v in zip(blk.rows, blk.cols, blk.gidx, blk.coeff):
        if lo <= g < hi:
            exps = meas.monomials[g - lo]
            terms[exps] = terms.get(exps, 0.0) + v * Z[r, c]
    return Polynomial(meas.space, terms)


def _gram_polynomial(blk, Z, space) -> Polynomial:
    out = Polynomial.zero(space)
    s = blk.size
    for a in range(s):
        pa = Polynomial.monomial(space, blk.basis[a])
        for b in range(s):
            if Z[a, b] == 0.0:
                continue
            out = out + pa * Polynomial.monomial(space, blk.basis[b]) * Z[a, b]
    return out


def recover(sol: SDPSolution, inst: SDPInstance, p: SwitchedProblem) -> Certificate:
    """Rebuild (v, SOS multipliers) from the dual solution and verify the
    per-mode Positivstellensatz identity."""
    if sol.status != "optimal":
        raise CertificateError(f"certificate needs an optimal solve, got {sol.status!r}")
    if inst.layout is None:
        raise CertificateError("instance carries no measure layout")
    layout = inst.layout
    tspace = _test_space(p)

    v = Polynomial.zero(tspace)
    for row, z in zip(inst.eq_rows, sol.z):
        if row.label[0] == "dyn":
            v = v + Polynomial.monomial(tspace, row.label[1], z)
        elif row.label[0] == "tmass":
            # the redundant total-mass multiplier acts like z * L'_j(t)
            v = v + Polynomial.variable(tspace, tspace.time) * z

    multipliers: dict[tuple[str, str], Polynomial] = {}
    sos_terms = {m.mode_name: Polynomial.zero(layout.measure(f"mode:{m.mode_name}").space)
                 for m in layout.modal}
    gram_min = np.inf
    for blk, Z in zip(inst.blocks, sol.grams):
        gram_min = min(gram_min, float(np.linalg.eigvalsh(0.5 * (Z + Z.T))[0]))
        for meas in layout.measures:
            contrib = _block_contribution(blk, Z, meas)
            if contrib.is_zero():
                continue
            if meas.kind == "mode":
                sos_terms[meas.mode_name] = sos_terms[meas.mode_name] + contrib
            if blk.measure_id == meas.id:
                multipliers[(meas.id, blk.label)] = _gram_polynomial(blk, Z, meas.space)

    # equality-localizing and integral rows also pair against modal moments
    for row, z in zip(inst.eq_rows, sol.z):
        if z == 0.0:
            continue
        if row.label[0] in ("eqloc", "integral"):
            for meas in layout.modal:
                terms = {}
                lo, hi = meas.offset, meas.offset + meas.count
                for g, cval in zip(row.cols, row.vals):
                    if lo <= g < hi:
                        terms[meas.monomials[g - lo]] = terms.get(
                            meas.monomials[g - lo], 0.0
                        ) + cval * z
                if terms:
                    sos_terms[meas.mode_name] = sos_terms[meas.mode_name] + Polynomial(
                        meas.space, terms
                    )

    cert = Certificate(
        v=v,
        multipliers=multipliers,
        sos_terms=sos_terms,
        dual_value=sol.dual_obj,
        gram_min_eig=gram_min,
    )
    cert.residuals = identity_residual(p, cert)
    return cert


def identity_residual(p: SwitchedProblem, cert: Certificate) -> dict[str, float]:
    """Max absolute defect coefficient of l_j - L'_j v - (dual terms), per
    mode, after reducing by the measure's exact rewrite rules."""
    residuals = {}
    for m in p.modes:
        names = _mode_vars(p, m)
        space = p.space.subspace(names)
        fs = [f.in_space(space) for f in m.dynamics]
        lie_v = lie_derivative(cert.v.in_space(space), fs)
        defect = m.lagrangian.in_space(space) - lie_v
        sos = cert.sos_terms.get(m.name)
        if sos is not None:
            defect = defect - sos.in_space(space)
        # measure the defect modulo the exact support relations
        rules, _ = _measure_rules(p, _StubMeasure(space, m.name))
        defect = _Rewriter(space, rules).poly(defect)
        residuals[m.name] = defect.max_abs_coeff()
    return residuals


class _StubMeasure:
    """Just enough of a Measure for _measure_rules (kind, space, mode)."""

    kind = "mode"

    def __init__(self, space: VariableSpace, mode_name: str):
        self.space = space
        self.mode_name = mode_name


def arc_residual(
    p: SwitchedProblem,
    cert: Certificate,
    ts: np.ndarray,
    xs: np.ndarray,
    duties: np.ndarray,
    tol: float = 1e-6,
) -> float:
    """Trapezoid quadrature of sum_j duty_j (l_j - L'_j v) along an arc.

    ``ts``/``xs``/``duties`` sample a relaxed arc of the (scaled) problem on
    a time grid; near-zero output certifies near-optimality (the integrand
    is pointwise nonnegative on the domain up to the Gram tolerance).
    Raises if the arc leaves the domain by more than ``tol``.
    """
    tspace = _test_space(p)
    gap_polys = []
    for m in p.modes:
        lie_v = lie_derivative(cert.v, [f.in_space(tspace) for f in m.dynamics])
        gap_polys.append(m.lagrangian.in_space(tspace) - lie_v)

    checkable = [g for g in p.shared_set.inequalities
                 if g.variables_used() <= set(tspace.names)]
    vals = np.zeros(len(ts))
    for i, (t, x) in enumerate(zip(ts, xs)):
        point = (t, *x)
        for g in checkable:
            if g.in_space(tspace).evaluate(point) < -tol:
                raise CertificateError(
                    f"arc leaves the domain at t={t:.4f}: {g.to_string()} < 0"
                )
        vals[i] = sum(w * q.evaluate(point) for w, q in zip(duties[i], gap_polys))
    return float(np.trapezoid(vals, ts))
