"""Dense primal-dual interior-point solver for block-diagonal moment SDPs.

Solves instances of the form

    min  c.y   s.t.   A y = b,    M_k(y) := sum_g A_{k,g} y_g + C_k  psd

together with the conic dual

    max  b.z - sum_k <C_k, Z_k>   s.t.   A'z + sum_k adj_k(Z_k) = c,  Z_k psd

using a Mehrotra predictor-corrector with the HKM direction, dense per-block
Cholesky factorizations, a dense Schur-complement KKT solve with one step of
iterative refinement, and best-iterate tracking (moment optima are typically
singular, so late iterations can degrade numerically).  Redundant equality
rows (the assembly deliberately includes some) are removed up front by a
rank-revealing QR; their multipliers are reported as zero.

Desk-scale instances only: a few thousand moments, blocks up to a few
hundred.  Everything is deterministic for fixed inputs and settings.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .relaxation import SDPInstance


class SdpNumericalError(RuntimeError):
    """Linear algebra failed irrecoverably; carries iterate diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class SolverSettings:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iters: int = 200
    step_fraction: float = 0.98
    init_scale: float = 10.0
    verbose: bool = False

    def __post_init__(self):
        if self.gap_tol <= 0 or self.feas_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.step_fraction < 1:
            raise ValueError("step_fraction must lie in (0, 1)")


@dataclass
class SDPSolution:
    y: np.ndarray
    z: np.ndarray
    grams: list[np.ndarray]
    slacks: list[np.ndarray]
    primal_obj: float
    dual_obj: float
    status: str  # optimal | max_iters | infeasible-detected | unbounded-detected
    iterations: int
    history: list[dict] = field(default_factory=list)
    wall_time: float = 0.0


class _Block:
    """Per-block compiled data: dense coefficient tensor over touched moments.

    ``gmap`` (optional) translates instance moment indices into reduced
    variable positions.
    """

    def __init__(self, form, gmap=None):
        self.form = form
        self.size = form.size
        gidx = form.gidx if gmap is None else gmap[form.gidx]
        if gmap is not None and (gidx < 0).any():
            raise SdpNumericalError("block references a non-reduced moment")
        self.touched = np.unique(gidx)
        loc = np.searchsorted(self.touched, gidx)
        self.tensor = np.zeros((len(self.touched), self.size, self.size))
        np.add.at(self.tensor, (loc, form.rows, form.cols), form.coeff)
        self.flat = self.tensor.reshape(len(self.touched), -1)
        self.const = form.const if form.const is not None else None

    def mat(self, y):
        M = np.tensordot(y[self.touched], self.tensor, axes=1)
        if self.const is not None:
            M = M + self.const
        return M

    def linmat(self, y):
        return np.tensordot(y[self.touched], self.tensor, axes=1)

    def adjoint_into(self, Z, out):
        out[self.touched] += self.flat @ Z.ravel()

    def add_h(self, Sinv, Z, H):
        B = np.einsum("ab,ibc,cd->iad", Z, self.tensor, Sinv, optimize=True)
        B = 0.5 * (B + B.transpose(0, 2, 1))
        Hloc = self.flat @ B.reshape(len(self.touched), -1).T
        H[np.ix_(self.touched, self.touched)] += 0.5 * (Hloc + Hloc.T)


def _chol(M):
    return np.linalg.cholesky(0.5 * (M + M.T))


def _try_chol(M):
    try:
        return _chol(M)
    except np.linalg.LinAlgError:
        return None


def _max_step(X_chol, dX):
    """Largest a with X + a dX psd, given the Cholesky factor of X."""
    W = sla.solve_triangular(X_chol, dX, lower=True)
    W = sla.solve_triangular(X_chol, W.T, lower=True)
    lam = np.linalg.eigvalsh(0.5 * (W + W.T))[0]
    if lam >= -1e-13:
        return np.inf
    return -1.0 / lam


def _reduce_rows(A, b, feas_tol):
    """Pick a maximal independent row subset; verify the rest is consistent.

    Returns (kept_idx, consistent).  Row norms are equilibrated first so the
    rank decision is scale-free.
    """
    m = A.shape[0]
    if m == 0:
        return np.array([], dtype=np.intp), True
    norms = np.maximum(np.abs(A).max(axis=1), 1e-300)
    As = A / norms[:, None]
    _, R, piv = sla.qr(As.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        rank = 0
    else:
        rank = int((diag > max(A.shape) * np.finfo(float).eps * diag[0]).sum())
    kept = np.sort(piv[:rank])
    dropped = np.sort(piv[rank:])
    if dropped.size:
        W, *_ = np.linalg.lstsq(As[kept].T, As[dropped].T, rcond=None)
        resid = (b[dropped] / norms[dropped]) - W.T @ (b[kept] / norms[kept])
        if np.abs(resid).max() > 1e3 * feas_tol * (1 + np.abs(b).max()):
            return kept, False
    return kept, True


class _KKT:
    """Schur-complement solve of [[-H, A'], [A, 0]] with Jacobi equilibration
    of H and iterative refinement (the endgame H is very ill-conditioned)."""

    def __init__(self, H, A):
        self.H = H
        self.A = A
        d = np.sqrt(np.maximum(np.diag(H), 1e-300))
        self.dinv = 1.0 / d
        Hs = H * self.dinv[:, None] * self.dinv[None, :]
        jitter = 0.0
        for _ in range(10):
            Hc = _try_chol(Hs + jitter * np.eye(H.shape[0]))
            if Hc is not None:
                break
            jitter = max(jitter * 10, 1e-14)
        else:
            raise np.linalg.LinAlgError("H not positive definite")
        self.Hc = Hc
        self.As = A * self.dinv[None, :]
        if A.shape[0] == 0:
            self.Sc = None
            return
        U = sla.cho_solve((Hc, True), self.As.T)
        schur = self.As @ U
        jitter = 0.0
        base = max(np.abs(schur).max(), 1.0)
        for _ in range(10):
            Sc = _try_chol(schur + jitter * np.eye(schur.shape[0]))
            if Sc is not None:
                break
            jitter = max(jitter * 10, 1e-14 * base)
        else:
            raise np.linalg.LinAlgError("Schur complement not positive definite")
        self.Sc = Sc

    def _solve_once(self, g, r_p):
        gs = g * self.dinv
        if self.Sc is None:
            dy = -sla.cho_solve((self.Hc, True), gs) * self.dinv
            return dy, np.zeros(0)
        hg = sla.cho_solve((self.Hc, True), gs)
        dz = sla.cho_solve((self.Sc, True), r_p + self.As @ hg)
        dy = sla.cho_solve((self.Hc, True), self.As.T @ dz - gs) * self.dinv
        return dy, dz

    def solve(self, g, r_p):
        dy, dz = self._solve_once(g, r_p)
        scale = max(np.abs(g).max(initial=0.0), np.abs(r_p).max(initial=0.0), 1e-300)
        for _ in range(3):
            res1 = g + self.H @ dy - self.A.T @ dz
            res2 = r_p - self.A @ dy
            err = max(np.abs(res1).max(initial=0.0), np.abs(res2).max(initial=0.0))
            if err < 1e-13 * scale:
                break
            ey, ez = self._solve_once(res1, res2)
            dy = dy + ey
            dz = dz + ez
        return dy, dz


def solve(inst: SDPInstance, settings: SolverSettings | None = None) -> SDPSolution:
    """Solve the instance; see the module docstring for the formulation."""
    s = settings or SolverSettings()
    t0 = time.perf_counter()
    n_full = inst.n
    red = inst.reduction

    m_all = len(inst.eq_rows)
    A_full = np.zeros((m_all, n_full))
    b_full = np.zeros(m_all)
    for i, r in enumerate(inst.eq_rows):
        A_full[i, r.cols] = r.vals
        b_full[i] = r.rhs
    c_full = np.asarray(inst.cost, dtype=float)
    if red is not None:
        # work on the reduced variables: y_full = expand @ y + offset
        b_full = b_full - A_full @ red.offset
        A_full = A_full @ red.expand
        obj_const = float(c_full @ red.offset)
        c = red.expand.T @ c_full
        n = red.n_red
        gmap = np.full(n_full, -1, dtype=np.intp)
        gmap[red.reduced_idx] = np.arange(n)
        blocks = [_Block(f, gmap) for f in inst.blocks]
    else:
        obj_const = 0.0
        c = c_full
        n = n_full
        blocks = [_Block(f, None) for f in inst.blocks]

    kept, consistent = _reduce_rows(A_full, b_full, s.feas_tol)
    if not consistent:
        return SDPSolution(
            np.zeros(n_full), np.zeros(m_all), [], [],
            np.nan, np.nan, "infeasible-detected", 0, [], time.perf_counter() - t0,
        )
    A = A_full[kept]
    b = b_full[kept]

    total_dim = sum(bk.size for bk in blocks)
    data_scale = max(
        1.0,
        float(np.abs(b).max(initial=0.0)),
        float(np.abs(c).max(initial=0.0)),
    )

    y = np.zeros(n)
    z = np.zeros(len(kept))
    tau = s.init_scale * data_scale
    S = [tau * np.eye(bk.size) for bk in blocks]
    Z = [tau * np.eye(bk.size) for bk in blocks]

    def residuals(y, z, S, Z):
        r_p = b - A @ y
        R = [bk.mat(y) - Sk for bk, Sk in zip(blocks, S)]
        r_d = c - A.T @ z
        for bk, Zk in zip(blocks, Z):
            tmp = np.zeros(n)
            bk.adjoint_into(Zk, tmp)
            r_d -= tmp
        return r_p, R, r_d

    def merits(y, z, S, Z, r_p, R, r_d):
        p_obj = float(c @ y)
        d_obj = float(b @ z) - sum(
            float(np.tensordot(bk.const, Zk))
            for bk, Zk in zip(blocks, Z)
            if bk.const is not None
        )
        gap = abs(p_obj - d_obj) / (1 + abs(p_obj) + abs(d_obj))
        pinf = float(np.abs(r_p).max(initial=0.0)) / (1 + np.abs(b).max(initial=0.0))
        pinf = max(
            pinf,
            max((float(np.abs(Rk).max()) for Rk in R), default=0.0) / (1 + data_scale),
        )
        dinf = float(np.abs(r_d).max(initial=0.0)) / (1 + np.abs(c).max(initial=0.0))
        return p_obj, d_obj, gap, pinf, dinf

    history = []
    status = "max_iters"
    best = None  # (score, y, z, S, Z, p, d, it)
    it = 0
    degrade = 0
    for it in range(1, s.max_iters + 1):
        r_p, R, r_d = residuals(y, z, S, Z)
        mu = sum(float(np.tensordot(Sk, Zk)) for Sk, Zk in zip(S, Z)) / total_dim
        p_obj, d_obj, gap, pinf, dinf = merits(y, z, S, Z, r_p, R, r_d)
        score = max(gap, pinf, dinf)
        history.append(
            {"iter": it, "p": p_obj, "d": d_obj, "gap": gap, "pinf": pinf,
             "dinf": dinf, "mu": mu}
        )
        if s.verbose:
            print(f"  it {it:3d}  p {p_obj:+.9e}  d {d_obj:+.9e}  "
                  f"gap {gap:.2e}  pinf {pinf:.2e}  dinf {dinf:.2e}  mu {mu:.2e}")
        if best is None or score < best[0]:
            best = (score, y.copy(), z.copy(), [Sk.copy() for Sk in S],
                    [Zk.copy() for Zk in Z], p_obj, d_obj, it)
            degrade = 0
        else:
            degrade += 1
        if gap <= s.gap_tol and pinf <= s.feas_tol and dinf <= s.feas_tol:
            status = "optimal"
            break
        if degrade >= 14:
            break  # numerically stuck near the optimum; keep the best iterate
        if np.abs(y).max(initial=0.0) > 1e12 * data_scale and pinf > 1e-4:
            status = "infeasible-detected"
            break
        if abs(p_obj) > 1e12 * data_scale and pinf <= s.feas_tol:
            status = "unbounded-detected"
            break

        try:
            S_chol = [_chol(Sk) for Sk in S]
            Sinv = [sla.cho_solve((L, True), np.eye(L.shape[0])) for L in S_chol]
            Z_chol = [_chol(Zk) for Zk in Z]

            H = np.zeros((n, n))
            for bk, Si, Zk in zip(blocks, Sinv, Z):
                bk.add_h(Si, Zk, H)
            kkt = _KKT(H, A)

            def direction(mu_target, corr=None):
                # base_k = mu Sinv - Z (- Mehrotra correction); the slack
                # residual R enters dZ only through dS = linmat(dy) + R.
                base = []
                g = r_d.copy()
                for k in range(len(blocks)):
                    bk = mu_target * Sinv[k] - Z[k]
                    if corr is not None:
                        dZa, dSa = corr[k]
                        ZdS = dZa @ dSa @ Sinv[k]
                        bk = bk - 0.5 * (ZdS + ZdS.T)
                    base.append(bk)
                    ZRS = Z[k] @ R[k] @ Sinv[k]
                    Ek = bk - 0.5 * (ZRS + ZRS.T)
                    tmp = np.zeros(n)
                    blocks[k].adjoint_into(Ek, tmp)
                    g -= tmp
                dy, dz = kkt.solve(g, r_p)
                dS = [blocks[k].linmat(dy) + R[k] for k in range(len(blocks))]
                dZ = []
                for k in range(len(blocks)):
                    ZdSS = Z[k] @ dS[k] @ Sinv[k]
                    dZ.append(base[k] - 0.5 * (ZdSS + ZdSS.T))
                return dy, dz, dS, dZ

            dy_a, dz_a, dS_a, dZ_a = direction(0.0)
            a_p = min((_max_step(L, D) for L, D in zip(S_chol, dS_a)), default=np.inf)
            a_d = min((_max_step(L, D) for L, D in zip(Z_chol, dZ_a)), default=np.inf)
            a_p = min(1.0, s.step_fraction * a_p)
            a_d = min(1.0, s.step_fraction * a_d)
            mu_aff = sum(
                float(np.tensordot(Sk + a_p * dSk, Zk + a_d * dZk))
                for Sk, dSk, Zk, dZk in zip(S, dS_a, Z, dZ_a)
            ) / total_dim
            sigma = min(1.0, max(1e-8, (max(mu_aff, 0.0) / mu) ** 3))
            # keep the barrier up while feasibility lags the gap, else the
            # tiny slacks poison the dual direction's accuracy
            if max(pinf, dinf) > 10 * gap:
                sigma = max(sigma, 0.5)

            dy, dz, dS, dZ = direction(sigma * mu, corr=list(zip(dZ_a, dS_a)))
            a_p = min((_max_step(L, D) for L, D in zip(S_chol, dS)), default=np.inf)
            a_d = min((_max_step(L, D) for L, D in zip(Z_chol, dZ)), default=np.inf)
            # equal primal/dual steps keep the iterate balanced, which the
            # singular optima of moment problems need for accurate endgames
            a_p = a_d = min(1.0, s.step_fraction * min(a_p, a_d))

            # guarded update: shrink the step until the factorizations hold
            for _ in range(12):
                S_new = [Sk + a_p * dSk for Sk, dSk in zip(S, dS)]
                if all(_try_chol(Sk) is not None for Sk in S_new):
                    break
                a_p *= 0.8
            for _ in range(12):
                Z_new = [Zk + a_d * dZk for Zk, dZk in zip(Z, dZ)]
                if all(_try_chol(Zk) is not None for Zk in Z_new):
                    break
                a_d *= 0.8
        except np.linalg.LinAlgError as exc:
            raise SdpNumericalError(
                f"linear algebra failure at iteration {it}: {exc}",
                {"iteration": it, "mu": mu, "gap": gap, "pinf": pinf, "dinf": dinf},
            ) from exc

        if max(a_p, a_d) < 1e-7:
            break  # stalled; fall back to the best iterate

        y = y + a_p * dy
        z = z + a_d * dz
        S = S_new
        Z = Z_new

    if status == "max_iters" and best is not None:
        _, y, z, S, Z, p_obj, d_obj, _ = best
        r_p, R, r_d = residuals(y, z, S, Z)
        p_obj, d_obj, gap, pinf, dinf = merits(y, z, S, Z, r_p, R, r_d)
        if gap <= s.gap_tol and pinf <= s.feas_tol and dinf <= s.feas_tol:
            status = "optimal"

    z_full = np.zeros(m_all)
    z_full[kept] = z
    y_out = red.to_full(y) if red is not None else y
    p_out = float(c @ y) + obj_const + inst.objective_offset
    d_out = (
        float(b @ z)
        - sum(
            float(np.tensordot(bk.const, Zk))
            for bk, Zk in zip(blocks, Z)
            if bk.const is not None
        )
        + obj_const
        + inst.objective_offset
    )
    return SDPSolution(
        y=y_out,
        z=z_full,
        grams=Z,
        slacks=S,
        primal_obj=p_out,
        dual_obj=d_out,
        status=status,
        iterations=it,
        history=history,
        wall_time=time.perf_counter() - t0,
    )
