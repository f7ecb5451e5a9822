"""
Convex QP engine: operator splitting (ADMM) with active-set polishing.

Internally every problem is rewritten as::

    minimize 1/2 x'Px + q'x   subject to   l <= A x <= u

where ``A`` stacks the equality rows, the inequality rows and an identity
block for the variable bounds. The iteration follows the usual
splitting of ``x`` and ``z = A x``, with Ruiz equilibration, a per-row step
size (stiffer on equality rows) and occasional step-size adaptation. Once the
iterates settle, the rows that look active are solved exactly as an
equality-constrained QP ("polishing"); the result is accepted only if its
KKT residuals are within tolerance in the original (unscaled) units.

P may be zero, so pure LPs are handled by the same path.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import qdldl
import scipy.sparse as sp

from ..model import QpProblem

INF = 1e20
RHO_MIN, RHO_MAX = 1e-6, 1e6
RHO_EQ_SCALE = 1e3


class QpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITER_LIMIT = "iter_limit"


@dataclass(frozen=True)
class KktResiduals:
    primal_infeas: float
    dual_infeas: float
    complementarity: float

    def max(self) -> float:
        return max(self.primal_infeas, self.dual_infeas, self.complementarity)


@dataclass
class ContinuousSolution:
    x: np.ndarray
    objective: float
    kkt_residuals: KktResiduals
    status: QpStatus
    y: np.ndarray | None = None  # multipliers for the stacked rows [eq; in; bounds]
    iterations: int = 0
    polished: bool = False


@dataclass(frozen=True)
class QpSettings:
    tol: float = 1e-6
    max_iter: int = 40000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    scaling_iter: int = 10
    check_every: int = 10
    adapt_every: int = 50
    adapt_tolerance: float = 5.0
    polish_delta: float = 1e-7
    polish_refine: int = 25
    polish_rounds: int = 6
    infeas_tol: float = 1e-7


@dataclass
class _Stacked:
    """The problem in ``l <= A x <= u`` form (unscaled)."""

    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix
    l: np.ndarray
    u: np.ndarray
    n_eq: int
    n_in: int

    @classmethod
    def from_problem(cls, p: QpProblem) -> "_Stacked":
        n = p.n
        A = sp.vstack([p.A_eq, p.A_in, sp.identity(n, format="csr")], format="csc")
        l = np.concatenate([p.b_eq, np.full(p.A_in.shape[0], -np.inf), p.lb])
        u = np.concatenate([p.b_eq, p.b_in, p.ub])
        P = sp.csc_matrix(p.Q)
        P = ((P + P.T) * 0.5).tocsc()
        return cls(P, np.asarray(p.c, float), A, l, u, p.A_eq.shape[0], p.A_in.shape[0])


def kkt_residuals(P, q, A, l, u, x, y) -> KktResiduals:
    """Residuals of the KKT conditions of ``min 1/2x'Px+q'x, l<=Ax<=u`` in the given units.

    ``y`` follows the convention ``Px + q + A'y = 0`` with ``y > 0`` on rows at
    their upper bound and ``y < 0`` on rows at their lower bound.
    """
    Ax = A @ x
    lo = np.where(np.isfinite(l), l, -np.inf)
    hi = np.where(np.isfinite(u), u, np.inf)
    prim = float(np.max(np.maximum(lo - Ax, 0.0), initial=0.0))
    prim = max(prim, float(np.max(np.maximum(Ax - hi, 0.0), initial=0.0)))
    grad = P @ x + q + A.T @ y
    dual = float(np.max(np.abs(grad), initial=0.0))
    ypos = np.maximum(y, 0.0)
    yneg = np.maximum(-y, 0.0)
    # multipliers on an infinite side are a sign error: count them as dual infeasibility
    dual = max(dual, float(np.max(ypos[~np.isfinite(hi)], initial=0.0)),
               float(np.max(yneg[~np.isfinite(lo)], initial=0.0)))
    gap_hi = np.where(np.isfinite(hi), np.abs(hi - Ax), 0.0)
    gap_lo = np.where(np.isfinite(lo), np.abs(Ax - lo), 0.0)
    comp = float(np.max(ypos * gap_hi + yneg * gap_lo, initial=0.0))
    return KktResiduals(prim, dual, comp)


def problem_residuals(p: QpProblem, x: np.ndarray, y: np.ndarray) -> KktResiduals:
    """KKT residuals of ``p`` at ``(x, y)``; ``y`` is stacked as [eq rows, in rows, bounds]."""
    st = _Stacked.from_problem(p)
    return kkt_residuals(st.P, st.q, st.A, st.l, st.u, x, y)


class _Scaling:
    """Ruiz equilibration: P_s = c D P D, A_s = E A D, q_s = c D q."""

    def __init__(self, P, q, A, iters):
        n, m = P.shape[0], A.shape[0]
        D = np.ones(n)
        E = np.ones(m)
        c = 1.0
        Ps, As, qs = P.copy(), A.copy(), q.copy()
        for _ in range(iters):
            colP = _col_inf_norm(Ps)
            colA = _col_inf_norm(As)
            d = 1.0 / np.sqrt(np.clip(np.maximum(colP, colA), 1e-4, 1e4))
            rowA = _col_inf_norm(As.T.tocsc())
            e = 1.0 / np.sqrt(np.clip(rowA, 1e-4, 1e4))
            Dd, Ed = sp.diags(d), sp.diags(e)
            Ps = (Dd @ Ps @ Dd).tocsc()
            As = (Ed @ As @ Dd).tocsc()
            qs = d * qs
            D *= d
            E *= e
            mean_col = float(np.mean(_col_inf_norm(Ps))) if n else 0.0
            gamma = max(mean_col, float(np.max(np.abs(qs), initial=0.0)))
            gamma = 1.0 / min(max(gamma, 1e-4), 1e4)
            Ps = (Ps * gamma).tocsc()
            qs = qs * gamma
            c *= gamma
        self.D, self.E, self.c = D, E, c
        self.P, self.A, self.q = Ps, As, qs


def _col_inf_norm(M: sp.csc_matrix) -> np.ndarray:
    M = sp.csc_matrix(M)
    out = np.zeros(M.shape[1])
    absdata = np.abs(M.data)
    nz = np.diff(M.indptr) > 0
    if absdata.size:
        out[nz] = np.maximum.reduceat(absdata, M.indptr[:-1][nz])
    return out


class _Admm:
    def __init__(self, st: _Stacked, s: QpSettings):
        self.st, self.s = st, s
        self.sc = _Scaling(st.P, st.q, st.A, s.scaling_iter)
        sc = self.sc
        self.n, self.m = st.A.shape[1], st.A.shape[0]
        # scaled bounds; infinite entries clipped to +-INF
        lo = np.where(np.isfinite(st.l), st.l, -INF)
        hi = np.where(np.isfinite(st.u), st.u, INF)
        self.l = np.where(lo > -INF, sc.E * lo, -INF)
        self.u = np.where(hi < INF, sc.E * hi, INF)
        self.eq = (self.u - self.l) < 1e-10 * np.maximum(1.0, np.abs(self.u))
        self.free = (self.l <= -INF) & (self.u >= INF)
        self.rho_base = s.rho
        self._set_rho(s.rho)

    def _rho_vec(self, rho):
        r = np.full(self.m, rho)
        r[self.eq] = RHO_EQ_SCALE * rho
        r[self.free] = RHO_MIN
        return r

    def _set_rho(self, rho):
        self.rho_base = float(np.clip(rho, RHO_MIN, RHO_MAX))
        self.rho = self._rho_vec(self.rho_base)
        sc = self.sc
        n = self.n
        K = sp.bmat([[sc.P + self.s.sigma * sp.identity(n), sc.A.T],
                     [sc.A, sp.diags(-1.0 / self.rho)]], format="csc")
        if getattr(self, "fact", None) is None:
            self.K_pattern = K
            self.fact = qdldl.Solver(K)
        else:
            self.fact.update(K)

    def run(self, x0=None, y0=None, eps=1e-4, max_iter=None, state=None):
        """Iterate until scaled-relative residuals fall below ``eps``; returns (x, z, y, status, iters)."""
        s, sc = self.s, self.sc
        n, m = self.n, self.m
        max_iter = s.max_iter if max_iter is None else max_iter
        if state is not None:
            x, z, y = state
        else:
            x = np.zeros(n) if x0 is None else x0 / sc.D
            z = np.clip(sc.A @ x, self.l, self.u)
            y = np.zeros(m) if y0 is None else y0 * sc.c / sc.E
        P, A, q = sc.P, sc.A, sc.q
        alpha, sigma = s.alpha, s.sigma
        it = 0
        status = QpStatus.ITER_LIMIT
        while it < max_iter:
            it += 1
            y_prev = y
            rhs = np.concatenate([sigma * x - q, z - y / self.rho])
            sol = self.fact.solve(rhs)
            xt = sol[:n]
            zt = z + (sol[n:] - y) / self.rho
            x = alpha * xt + (1 - alpha) * x
            zr = alpha * zt + (1 - alpha) * z
            z = np.clip(zr + y / self.rho, self.l, self.u)
            y = y + self.rho * (zr - z)

            if it % s.check_every == 0 or it == max_iter:
                rp, rd, np_, nd = self._residuals(x, z, y)
                ep = eps + eps * np_
                ed = eps + eps * nd
                if rp <= ep and rd <= ed:
                    status = QpStatus.OPTIMAL
                    break
                if self._primal_infeasible(y - y_prev):
                    status = QpStatus.INFEASIBLE
                    break
                if it % s.adapt_every == 0:
                    ratio = math.sqrt((rp / max(np_, 1e-30)) / max(rd / max(nd, 1e-30), 1e-30))
                    new = self.rho_base * ratio
                    if new > self.rho_base * s.adapt_tolerance or new < self.rho_base / s.adapt_tolerance:
                        self._set_rho(new)
        self.iterations = getattr(self, "iterations", 0) + it
        return x, z, y, status

    def _residuals(self, x, z, y):
        """Unscaled primal/dual residuals and their normalizers."""
        sc = self.sc
        Ax = self.sc.A @ x
        Einv = 1.0 / sc.E
        rp = np.max(np.abs(Einv * (Ax - z)), initial=0.0)
        np_ = max(np.max(np.abs(Einv * Ax), initial=0.0), np.max(np.abs(Einv * z), initial=0.0))
        Dinv = 1.0 / sc.D
        Px = sc.P @ x
        Aty = sc.A.T @ y
        rd = np.max(np.abs(Dinv * (Px + sc.q + Aty)), initial=0.0) / sc.c
        nd = max(np.max(np.abs(Dinv * Px), initial=0.0), np.max(np.abs(Dinv * Aty), initial=0.0),
                 np.max(np.abs(Dinv * sc.q), initial=0.0)) / sc.c
        return rp, rd, np_, nd

    def _primal_infeasible(self, dy) -> bool:
        sc = self.sc
        dy_unscaled = sc.E * dy
        norm = np.max(np.abs(dy_unscaled), initial=0.0)
        if norm < 1e-12:
            return False
        eps = self.s.infeas_tol
        At_dy = (1.0 / sc.D) * (sc.A.T @ dy)
        if np.max(np.abs(At_dy), initial=0.0) > eps * norm:
            return False
        u = np.where(self.u >= INF, 0.0, self.u)
        l = np.where(self.l <= -INF, 0.0, self.l)
        pos, neg = np.maximum(dy, 0.0), np.minimum(dy, 0.0)
        # a positive multiplier on an infinite side disqualifies the certificate
        if np.any((self.u >= INF) & (dy > eps * norm)) or np.any((self.l <= -INF) & (dy < -eps * norm)):
            return False
        return float(u @ pos + l @ neg) < -eps * norm

    def unscale(self, x, z, y):
        sc = self.sc
        return sc.D * x, z / sc.E, sc.E * y / sc.c


def _polish(st: _Stacked, x, y, s: QpSettings, tau: float):
    """Solve the equality QP on the guessed active set; returns (x, y, residuals) or None.

    Rows with slack below ``tau`` are treated as active even when their
    multiplier is ~0, which keeps degenerate LP vertices pinned. The refinement
    starts from the ADMM iterate so directions left free by the active set stay put.
    """
    n, m = st.A.shape[1], st.A.shape[0]
    Ax = st.A @ x
    l, u = st.l, st.u
    fl, fu = np.isfinite(l), np.isfinite(u)
    eq = fl & fu & (np.abs(u - l) <= 1e-12 * np.maximum(1.0, np.abs(u)))
    with np.errstate(invalid="ignore"):
        lo = fl & ~eq & (Ax - l < np.maximum(-y, 0.0) + tau)
        hi = fu & ~eq & (u - Ax < np.maximum(y, 0.0) + tau)
    both = lo & hi
    lo[both] = y[both] < 0
    hi[both] = ~lo[both]
    best = None
    A_csr = st.A.tocsr()
    for _ in range(s.polish_rounds):
        act = np.flatnonzero(eq | lo | hi)
        bvec = np.where(lo[act], l[act], u[act])
        Ar = A_csr[act]
        k = act.size
        K0 = sp.bmat([[st.P, Ar.T], [Ar, sp.csc_matrix((k, k))]], format="csc")
        reg = sp.block_diag([sp.identity(n) * s.polish_delta, -sp.identity(k) * s.polish_delta])
        K = (K0 + reg).tocsc()
        rhs = np.concatenate([-st.q, bvec])
        try:
            f = qdldl.Solver(K)
        except Exception:
            return best
        sol = np.concatenate([x, y[act]])
        for _ in range(s.polish_refine):
            r = rhs - K0 @ sol
            if np.max(np.abs(r), initial=0.0) < 1e-13:
                break
            sol = sol + f.solve(r)
        if not np.all(np.isfinite(sol)):
            return best
        xp = sol[:n]
        yp = np.zeros(m)
        yp[act] = sol[n:]
        res = kkt_residuals(st.P, st.q, st.A, l, u, xp, yp)
        if best is None or res.max() < best[2].max():
            best = (xp, yp, res)
        if res.max() <= s.tol:
            return best
        # adjust the active set: drop wrong-sign multipliers, add violated rows
        Axp = st.A @ xp
        viol_lo = fl & ~eq & (Axp < l - s.tol)
        viol_hi = fu & ~eq & (Axp > u + s.tol)
        wrong_lo = lo & (yp > s.tol)
        wrong_hi = hi & (yp < -s.tol)
        if not (viol_lo.any() or viol_hi.any() or wrong_lo.any() or wrong_hi.any()):
            return best
        lo = (lo & ~wrong_lo) | viol_lo
        hi = (hi & ~wrong_hi) | viol_hi
        lo &= ~hi
        x, y = xp, yp
    return best


def solve_qp(p: QpProblem, tol: float = 1e-6, settings: QpSettings | None = None,
             x0: np.ndarray | None = None, y0: np.ndarray | None = None) -> ContinuousSolution:
    """Solve the continuous relaxation of ``p`` (binaries treated as their [lb, ub] interval).

    Returns status OPTIMAL only when the unscaled KKT residuals are all ``<= tol``.
    """
    s = settings or QpSettings()
    if s.tol != tol:
        s = QpSettings(**{**s.__dict__, "tol": tol})
    st = _Stacked.from_problem(p)
    n = p.n
    if np.any(p.lb > p.ub + tol):
        x = np.clip(np.zeros(n), p.lb, p.ub)
        res = kkt_residuals(st.P, st.q, st.A, st.l, st.u, x, np.zeros(st.A.shape[0]))
        return ContinuousSolution(x, p.objective(x), res, QpStatus.INFEASIBLE)
    if n == 0:
        z = np.zeros(0)
        return ContinuousSolution(z, 0.0, KktResiduals(0.0, 0.0, 0.0), QpStatus.OPTIMAL, np.zeros(st.A.shape[0]))

    admm = _Admm(st, s)
    state = None
    eps = 1e-3
    best = None
    used = 0
    while used < s.max_iter:
        budget = s.max_iter - used
        xs, zs, ys, status = admm.run(x0=x0, y0=y0, eps=eps, max_iter=budget, state=state)
        used = admm.iterations
        state = (xs, zs, ys)
        x, z, y = admm.unscale(xs, zs, ys)
        if status is QpStatus.INFEASIBLE:
            res = kkt_residuals(st.P, st.q, st.A, st.l, st.u, x, y)
            return ContinuousSolution(x, p.objective(x), res, QpStatus.INFEASIBLE, y, used)
        res = kkt_residuals(st.P, st.q, st.A, st.l, st.u, x, y)
        if best is None or res.max() < best[2].max():
            best = (x, y, res, False)
        if res.max() <= tol:
            return ContinuousSolution(x, p.objective(x), res, QpStatus.OPTIMAL, y, used)
        tau = max(10 * res.primal_infeas, 10 * tol)
        pol = _polish(st, x, y, s, tau)
        if pol is not None:
            xp, yp, rp = pol
            if rp.max() < best[2].max():
                best = (xp, yp, rp, True)
            if rp.max() <= tol:
                return ContinuousSolution(xp, p.objective(xp), rp, QpStatus.OPTIMAL, yp, used, True)
        if status is QpStatus.ITER_LIMIT:
            break
        eps = max(eps * 0.1, 1e-10)
    x, y, res, pol = best
    return ContinuousSolution(x, p.objective(x), res, QpStatus.ITER_LIMIT, y, used, pol)
