"""
Mixed-integer layer: best-first branch-and-bound and a relax-round-repair heuristic.

Both work on any :class:`~fairv2v.model.QpProblem`; the only problem-specific
knowledge is that binaries are the columns listed in ``p.binaries``.
"""

from __future__ import annotations

import enum
import heapq
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..model import QpProblem, VarMap
from .pool import pool_flows
from .qp import ContinuousSolution, QpSettings, QpStatus, solve_qp

log = logging.getLogger(__name__)


class MiqpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    NODE_LIMIT = "node_limit"


@dataclass(frozen=True)
class SolverParams:
    gap_tol: float = 1e-4
    node_limit: int = 100_000
    tol: float = 1e-6
    int_tol: float = 1e-5
    flip_budget: int = 50
    mode: str = "exact"  # "exact" or "heuristic"
    max_iter: int = 40000

    @classmethod
    def from_mapping(cls, d) -> "SolverParams":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        for k in ("gap_tol", "tol", "int_tol"):
            if k in known:
                known[k] = float(known[k])
        for k in ("node_limit", "flip_budget", "max_iter"):
            if k in known:
                known[k] = int(known[k])
        if "mode" in known and known["mode"] not in ("exact", "heuristic"):
            raise ValueError(f"solver mode must be 'exact' or 'heuristic', got {known['mode']!r}")
        return cls(**known)

    def qp_settings(self) -> QpSettings:
        return QpSettings(tol=self.tol, max_iter=self.max_iter)


@dataclass
class MiqpSolution:
    x: np.ndarray | None
    objective: float
    bound: float
    rel_gap: float
    nodes_explored: int
    status: MiqpStatus
    qp_solves: int = 0
    wall_s: float = 0.0
    kkt_max: float = float("nan")
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status in (MiqpStatus.OPTIMAL, MiqpStatus.FEASIBLE) or (
            self.status is MiqpStatus.NODE_LIMIT and self.x is not None)


def rel_gap(objective: float, bound: float) -> float:
    return max(0.0, (objective - bound) / max(1.0, abs(objective)))


class _Snapper:
    """Move fractional binaries to 0/1 when no row notices and the objective does not rise."""

    def __init__(self, p: QpProblem, tol: float):
        self.p = p
        self.tol = tol
        self.Aeq = sp.csc_matrix(p.A_eq)
        self.Ain = sp.csc_matrix(p.A_in)
        Qc = sp.csc_matrix(p.Q)
        self.q_free = {k: Qc.indptr[k] == Qc.indptr[k + 1] for k in p.binaries}

    def __call__(self, x: np.ndarray, lb: np.ndarray, ub: np.ndarray, int_tol: float) -> np.ndarray:
        p = self.p
        x = x.copy()
        r_eq = self.Aeq @ x - p.b_eq
        r_in = self.Ain @ x - p.b_in
        for k in p.binaries:
            v = x[k]
            near = round(v)
            if abs(v - near) <= int_tol:
                continue
            if not self.q_free[k]:
                continue
            for cand in (near, 1.0 - near):
                if cand < lb[k] - 1e-12 or cand > ub[k] + 1e-12:
                    continue
                d = cand - v
                if p.c[k] * d > 1e-15:
                    continue
                lo, hi = self.Ain.indptr[k], self.Ain.indptr[k + 1]
                rows, vals = self.Ain.indices[lo:hi], self.Ain.data[lo:hi]
                if np.any(r_in[rows] + vals * d > self.tol):
                    continue
                lo2, hi2 = self.Aeq.indptr[k], self.Aeq.indptr[k + 1]
                rows2, vals2 = self.Aeq.indices[lo2:hi2], self.Aeq.data[lo2:hi2]
                if np.any(np.abs(r_eq[rows2] + vals2 * d) > self.tol):
                    continue
                r_in[rows] += vals * d
                r_eq[rows2] += vals2 * d
                x[k] = cand
                break
        return x


def _fractionality(x: np.ndarray, binaries: tuple[int, ...]) -> np.ndarray:
    v = x[list(binaries)]
    return np.minimum(v - np.floor(v), np.ceil(v) - v)


def _fix(p: QpProblem, lb, ub, cols, values):
    lb = lb.copy()
    ub = ub.copy()
    lb[cols] = values
    ub[cols] = values
    return lb, ub


def _qp(p: QpProblem, lb, ub, params: SolverParams, warm: ContinuousSolution | None = None):
    q = p.relaxed().with_bounds(lb, ub)
    x0 = warm.x if warm is not None and warm.x is not None else None
    return solve_qp(q, params.tol, params.qp_settings(), x0=x0)


def _accept(sol: ContinuousSolution) -> bool:
    return sol.status is QpStatus.OPTIMAL


def _exact_binaries(p, params, x, obj, kkt, solves):
    """Re-solve with binaries set exactly to 0/1 when the incumbent only meets them within tolerance."""
    bins = np.asarray(p.binaries, dtype=int)
    if bins.size == 0:
        return x, obj, kkt, solves
    vals = np.round(x[bins])
    if np.array_equal(x[bins], vals):
        return x, obj, kkt, solves
    lb, ub = _fix(p, p.lb, p.ub, bins, vals)
    sol = _qp(p, lb, ub, params)
    solves += 1
    if _accept(sol) and sol.objective <= obj + params.tol * max(1.0, abs(obj)):
        return sol.x, sol.objective, sol.kkt_residuals.max(), solves
    return x, obj, kkt, solves


def _exact(p: QpProblem, params: SolverParams) -> MiqpSolution:
    t0 = time.perf_counter()
    bins = np.asarray(p.binaries, dtype=int)
    snap = _Snapper(p, params.tol)
    lb0, ub0 = p.lb.copy(), p.ub.copy()

    root = _qp(p, lb0, ub0, params)
    solves = 1
    if root.status is QpStatus.INFEASIBLE:
        return MiqpSolution(None, float("inf"), float("inf"), 0.0, 1, MiqpStatus.INFEASIBLE, solves,
                            time.perf_counter() - t0)
    notes = []
    if not _accept(root):
        notes.append(f"root relaxation not converged (kkt {root.kkt_residuals.max():.2e})")

    inc_x, inc_obj, inc_kkt = None, float("inf"), float("nan")
    if bins.size == 0:
        return MiqpSolution(root.x, root.objective, root.objective, 0.0, 1,
                            MiqpStatus.OPTIMAL if _accept(root) else MiqpStatus.FEASIBLE, solves,
                            time.perf_counter() - t0, root.kkt_residuals.max(), notes)

    xr = snap(root.x, lb0, ub0, params.int_tol)
    frac = _fractionality(xr, p.binaries)
    if np.all(frac <= params.int_tol):
        inc_x, inc_obj, inc_kkt = xr, root.objective, root.kkt_residuals.max()
    else:
        vals = (xr[bins] >= 0.5).astype(float)
        lb, ub = _fix(p, lb0, ub0, bins, vals)
        seed = _qp(p, lb, ub, params, root)
        solves += 1
        if _accept(seed):
            inc_x, inc_obj, inc_kkt = seed.x, seed.objective, seed.kkt_residuals.max()

    counter = 0
    heap = [(root.objective, counter, lb0, ub0, root)]
    nodes = 1  # every node relaxation solved, the root included
    status = None
    while heap:
        bound, _, lb, ub, sol = heapq.heappop(heap)
        if inc_x is not None and rel_gap(inc_obj, bound) <= params.gap_tol:
            heap.append((bound, 0, lb, ub, sol))  # keep for the global bound
            break
        if nodes >= params.node_limit:
            heap.append((bound, 0, lb, ub, sol))
            status = MiqpStatus.NODE_LIMIT
            break
        if sol.status is QpStatus.INFEASIBLE:
            continue
        if inc_x is not None and sol.objective >= inc_obj - 1e-12 * max(1.0, abs(inc_obj)):
            continue
        xs = snap(sol.x, lb, ub, params.int_tol)
        frac = _fractionality(xs, p.binaries)
        if np.all(frac <= params.int_tol):
            if _accept(sol) and sol.objective < inc_obj:
                inc_x, inc_obj, inc_kkt = xs, sol.objective, sol.kkt_residuals.max()
            continue
        k = int(bins[int(np.argmax(frac))])  # argmax returns the first (lowest column) on ties
        for val in (0.0, 1.0):
            clb, cub = lb.copy(), ub.copy()
            clb[k] = cub[k] = val
            child = _qp(p, clb, cub, params, sol)
            solves += 1
            nodes += 1
            if child.status is QpStatus.INFEASIBLE:
                continue
            counter += 1
            heapq.heappush(heap, (max(child.objective, sol.objective), counter, clb, cub, child))

    open_bound = min((h[0] for h in heap), default=inc_obj)
    bound = min(open_bound, inc_obj)
    wall = time.perf_counter() - t0
    if inc_x is None:
        st = MiqpStatus.NODE_LIMIT if status is MiqpStatus.NODE_LIMIT else MiqpStatus.INFEASIBLE
        return MiqpSolution(None, float("inf"), bound, 0.0, nodes, st, solves, wall, notes=notes)
    inc_x, inc_obj, inc_kkt, solves = _exact_binaries(p, params, inc_x, inc_obj, inc_kkt, solves)
    gap = rel_gap(inc_obj, bound)
    if status is None:
        status = MiqpStatus.OPTIMAL if gap <= params.gap_tol else MiqpStatus.FEASIBLE
    log.debug("exact: obj=%.9g bound=%.9g nodes=%d solves=%d", inc_obj, bound, nodes, solves)
    return MiqpSolution(inc_x, inc_obj, bound, gap, nodes, status, solves, wall, inc_kkt, notes)


def _via_pool(p: QpProblem, params: SolverParams, vmap: VarMap | None, fn) -> MiqpSolution:
    pooled = pool_flows(p, vmap) if vmap is not None else None
    if pooled is not None:
        sol = fn(pooled.problem, params)
        if sol.x is None:
            return sol
        full = pooled.lift(sol.x)
        if full is not None and p.max_violation(full) <= params.tol:
            sol.x = full
            sol.objective = p.objective(full)
            sol.rel_gap = rel_gap(sol.objective, sol.bound)
            return sol
        log.info("pooled lift failed; solving the pairwise model")
    return fn(p, params)


def solve_exact(p: QpProblem, params: SolverParams | None = None, vmap: VarMap | None = None
                ) -> MiqpSolution:
    """Best-first branch-and-bound over ``p.binaries``.

    Node bounds come from the continuous relaxation. The incumbent is seeded by
    rounding the root relaxation at 0.5 and re-solving with those binaries
    fixed; branching takes the most fractional binary, lowest column first on ties.
    With ``vmap`` given, V2V flows are pooled while solving (see
    :mod:`fairv2v.solver.pool`); at integral points the pooled and pairwise
    models have the same optimum, so the result is still exact.
    """
    return _via_pool(p, params or SolverParams(), vmap, _exact)


def solve_heuristic(p: QpProblem, params: SolverParams | None = None, vmap: VarMap | None = None
                    ) -> MiqpSolution:
    """Relax, round binaries at 0.5, re-solve with them fixed, and repair by flipping if needed.

    ``bound`` is the root relaxation value, so ``rel_gap`` is an honest optimality gap.
    ``vmap`` enables flow pooling as in :func:`solve_exact`; the lifted point is
    re-checked against ``p`` and the pairwise model is used if anything is off.
    """
    return _via_pool(p, params or SolverParams(), vmap, _heuristic)


def _heuristic(p: QpProblem, params: SolverParams) -> MiqpSolution:
    t0 = time.perf_counter()
    bins = np.asarray(p.binaries, dtype=int)
    root = _qp(p, p.lb, p.ub, params)
    solves = 1
    if root.status is QpStatus.INFEASIBLE:
        return MiqpSolution(None, float("inf"), float("inf"), 0.0, 1, MiqpStatus.INFEASIBLE, solves,
                            time.perf_counter() - t0)
    bound = root.objective
    notes = [] if _accept(root) else [f"root relaxation not converged (kkt {root.kkt_residuals.max():.2e})"]
    if bins.size == 0:
        st = MiqpStatus.OPTIMAL if _accept(root) else MiqpStatus.FEASIBLE
        return MiqpSolution(root.x, root.objective, bound, 0.0, 1, st, solves, time.perf_counter() - t0,
                            root.kkt_residuals.max(), notes)

    xs = _Snapper(p, params.tol)(root.x, p.lb, p.ub, params.int_tol)
    frac = _fractionality(xs, p.binaries)
    if np.all(frac <= params.int_tol):
        x, obj, kkt = xs, root.objective, root.kkt_residuals.max()
    else:
        vals = (xs[bins] >= 0.5).astype(float)
        # flip candidates: rounded binaries, most fractional first
        order = [int(j) for j in np.argsort(-frac, kind="stable") if frac[j] > params.int_tol]
        x = None
        for flips in range(min(params.flip_budget, len(order)) + 1):
            if flips:
                j = order[flips - 1]
                vals[j] = 1.0 - vals[j]
            lb, ub = _fix(p, p.lb, p.ub, bins, vals)
            sol = _qp(p, lb, ub, params, root)
            solves += 1
            if sol.status is not QpStatus.INFEASIBLE:
                x, obj, kkt = sol.x, sol.objective, sol.kkt_residuals.max()
                if not _accept(sol):
                    notes.append(f"fixed-binary solve not converged (kkt {kkt:.2e})")
                break
        if x is None:
            return MiqpSolution(None, float("inf"), bound, 0.0, 1, MiqpStatus.INFEASIBLE, solves,
                                time.perf_counter() - t0, notes=notes + ["repair flip budget exhausted"])
    x, obj, kkt, solves = _exact_binaries(p, params, x, obj, kkt, solves)
    gap = rel_gap(obj, bound)
    st = MiqpStatus.OPTIMAL if gap <= params.gap_tol else MiqpStatus.FEASIBLE
    return MiqpSolution(x, obj, min(bound, obj), gap, 1, st, solves, time.perf_counter() - t0, kkt, notes)


def solve(p: QpProblem, params: SolverParams | None = None, vmap: VarMap | None = None) -> MiqpSolution:
    params = params or SolverParams()
    return solve_heuristic(p, params, vmap) if params.mode == "heuristic" else solve_exact(p, params, vmap)
