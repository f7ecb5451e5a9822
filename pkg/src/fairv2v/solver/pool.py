"""
Pooled V2V reformulation.

Flows only enter the model through the per-EV charge and discharge balances, so
when no pair cap can bind (every cap is at least the sender's discharge rate)
the pairwise flow table can be replaced by one "send to pool" and one
"receive from pool" column per EV and slot, plus a per-slot pool balance. This
shrinks the 100-EV case from ~230k to ~30k columns. A pooled solution is lifted
back to pairwise flows with a greedy transportation fill; when senders and
receivers are disjoint (always true once exclusivity binaries are integral) the
fill exists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..model import QpProblem, VarMap


@dataclass(frozen=True)
class Pooled:
    problem: QpProblem
    keep: np.ndarray  # full column index of each kept (non-flow) column
    send: dict  # (ev, slot) -> pooled column
    recv: dict
    flows: dict  # slot -> list of (sender, receiver, full column, cap)
    n_full: int

    def restrict(self, x_full: np.ndarray) -> np.ndarray:
        """Map a full-space point into pooled space."""
        x = np.zeros(self.problem.n)
        x[: self.keep.size] = x_full[self.keep]
        for (i, t), rows in self.flows_by_sender().items():
            x[self.send[i, t]] = sum(x_full[c] for c in rows)
        for (j, t), rows in self.flows_by_receiver().items():
            x[self.recv[j, t]] = sum(x_full[c] for c in rows)
        return x

    def flows_by_sender(self):
        out = {}
        for t, lst in self.flows.items():
            for i, _, col, _ in lst:
                out.setdefault((i, t), []).append(col)
        return out

    def flows_by_receiver(self):
        out = {}
        for t, lst in self.flows.items():
            for _, j, col, _ in lst:
                out.setdefault((j, t), []).append(col)
        return out

    def lift(self, x: np.ndarray, tol: float = 1e-9) -> np.ndarray | None:
        """Full-space point with pairwise flows, or None if the fill fails."""
        full = np.zeros(self.n_full)
        full[self.keep] = x[: self.keep.size]
        for t, lst in self.flows.items():
            senders = sorted({i for i, _, _, _ in lst})
            receivers = sorted({j for _, j, _, _ in lst})
            supply = {i: max(x[self.send[i, t]], 0.0) for i in senders}
            demand = {j: max(x[self.recv[j, t]], 0.0) for j in receivers}
            cols = {(i, j): (c, cap) for i, j, c, cap in lst}
            # largest senders first keeps the fill away from the self-pair corner
            for i in sorted(senders, key=lambda k: (-supply[k], k)):
                for j in sorted(receivers, key=lambda k: (-demand[k], k)):
                    if supply[i] <= tol:
                        break
                    if j == i or demand[j] <= tol:
                        continue
                    c, cap = cols[i, j]
                    f = min(supply[i], demand[j], cap)
                    full[c] = f
                    supply[i] -= f
                    demand[j] -= f
            if any(v > 1e-7 for v in supply.values()) or any(v > 1e-7 for v in demand.values()):
                return None
        return full


def pool_flows(p: QpProblem, m: VarMap) -> Pooled | None:
    """Pooled reformulation of ``p``, or None when it would not be exact."""
    flows = [(k[1], k[3], k[2], col) for k, col in m.index.items() if k[0] == "flow"]
    if not flows:
        return None
    flow_cols = np.array(sorted(c for *_, c in flows))
    A_in = sp.csc_matrix(p.A_in)
    if A_in[:, flow_cols].nnz or sp.csc_matrix(p.Q)[:, flow_cols].nnz or np.any(p.c[flow_cols]):
        return None
    dis_ub = {}
    for k, col in m.index.items():
        if k[0] == "dis":
            dis_ub[k[1], k[2]] = p.ub[col]
    for i, j, t, col in flows:
        if p.lb[col] != 0.0 or p.ub[col] < dis_ub.get((i, t), np.inf):
            return None

    is_flow = np.zeros(p.n, bool)
    is_flow[flow_cols] = True
    keep = np.flatnonzero(~is_flow)
    remap = -np.ones(p.n, int)
    remap[keep] = np.arange(keep.size)

    A_eq = sp.csc_matrix(p.A_eq)
    # the discharge/charge balance row each flow column enters
    send_row, recv_row = {}, {}
    by_slot: dict = {}
    for i, j, t, col in flows:
        lo, hi = A_eq.indptr[col], A_eq.indptr[col + 1]
        rows = A_eq.indices[lo:hi]
        for r in rows:
            tag = p.eq_tags[r]
            if tag == "discharge_balance":
                send_row[i, t] = r
            elif tag == "charge_balance":
                recv_row[j, t] = r
            else:
                return None
        by_slot.setdefault(t, []).append((i, j, col, p.ub[col]))

    nk = keep.size
    send, recv = {}, {}
    nxt = nk
    for key in sorted(send_row):
        send[key] = nxt
        nxt += 1
    for key in sorted(recv_row):
        recv[key] = nxt
        nxt += 1
    n = nxt

    base = A_eq[:, keep]
    rr, cc, vv = [], [], []
    for key, col in send.items():
        rr.append(send_row[key]); cc.append(col - nk); vv.append(-1.0)
    for key, col in recv.items():
        rr.append(recv_row[key]); cc.append(col - nk); vv.append(-1.0)
    extra = sp.csc_matrix((vv, (rr, cc)), shape=(A_eq.shape[0], n - nk))
    slots = sorted(by_slot)
    br, bc, bv = [], [], []
    for k, t in enumerate(slots):
        for (i, tt), col in send.items():
            if tt == t:
                br.append(k); bc.append(col); bv.append(1.0)
        for (j, tt), col in recv.items():
            if tt == t:
                br.append(k); bc.append(col); bv.append(-1.0)
    bal = sp.csr_matrix((bv, (br, bc)), shape=(len(slots), n))
    A_eq_new = sp.vstack([sp.hstack([base, extra]), bal], format="csr")

    Q = sp.csc_matrix(p.Q)[keep][:, keep]
    Q = sp.block_diag([Q, sp.csc_matrix((n - nk, n - nk))], format="csc")
    A_in_new = sp.hstack([A_in[:, keep], sp.csc_matrix((A_in.shape[0], n - nk))], format="csr")
    binaries = tuple(int(remap[b]) for b in p.binaries)
    pooled = QpProblem(
        Q=Q,
        c=np.concatenate([p.c[keep], np.zeros(n - nk)]),
        A_eq=A_eq_new,
        b_eq=np.concatenate([p.b_eq, np.zeros(len(slots))]),
        A_in=A_in_new,
        b_in=p.b_in.copy(),
        lb=np.concatenate([p.lb[keep], np.zeros(n - nk)]),
        ub=np.concatenate([p.ub[keep], np.full(n - nk, np.inf)]),
        binaries=binaries,
        eq_tags=p.eq_tags + ("pool_balance",) * len(slots),
        in_tags=p.in_tags,
        bound_tags=tuple(p.bound_tags[k] for k in keep) + ("nonneg",) * (n - nk),
    )
    return Pooled(pooled, keep, send, recv, by_slot, p.n)
