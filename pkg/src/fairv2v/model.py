"""
Translate a :class:`~fairv2v.domain.Scenario` into a standard-form MIQP.

The problem is::

    minimize    1/2 x'Qx + c'x
    subject to  A_eq x  = b_eq
                A_in x <= b_in
                lb <= x <= ub,   x_k in {0, 1} for k in binaries

V2V exchange uses two nonnegative directed flows per ordered co-present pair;
the net exchange ``f[i->j] - f[j->i]`` is antisymmetric by construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .domain import (
    Budget,
    FairnessPolicy,
    HardPerSlot,
    Mode,
    Scenario,
    SoftCumulative,
    Unconstrained,
    reachability_check,
    validate_scenario,
)
from .errors import DimensionError, InfeasibleTarget, InvalidScenario, NotAllocated, PolicyModeMismatch

# per-(ev, slot) variable kinds, in allocation order
EV_KINDS = ("ch", "dis", "grid", "renew", "v2g", "soc", "x")
KINDS = EV_KINDS + ("flow", "slack")

ROW_TAGS = (
    "dynamics",
    "charge_exclusivity",
    "discharge_exclusivity",
    "departure_target",
    "grid_cap",
    "renewable_cap",
    "charge_balance",
    "discharge_balance",
    "soft_cumulative",
    "budget_hinge",
    "budget_total",
)


@dataclass(frozen=True)
class VarMap:
    """Column layout. Keys are ``(kind, ev, slot)`` or ``("flow", sender, slot, receiver)``."""

    index: dict
    names: tuple[str, ...]
    ev_ids: tuple[str, ...]
    mode: Mode

    @property
    def n(self) -> int:
        return len(self.names)

    def columns(self, kind: str) -> list[int]:
        return sorted(c for k, c in self.index.items() if k[0] == kind)

    def flows(self):
        """Yield ``(sender, receiver, slot, col)`` for every directed flow column."""
        for k, c in self.index.items():
            if k[0] == "flow":
                yield k[1], k[3], k[2], c

    def with_columns(self, new: dict, new_names: Iterable[str]) -> "VarMap":
        idx = dict(self.index)
        idx.update(new)
        return replace(self, index=idx, names=self.names + tuple(new_names))


def _ev_index(m: VarMap, ev) -> int:
    if isinstance(ev, str):
        try:
            return m.ev_ids.index(ev)
        except ValueError:
            raise NotAllocated(f"unknown EV {ev!r}") from None
    return int(ev)


def var_lookup(m: VarMap, kind: str, ev, slot: int, partner=None) -> int:
    """Column of a variable; ``ev``/``partner`` may be fleet indices or EV ids.

    For ``kind="flow"`` the variable is the flow *from* ``ev`` *to* ``partner``.
    """
    i = _ev_index(m, ev)
    if kind == "flow":
        if partner is None:
            raise NotAllocated("flow lookup needs a partner")
        key = ("flow", i, int(slot), _ev_index(m, partner))
    else:
        key = (kind, i, int(slot))
    try:
        return m.index[key]
    except KeyError:
        raise NotAllocated(f"{kind} not allocated for {key[1:]} in {m.mode.value} layout") from None


@dataclass(frozen=True)
class QpProblem:
    Q: sp.csc_matrix
    c: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_in: sp.csr_matrix
    b_in: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    binaries: tuple[int, ...] = ()
    eq_tags: tuple[str, ...] = ()
    in_tags: tuple[str, ...] = ()
    bound_tags: tuple[str, ...] = field(default=())

    @property
    def n(self) -> int:
        return self.c.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.Q @ x) + self.c @ x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.Q @ x + self.c

    def with_bounds(self, lb: np.ndarray, ub: np.ndarray) -> "QpProblem":
        return replace(self, lb=np.asarray(lb, float), ub=np.asarray(ub, float))

    def relaxed(self) -> "QpProblem":
        return replace(self, binaries=())

    def max_violation(self, x: np.ndarray) -> float:
        """Largest absolute violation of rows and bounds at ``x``."""
        v = [0.0]
        if self.A_eq.shape[0]:
            v.append(np.max(np.abs(self.A_eq @ x - self.b_eq)))
        if self.A_in.shape[0]:
            v.append(np.max(self.A_in @ x - self.b_in))
        v.append(np.max(self.lb - x))
        v.append(np.max(x - self.ub))
        return float(max(v))


class _Builder:
    """Accumulates columns and COO row triplets."""

    def __init__(self):
        self.index: dict = {}
        self.names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.c: list[float] = []
        self.qdiag: list[float] = []
        self.btags: list[str] = []
        self.rows = {"eq": ([], [], [], [], []), "in": ([], [], [], [], [])}  # r, c, v, rhs, tags

    def col(self, key, name, lb, ub, tag, cost=0.0, q=0.0) -> int:
        j = len(self.names)
        self.index[key] = j
        self.names.append(name)
        self.lb.append(lb)
        self.ub.append(ub)
        self.c.append(cost)
        self.qdiag.append(q)
        self.btags.append(tag)
        return j

    def row(self, kind, coefs: dict, rhs: float, tag: str) -> None:
        r, cc, vv, b, tags = self.rows[kind]
        k = len(b)
        for j, a in coefs.items():
            if a != 0.0:
                r.append(k)
                cc.append(j)
                vv.append(a)
        b.append(rhs)
        tags.append(tag)

    def matrix(self, kind, n):
        r, cc, vv, b, tags = self.rows[kind]
        A = sp.csr_matrix((vv, (r, cc)), shape=(len(b), n))
        A.sum_duplicates()
        return A, np.asarray(b, float), tuple(tags)


def _check_dimensions(s: Scenario) -> None:
    H = s.grid.slot_count
    for name, series in (("tariff.buy_price", s.tariff.buy_price),
                         ("tariff.sell_price", s.tariff.sell_price),
                         ("supply.renewable_kwh", s.supply.renewable_kwh)):
        if len(series) != H:
            raise DimensionError(f"{name} has {len(series)} entries, grid has {H} slots")


def assemble(s: Scenario, with_fairness: bool = True) -> tuple[QpProblem, VarMap]:
    """Build the MIQP for ``s``; fairness rows for ``s.fairness`` are added unless disabled."""
    _check_dimensions(s)
    problems = validate_scenario(s)
    if problems:
        raise InvalidScenario(problems)
    short = {ev.id: reachability_check(ev, s.grid) for ev in s.fleet}
    short = {k: v for k, v in short.items() if v < -1e-12}
    if short:
        raise InfeasibleTarget(short)

    mode = s.mode
    fleet = s.fleet
    b = _Builder()
    inf = np.inf

    for i, ev in enumerate(fleet):
        excl = mode.has_discharge and ev.max_charge_kwh_per_slot > 0 and ev.max_discharge_kwh_per_slot > 0
        for t in ev.window:
            tag = f"[{ev.id},{t}]"
            b.col(("ch", i, t), "ch" + tag, 0.0, ev.max_charge_kwh_per_slot, "charge_rate")
            if mode.has_discharge:
                b.col(("dis", i, t), "dis" + tag, 0.0, ev.max_discharge_kwh_per_slot, "discharge_rate",
                      q=2.0 * ev.degradation_coeff)
            b.col(("grid", i, t), "grid" + tag, 0.0, inf, "nonneg", cost=s.tariff.buy_price[t])
            b.col(("renew", i, t), "renew" + tag, 0.0, inf, "nonneg")
            if mode.has_discharge:
                b.col(("v2g", i, t), "v2g" + tag, 0.0, ev.v2g_cap_kwh_per_slot, "v2g_cap",
                      cost=-s.tariff.sell_price[t])
            b.col(("soc", i, t), "soc" + tag, ev.min_kwh, ev.capacity_kwh, "soc_bounds")
            if excl:
                b.col(("x", i, t), "X" + tag, 0.0, 1.0, "binary")

    if mode.has_v2v:
        for t in range(s.grid.slot_count):
            here = s.present_at(t)
            for i in here:
                for j in here:
                    if i != j:
                        cap = s.pair_cap(fleet[i], fleet[j])
                        b.col(("flow", i, t, j), f"flow[{fleet[i].id}->{fleet[j].id},{t}]",
                              0.0, cap, "v2v_cap")

    ix = b.index
    inflow: dict = {}
    outflow: dict = {}
    for key, col in ix.items():
        if key[0] == "flow":
            _, i, t, j = key
            outflow.setdefault((i, t), []).append(col)
            inflow.setdefault((j, t), []).append(col)

    for i, ev in enumerate(fleet):
        for t in ev.window:
            # battery dynamics; the state before arrival is the initial energy
            coefs = {ix["soc", i, t]: 1.0, ix["ch", i, t]: -ev.eff_charge}
            if mode.has_discharge:
                coefs[ix["dis", i, t]] = 1.0 / ev.eff_discharge
            if t > ev.arrival:
                coefs[ix["soc", i, t - 1]] = -1.0
                rhs = 0.0
            else:
                rhs = ev.initial_kwh
            b.row("eq", coefs, rhs, "dynamics")

            if ("x", i, t) in ix:
                xc = ix["x", i, t]
                b.row("in", {ix["ch", i, t]: 1.0, xc: ev.max_charge_kwh_per_slot},
                      ev.max_charge_kwh_per_slot, "charge_exclusivity")
                b.row("in", {ix["dis", i, t]: 1.0, xc: -ev.max_discharge_kwh_per_slot},
                      0.0, "discharge_exclusivity")

            coefs = {ix["ch", i, t]: 1.0, ix["grid", i, t]: -1.0, ix["renew", i, t]: -1.0}
            for col in inflow.get((i, t), ()):
                coefs[col] = -1.0
            b.row("eq", coefs, 0.0, "charge_balance")

            if mode.has_discharge:
                coefs = {ix["dis", i, t]: 1.0, ix["v2g", i, t]: -1.0}
                for col in outflow.get((i, t), ()):
                    coefs[col] = -1.0
                b.row("eq", coefs, 0.0, "discharge_balance")

        b.row("eq", {ix["soc", i, ev.departure]: 1.0}, ev.target_kwh, "departure_target")

    for t in range(s.grid.slot_count):
        here = s.present_at(t)
        if not here:
            continue
        b.row("in", {ix["grid", i, t]: 1.0 for i in here}, s.supply.grid_cap_kwh_per_slot, "grid_cap")
        b.row("in", {ix["renew", i, t]: 1.0 for i in here}, s.supply.renewable_kwh[t], "renewable_cap")

    n = len(b.names)
    A_eq, b_eq, eq_tags = b.matrix("eq", n)
    A_in, b_in, in_tags = b.matrix("in", n)
    prob = QpProblem(
        Q=sp.diags(np.asarray(b.qdiag, float), format="csc"),
        c=np.asarray(b.c, float),
        A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in,
        lb=np.asarray(b.lb, float), ub=np.asarray(b.ub, float),
        binaries=tuple(sorted(c for k, c in ix.items() if k[0] == "x")),
        eq_tags=eq_tags, in_tags=in_tags, bound_tags=tuple(b.btags),
    )
    vmap = VarMap(dict(ix), tuple(b.names), tuple(ev.id for ev in fleet), mode)
    if with_fairness:
        prob, vmap = add_fairness(prob, vmap, s.fairness)
    return prob, vmap


def _append_rows(A: sp.csr_matrix, rhs: np.ndarray, tags: tuple, rows: list, n: int):
    """Stack ``rows`` (list of (coef dict, rhs, tag)) under ``A``."""
    if not rows:
        return A, rhs, tags
    r, c, v = [], [], []
    for k, (coefs, _, _) in enumerate(rows):
        for j, a in coefs.items():
            r.append(k)
            c.append(j)
            v.append(a)
    extra = sp.csr_matrix((v, (r, c)), shape=(len(rows), n))
    A = sp.vstack([sp.csr_matrix((A.data, A.indices, A.indptr), shape=(A.shape[0], n)), extra],
                  format="csr")
    return A, np.concatenate([rhs, [x[1] for x in rows]]), tags + tuple(x[2] for x in rows)


def add_fairness(p: QpProblem, m: VarMap, policy: FairnessPolicy) -> tuple[QpProblem, VarMap]:
    """Return ``(p, m)`` extended with the rows (and slack columns) of ``policy``."""
    if isinstance(policy, Unconstrained):
        return p, m
    if not m.mode.has_discharge:
        warnings.warn(f"fairness policy {policy.kind!r} ignored in charging-only mode",
                      PolicyModeMismatch, stacklevel=2)
        return p, m

    dis_by_ev: dict[int, list[tuple[int, int]]] = {}
    for key, col in m.index.items():
        if key[0] == "dis":
            dis_by_ev.setdefault(key[1], []).append((key[2], col))
    for cols in dis_by_ev.values():
        cols.sort()

    if isinstance(policy, HardPerSlot):
        ub = p.ub.copy()
        tags = list(p.bound_tags)
        for cols in dis_by_ev.values():
            for _, col in cols:
                if policy.zbar < ub[col]:
                    ub[col] = policy.zbar
                    tags[col] = "hard_per_slot"
        return replace(p, ub=ub, bound_tags=tuple(tags)), m

    if isinstance(policy, SoftCumulative):
        rows = [({col: 1.0 for _, col in dis_by_ev[i]}, policy.zbar_c, "soft_cumulative")
                for i in sorted(dis_by_ev)]
        A_in, b_in, tags = _append_rows(p.A_in, p.b_in, p.in_tags, rows, p.n)
        return replace(p, A_in=A_in, b_in=b_in, in_tags=tags), m

    if isinstance(policy, Budget):
        n0 = p.n
        new, names, rows = {}, [], []
        nxt = n0
        for i in sorted(dis_by_ev):
            ev_id = m.ev_ids[i]
            slack_cols = []
            for t, dcol in dis_by_ev[i]:
                new["slack", i, t] = nxt
                names.append(f"slack[{ev_id},{t}]")
                rows.append(({dcol: 1.0, nxt: -1.0}, policy.theta, "budget_hinge"))
                slack_cols.append(nxt)
                nxt += 1
            rows.append(({c: 1.0 for c in slack_cols}, policy.budget_for(ev_id), "budget_total"))
        k = nxt - n0
        n = nxt
        A_in, b_in, tags = _append_rows(p.A_in, p.b_in, p.in_tags, rows, n)
        A_eq = sp.csr_matrix((p.A_eq.data, p.A_eq.indices, p.A_eq.indptr), shape=(p.A_eq.shape[0], n))
        Q = sp.block_diag([p.Q, sp.csc_matrix((k, k))], format="csc")
        p2 = replace(
            p, Q=Q, c=np.concatenate([p.c, np.zeros(k)]), A_eq=A_eq, A_in=A_in, b_in=b_in, in_tags=tags,
            lb=np.concatenate([p.lb, np.zeros(k)]), ub=np.concatenate([p.ub, np.full(k, np.inf)]),
            bound_tags=p.bound_tags + ("slack_nonneg",) * k,
        )
        return p2, m.with_columns(new, names)

    raise TypeError(f"unknown fairness policy {policy!r}")


def row_audit(p: QpProblem) -> list[tuple[str, int, str]]:
    """List ``(row kind, row index, constraint family)`` for every row of ``p``."""
    out = [("eq", k, t) for k, t in enumerate(p.eq_tags)]
    out += [("in", k, t) for k, t in enumerate(p.in_tags)]
    return out


def dump_problem(p: QpProblem, m: VarMap, path: str | Path | None = None) -> str:
    """Sparse text dump, one line per column and per row, for diffing against hand-built instances.

    Format::

        # fairv2v-qp n=<cols> eq=<rows> in=<rows> binaries=<count>
        col <j> <name> <lb> <ub> <c> <Qjj> <bound tag> [B]
        eq <k> <family> rhs=<b> <j>:<coef> ...
        in <k> <family> rhs=<b> <j>:<coef> ...
    """
    lines = [f"# fairv2v-qp n={p.n} eq={p.A_eq.shape[0]} in={p.A_in.shape[0]} binaries={len(p.binaries)}"]
    qd = p.Q.diagonal()
    bins = set(p.binaries)
    for j in range(p.n):
        flag = " B" if j in bins else ""
        lines.append(f"col {j} {m.names[j]} {p.lb[j]!r} {p.ub[j]!r} {p.c[j]!r} {qd[j]!r} {p.bound_tags[j]}{flag}")
    for kind, A, rhs, tags in (("eq", p.A_eq, p.b_eq, p.eq_tags), ("in", p.A_in, p.b_in, p.in_tags)):
        A = A.tocsr()
        for k in range(A.shape[0]):
            lo, hi = A.indptr[k], A.indptr[k + 1]
            terms = " ".join(f"{j}:{a!r}" for j, a in zip(A.indices[lo:hi], A.data[lo:hi]))
            lines.append(f"{kind} {k} {tags[k]} rhs={rhs[k]!r} {terms}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
