"""
Fairness index, cost decomposition, independent feasibility audit and run comparison.

Everything here works from a :class:`~fairv2v.solver.schedule.Schedule` and the
scenario data, never from solver internals, so the audit is a genuine re-check.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .domain import Budget, HardPerSlot, Scenario, SoftCumulative, Tariff, format_fairness
from .errors import DimensionError, ZeroBaseline
from .solver.schedule import Schedule

PARTICIPATION_EPS = 1e-9


@dataclass(frozen=True)
class FairnessReport:
    jfi: float
    participant_count: int
    mean_sends: dict  # ev id -> average V2V discharge per slot (kWh), participants only
    policy: str = "none"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EvCost:
    grid_cost: float
    degradation_cost: float
    v2g_revenue: float

    @property
    def total(self) -> float:
        return self.grid_cost + self.degradation_cost - self.v2g_revenue


@dataclass(frozen=True)
class CostBreakdown:
    per_ev: dict  # ev id -> EvCost
    grid_cost: float
    degradation_cost: float
    v2g_revenue: float
    total_cost: float

    def to_dict(self) -> dict:
        return {
            "grid_cost": self.grid_cost, "degradation_cost": self.degradation_cost,
            "v2g_revenue": self.v2g_revenue, "total_cost": self.total_cost,
            "per_ev": {k: {**asdict(v), "total": v.total} for k, v in self.per_ev.items()},
        }


@dataclass
class AuditReport:
    residuals: dict  # family -> max violation (kWh)
    tol: float
    worst: dict = field(default_factory=dict)  # family -> (ev id, slot) of the max

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.residuals.values())

    @property
    def failures(self) -> list[str]:
        return [k for k, v in self.residuals.items() if v > self.tol]

    def table(self) -> str:
        w = max(len(k) for k in self.residuals) if self.residuals else 6
        lines = [f"{'family':<{w}}  {'max residual':>13}  status  where"]
        for k, v in self.residuals.items():
            where = self.worst.get(k)
            loc = f"{where[0]}@{where[1]}" if where and where[0] is not None else ""
            lines.append(f"{k:<{w}}  {v:13.3e}  {'ok' if v <= self.tol else 'FAIL':>6}  {loc}")
        lines.append(f"tolerance {self.tol:g}: {'pass' if self.passed else 'FAIL'}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"tol": self.tol, "passed": self.passed, "residuals": dict(self.residuals),
                "worst": {k: list(v) for k, v in self.worst.items()}}


def jain_index(sched: Schedule, policy: str = "none") -> FairnessReport:
    """Jain's index over EVs that send V2V energy.

    Each participant's share is its total outgoing flow divided by the horizon
    slot count; with at most one participant the index is 1.
    """
    sends = sched.sends() / sched.slot_count
    part = {ev: float(v) for ev, v in zip(sched.ev_ids, sends) if v * sched.slot_count > PARTICIPATION_EPS}
    vals = np.array(list(part.values()))
    R = len(vals)
    jfi = 1.0 if R <= 1 else float(vals.sum() ** 2 / (R * np.sum(vals**2)))
    return FairnessReport(jfi, R, part, policy)


def jain_from_values(values) -> float:
    """Index for a bare list of participant means (zeros are non-participants)."""
    v = np.asarray([x for x in values if x > PARTICIPATION_EPS], float)
    if v.size <= 1:
        return 1.0
    return float(v.sum() ** 2 / (v.size * np.sum(v**2)))


def cost_breakdown(sched: Schedule, tariff: Tariff, fleet) -> CostBreakdown:
    T = sched.slot_count
    if len(tariff.buy_price) != T or len(tariff.sell_price) != T:
        raise DimensionError(f"tariff has {len(tariff.buy_price)}/{len(tariff.sell_price)} slots, schedule {T}")
    if len(fleet) != len(sched.ev_ids):
        raise DimensionError(f"fleet has {len(fleet)} EVs, schedule {len(sched.ev_ids)}")
    buy = np.asarray(tariff.buy_price)
    sell = np.asarray(tariff.sell_price)
    per = {}
    for k, ev in enumerate(fleet):
        per[ev.id] = EvCost(
            grid_cost=float(buy @ sched.grid[k]),
            degradation_cost=float(ev.degradation_coeff * np.sum(sched.discharge[k] ** 2)),
            v2g_revenue=float(sell @ sched.v2g[k]),
        )
    g = sum(c.grid_cost for c in per.values())
    b = sum(c.degradation_cost for c in per.values())
    r = sum(c.v2g_revenue for c in per.values())
    return CostBreakdown(per, g, b, r, g + b - r)


def compare_costs(a, b) -> float:
    """Percent reduction of ``b`` relative to ``a`` (positive when ``b`` is cheaper)."""
    ta = a.total_cost if isinstance(a, CostBreakdown) else float(a)
    tb = b.total_cost if isinstance(b, CostBreakdown) else float(b)
    if ta == 0:
        raise ZeroBaseline("baseline total cost is zero")
    return 100.0 * (ta - tb) / ta


class _Max:
    def __init__(self):
        self.v, self.where = {}, {}

    def put(self, fam, value, ev=None, slot=None):
        value = float(max(value, 0.0))
        if fam not in self.v or value > self.v[fam]:
            self.v[fam] = value
            self.where[fam] = (ev, slot)


def feasibility_audit(sched: Schedule, s: Scenario, tol: float = 1e-6) -> AuditReport:
    """Re-check every constraint family directly on the schedule values."""
    acc = _Max()
    fams = ["dynamics", "bounds", "target", "grid_cap", "renewable_cap", "v2g_cap", "v2v_cap",
            "charge_balance", "discharge_balance", "exclusivity"]
    for f in fams:
        acc.put(f, 0.0)
    rows = {ev_id: k for k, ev_id in enumerate(sched.ev_ids)}
    recv, sent = sched.received(), sched.sent()
    mode = s.mode
    for ev in s.fleet:
        k = rows.get(ev.id)
        if k is None:
            acc.put("bounds", np.inf, ev.id, None)
            continue
        prev = ev.initial_kwh
        for t in range(sched.slot_count):
            ch, dis, g, rn, vg, soc = (sched.charge[k, t], sched.discharge[k, t], sched.grid[k, t],
                                      sched.renewable[k, t], sched.v2g[k, t], sched.soc[k, t])
            if not ev.present(t):
                acc.put("bounds", max(abs(ch), abs(dis), abs(g), abs(rn), abs(vg),
                                      abs(recv[k, t]), abs(sent[k, t])), ev.id, t)
                continue
            acc.put("dynamics", abs(soc - prev - ev.eff_charge * ch + dis / ev.eff_discharge), ev.id, t)
            prev = soc
            dis_cap = ev.max_discharge_kwh_per_slot if mode.has_discharge else 0.0
            acc.put("bounds", max(-ch, ch - ev.max_charge_kwh_per_slot, -dis, dis - dis_cap, -g, -rn, -vg,
                                  ev.min_kwh - soc, soc - ev.capacity_kwh), ev.id, t)
            acc.put("v2g_cap", vg - (ev.v2g_cap_kwh_per_slot if mode.has_discharge else 0.0), ev.id, t)
            acc.put("charge_balance", abs(ch - g - rn - recv[k, t]), ev.id, t)
            acc.put("discharge_balance", abs(dis - vg - sent[k, t]), ev.id, t)
            acc.put("exclusivity", ch * dis, ev.id, t)
        acc.put("target", abs(sched.soc[k, ev.departure] - ev.target_kwh), ev.id, ev.departure)

    by_id = {ev.id: ev for ev in s.fleet}
    for (a, b, t), v in sched.flows.items():
        ea, eb = by_id.get(a), by_id.get(b)
        if ea is None or eb is None or a == b or not mode.has_v2v:
            acc.put("v2v_cap", abs(v), a, t)
            continue
        if not (ea.present(t) and eb.present(t)):
            acc.put("v2v_cap", abs(v), a, t)
        acc.put("v2v_cap", max(-v, v - s.pair_cap(ea, eb)), a, t)

    idx = [rows[ev.id] for ev in s.fleet if ev.id in rows]
    for t in range(sched.slot_count):
        acc.put("grid_cap", sched.grid[idx, t].sum() - s.supply.grid_cap_kwh_per_slot, None, t)
        acc.put("renewable_cap", sched.renewable[idx, t].sum() - s.supply.renewable_kwh[t], None, t)

    pol = s.fairness
    if mode.has_discharge:
        for ev in s.fleet:
            k = rows.get(ev.id)
            if k is None:
                continue
            d = sched.discharge[k]
            if isinstance(pol, HardPerSlot):
                acc.put("fairness_hard", float(np.max(d - pol.zbar)), ev.id, int(np.argmax(d)))
            elif isinstance(pol, SoftCumulative):
                acc.put("fairness_soft", float(d.sum() - pol.zbar_c), ev.id, None)
            elif isinstance(pol, Budget):
                hinge = float(np.maximum(d - pol.theta, 0.0).sum())
                acc.put("fairness_budget", hinge - pol.budget_for(ev.id), ev.id, None)
    return AuditReport(acc.v, tol, acc.where)


def hinge_sums(sched: Schedule, theta: float) -> dict:
    """Per-EV sum over slots of max(discharge - theta, 0)."""
    return {ev: float(np.maximum(sched.discharge[k] - theta, 0.0).sum()) for k, ev in enumerate(sched.ev_ids)}


def report_json(costs: CostBreakdown, fair: FairnessReport, audit: AuditReport | None = None) -> str:
    d = {"costs": costs.to_dict(), "fairness": fair.to_dict()}
    if audit is not None:
        d["audit"] = audit.to_dict()
    return json.dumps(d, indent=1, sort_keys=True)


def report_csv(costs: CostBreakdown, fair: FairnessReport) -> str:
    """One row per EV plus a totals row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ev", "grid_cost", "degradation_cost", "v2g_revenue", "total_cost", "mean_v2v_send"])
    for ev, c in costs.per_ev.items():
        w.writerow([ev, repr(c.grid_cost), repr(c.degradation_cost), repr(c.v2g_revenue), repr(c.total),
                    repr(fair.mean_sends.get(ev, 0.0))])
    w.writerow(["TOTAL", repr(costs.grid_cost), repr(costs.degradation_cost), repr(costs.v2g_revenue),
                repr(costs.total_cost), f"jfi={fair.jfi!r}"])
    return buf.getvalue()


def policy_label(s: Scenario) -> str:
    return format_fairness(s.fairness)
