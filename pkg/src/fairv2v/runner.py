"""Solve one scenario end to end and collect the record, schedule and reports."""

from __future__ import annotations

import os
import time
from dataclasses import asdict, dataclass

from .domain import Scenario, fingerprint, format_fairness
from .metrics import AuditReport, CostBreakdown, FairnessReport, cost_breakdown, feasibility_audit, jain_index
from .model import assemble
from .solver import MiqpSolution, MiqpStatus, Schedule, SolverParams, extract_schedule, solve

ENV_OVERRIDES = {
    "FAIRV2V_GAP_TOL": "gap_tol",
    "FAIRV2V_NODE_LIMIT": "node_limit",
    "FAIRV2V_TOL": "tol",
    "FAIRV2V_SOLVER_MODE": "mode",
}


def resolve_params(file_block: dict | None = None, flags: dict | None = None, env=None) -> SolverParams:
    """Defaults, then the scenario file's ``solver`` block, then environment, then flags."""
    env = os.environ if env is None else env
    merged: dict = {}
    merged.update(file_block or {})
    for var, key in ENV_OVERRIDES.items():
        if env.get(var):
            merged[key] = env[var]
    merged.update({k: v for k, v in (flags or {}).items() if v is not None})
    return SolverParams.from_mapping(merged)


@dataclass
class RunResult:
    scenario: Scenario
    solution: MiqpSolution
    schedule: Schedule | None
    costs: CostBreakdown | None
    fairness: FairnessReport | None
    audit: AuditReport | None
    params: SolverParams
    wall_ms: float

    @property
    def feasible(self) -> bool:
        return self.schedule is not None

    def record(self) -> dict:
        sol = self.solution
        return {
            "fingerprint": fingerprint(self.scenario),
            "mode": self.scenario.mode.value,
            "fairness": format_fairness(self.scenario.fairness),
            "solver": asdict(self.params),
            "status": sol.status.value,
            "objective": sol.objective if self.feasible else None,
            "bound": sol.bound,
            "rel_gap": sol.rel_gap,
            "nodes_explored": sol.nodes_explored,
            "total_cost": self.costs.total_cost if self.costs else None,
            "jfi": self.fairness.jfi if self.fairness else None,
            "wall_ms": self.wall_ms,
        }

    def to_dict(self) -> dict:
        d = {"record": self.record()}
        if self.feasible:
            d["schedule"] = self.schedule.to_dict()
            d["costs"] = self.costs.to_dict()
            d["fairness"] = self.fairness.to_dict()
            d["audit"] = self.audit.to_dict()
        return d


def run(s: Scenario, params: SolverParams | None = None) -> RunResult:
    """Assemble, solve, extract and audit. Raises the model's input errors unchanged."""
    params = params or SolverParams()
    t0 = time.perf_counter()
    p, m = assemble(s)
    sol = solve(p, params, m)
    sched = costs = fair = audit = None
    if sol.x is not None:
        sched = extract_schedule(sol, m, s, tol=max(params.tol, 1e-6))
        costs = cost_breakdown(sched, s.tariff, s.fleet)
        fair = jain_index(sched, format_fairness(s.fairness))
        audit = feasibility_audit(sched, s, tol=max(params.tol, 1e-6))
    wall = (time.perf_counter() - t0) * 1e3
    return RunResult(s, sol, sched, costs, fair, audit, params, wall)


def infeasible(res: RunResult) -> bool:
    return res.solution.status is MiqpStatus.INFEASIBLE or res.schedule is None
