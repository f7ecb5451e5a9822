"""Named per-EV trajectories recovered from a solution vector."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..domain import Scenario, fingerprint, format_fairness
from ..errors import InvariantViolation, ParseError
from ..model import VarMap

FIELDS = ("charge", "discharge", "grid", "renewable", "v2g", "soc")
_KIND = {"charge": "ch", "discharge": "dis", "grid": "grid", "renewable": "renew", "v2g": "v2g", "soc": "soc"}
CLAMP = 1e-9


@dataclass
class Schedule:
    """Per-EV, per-slot energies (kWh) plus the directed V2V flow table.

    Arrays are ``(n_evs, slot_count)``; entries outside an EV's window are 0,
    except ``soc`` which holds the initial energy before arrival and the
    departure energy afterwards. ``mode_flag`` is NaN where no binary exists.
    """

    ev_ids: tuple[str, ...]
    windows: tuple[tuple[int, int], ...]
    charge: np.ndarray
    discharge: np.ndarray
    grid: np.ndarray
    renewable: np.ndarray
    v2g: np.ndarray
    soc: np.ndarray
    mode_flag: np.ndarray
    flows: dict = field(default_factory=dict)  # (sender id, receiver id, slot) -> kWh
    scenario_fingerprint: str = ""
    objective: float | None = None

    @property
    def slot_count(self) -> int:
        return self.charge.shape[1]

    def row(self, ev_id: str) -> int:
        return self.ev_ids.index(ev_id)

    def sends(self) -> np.ndarray:
        """Total V2V energy sent by each EV over the horizon."""
        out = np.zeros(len(self.ev_ids))
        for (a, _, _), v in self.flows.items():
            out[self.row(a)] += v
        return out

    def received(self) -> np.ndarray:
        out = np.zeros((len(self.ev_ids), self.slot_count))
        for (_, b, t), v in self.flows.items():
            out[self.row(b), t] += v
        return out

    def sent(self) -> np.ndarray:
        out = np.zeros((len(self.ev_ids), self.slot_count))
        for (a, _, t), v in self.flows.items():
            out[self.row(a), t] += v
        return out

    def to_dict(self) -> dict:
        evs = []
        for k, ev_id in enumerate(self.ev_ids):
            a, d = self.windows[k]
            rec = {"id": ev_id, "arrival": a, "departure": d}
            for f in FIELDS:
                rec[f] = [float(v) for v in getattr(self, f)[k, a:d + 1]]
            rec["mode_flag"] = [None if np.isnan(v) else float(v) for v in self.mode_flag[k, a:d + 1]]
            evs.append(rec)
        flows = [[a, b, t, float(v)] for (a, b, t), v in sorted(self.flows.items(), key=lambda kv: (kv[0][2], kv[0][0], kv[0][1]))]
        return {"scenario_fingerprint": self.scenario_fingerprint, "slot_count": self.slot_count,
                "objective": self.objective, "evs": evs, "flows": flows}

    @classmethod
    def from_dict(cls, d: dict, s: Scenario) -> "Schedule":
        try:
            T = int(d["slot_count"])
            evs = d["evs"]
            ids = tuple(e["id"] for e in evs)
            n = len(ids)
            arrs = {f: np.zeros((n, T)) for f in FIELDS}
            flag = np.full((n, T), np.nan)
            windows = []
            init = {ev.id: ev.initial_kwh for ev in s.fleet}
            for k, e in enumerate(evs):
                a, dep = int(e["arrival"]), int(e["departure"])
                windows.append((a, dep))
                for f in FIELDS:
                    vals = np.asarray(e[f], float)
                    if vals.size != dep - a + 1:
                        raise ParseError(f"ev {e['id']}: {f} has {vals.size} values for window [{a}, {dep}]")
                    arrs[f][k, a:dep + 1] = vals
                arrs["soc"][k, :a] = init.get(e["id"], np.nan)
                arrs["soc"][k, dep + 1:] = arrs["soc"][k, dep]
                flag[k, a:dep + 1] = [np.nan if v is None else float(v) for v in e["mode_flag"]]
            flows = {(str(a), str(b), int(t)): float(v) for a, b, t, v in d.get("flows", [])}
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"malformed schedule: {exc!r}") from exc
        return cls(ids, tuple(windows), arrs["charge"], arrs["discharge"], arrs["grid"], arrs["renewable"],
                   arrs["v2g"], arrs["soc"], flag, flows, d.get("scenario_fingerprint", ""), d.get("objective"))


def save_schedule(sched: Schedule, path) -> None:
    Path(path).write_text(json.dumps(sched.to_dict(), indent=1) + "\n")


def load_schedule(path, s: Scenario) -> Schedule:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if "schedule" in d and "evs" not in d:
        d = d["schedule"]  # a full run file
    return Schedule.from_dict(d, s)


def _vector(sol) -> tuple[np.ndarray, float | None]:
    if isinstance(sol, np.ndarray):
        return sol, None
    if getattr(sol, "x", None) is None:
        raise ValueError("solution carries no point (status %s)" % getattr(sol, "status", "?"))
    return np.asarray(sol.x, float), getattr(sol, "objective", None)


def extract_schedule(sol, m: VarMap, s: Scenario, tol: float = 1e-6, int_tol: float = 1e-5) -> Schedule:
    """Map a solution (MIQP, continuous, or a raw vector) onto named trajectories.

    Values below 1e-9 in magnitude are zeroed. The SOC recurrence, departure
    targets and charge/discharge exclusivity are re-checked on the result and
    :class:`InvariantViolation` names the first offending (ev, slot).
    """
    x, obj = _vector(sol)
    if x.size < m.n:
        raise ValueError(f"solution has {x.size} entries, layout needs {m.n}")
    x = np.where(np.abs(x) < CLAMP, 0.0, x)
    n, T = len(s.fleet), s.grid.slot_count
    arrs = {f: np.zeros((n, T)) for f in FIELDS}
    flag = np.full((n, T), np.nan)
    ix = m.index
    for i, ev in enumerate(s.fleet):
        for t in ev.window:
            for f in FIELDS:
                col = ix.get((_KIND[f], i, t))
                if col is not None:
                    arrs[f][i, t] = x[col]
            col = ix.get(("x", i, t))
            if col is not None:
                flag[i, t] = x[col]
        arrs["soc"][i, :ev.arrival] = ev.initial_kwh
        arrs["soc"][i, ev.departure + 1:] = arrs["soc"][i, ev.departure]
    flows = {}
    for i, j, t, col in m.flows():
        if x[col] != 0.0:
            flows[s.fleet[i].id, s.fleet[j].id, t] = float(x[col])

    sched = Schedule(tuple(ev.id for ev in s.fleet), tuple((ev.arrival, ev.departure) for ev in s.fleet),
                     arrs["charge"], arrs["discharge"], arrs["grid"], arrs["renewable"], arrs["v2g"],
                     arrs["soc"], flag, flows, fingerprint(s), obj)
    check_invariants(sched, s, tol, int_tol)
    return sched


def check_invariants(sched: Schedule, s: Scenario, tol: float = 1e-6, int_tol: float = 1e-5) -> None:
    for i, ev in enumerate(s.fleet):
        prev = ev.initial_kwh
        for t in ev.window:
            soc = sched.soc[i, t]
            expect = prev + ev.eff_charge * sched.charge[i, t] - sched.discharge[i, t] / ev.eff_discharge
            r = abs(soc - expect)
            if r > tol:
                raise InvariantViolation("soc recurrence", ev.id, t, r)
            ch, dis = sched.charge[i, t], sched.discharge[i, t]
            limit = int_tol * ev.max_charge_kwh_per_slot * ev.max_discharge_kwh_per_slot + CLAMP
            if ch * dis > limit:
                raise InvariantViolation("charge/discharge exclusivity", ev.id, t, ch * dis)
            prev = soc
        r = abs(sched.soc[i, ev.departure] - ev.target_kwh)
        if r > tol:
            raise InvariantViolation("departure target", ev.id, ev.departure, r)


def describe_policy(s: Scenario) -> str:
    return format_fairness(s.fairness)
