"""
Core value types for charging-site scenarios.

Every power-like quantity is stored as energy per slot (kWh). A 7 kW charger
on a half-hour grid is therefore ``max_charge_kwh_per_slot = 3.5``. Prices are
$/kWh and slot indices are 0-based and inclusive at both ends of a stay.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import MISSING, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import ParseError


@dataclass(frozen=True)
class TimeGrid:
    slot_count: int
    slot_hours: float
    start_label: str = "00:00"

    @property
    def horizon_hours(self) -> float:
        return self.slot_count * self.slot_hours

    def slot_start_hour(self, t: int) -> float:
        """Clock hour (possibly past 24) at which slot ``t`` begins."""
        hh, mm = self.start_label.split(":")
        return int(hh) + int(mm) / 60.0 + t * self.slot_hours

    def energy_per_slot(self, kw: float) -> float:
        return kw * self.slot_hours


@dataclass(frozen=True)
class EvSpec:
    id: str
    arrival: int
    departure: int
    capacity_kwh: float
    min_kwh: float
    initial_kwh: float
    target_kwh: float
    max_charge_kwh_per_slot: float
    max_discharge_kwh_per_slot: float
    v2g_cap_kwh_per_slot: float
    v2v_pair_cap_kwh_per_slot: float
    eff_charge: float = 1.0
    eff_discharge: float = 1.0
    degradation_coeff: float = 0.0

    @property
    def window(self) -> range:
        return range(self.arrival, self.departure + 1)

    def present(self, t: int) -> bool:
        return self.arrival <= t <= self.departure


@dataclass(frozen=True)
class Tariff:
    buy_price: tuple[float, ...]
    sell_price: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "buy_price", tuple(float(v) for v in self.buy_price))
        object.__setattr__(self, "sell_price", tuple(float(v) for v in self.sell_price))


@dataclass(frozen=True)
class SupplyLimits:
    grid_cap_kwh_per_slot: float
    renewable_kwh: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "renewable_kwh", tuple(float(v) for v in self.renewable_kwh))


# Fairness policies. Each is a small immutable value; ``kind`` is the tag used
# in JSON and in the CLI grammar.


@dataclass(frozen=True)
class Unconstrained:
    kind = "none"


@dataclass(frozen=True)
class HardPerSlot:
    """Per-slot cap on every EV's discharge."""

    zbar: float
    kind = "hard"


@dataclass(frozen=True)
class SoftCumulative:
    """Cap on each EV's total discharge over its stay."""

    zbar_c: float
    kind = "soft"


@dataclass(frozen=True)
class Budget:
    """Per-slot threshold ``theta`` with a cap on each EV's summed excess above it."""

    theta: float
    budget_per_ev: float
    overrides: tuple[tuple[str, float], ...] = ()
    kind = "budget"

    def budget_for(self, ev_id: str) -> float:
        for k, v in self.overrides:
            if k == ev_id:
                return v
        return self.budget_per_ev


FairnessPolicy = Unconstrained | HardPerSlot | SoftCumulative | Budget


class Mode(str, enum.Enum):
    CHARGING_ONLY = "charging-only"
    V2G_ONLY = "v2g"
    JOINT = "joint"

    @property
    def has_discharge(self) -> bool:
        return self is not Mode.CHARGING_ONLY

    @property
    def has_v2v(self) -> bool:
        return self is Mode.JOINT


@dataclass(frozen=True)
class Scenario:
    grid: TimeGrid
    fleet: tuple[EvSpec, ...]
    tariff: Tariff
    supply: SupplyLimits
    fairness: FairnessPolicy = field(default_factory=Unconstrained)
    mode: Mode = Mode.JOINT
    # optional per ordered pair (sender id, receiver id) -> kWh/slot
    pair_caps: tuple[tuple[str, str, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "fleet", tuple(self.fleet))
        object.__setattr__(self, "mode", Mode(self.mode))

    def with_policy(self, fairness: FairnessPolicy) -> "Scenario":
        return replace(self, fairness=fairness)

    def with_mode(self, mode: Mode | str) -> "Scenario":
        return replace(self, mode=Mode(mode))

    def pair_cap(self, sender: EvSpec, receiver: EvSpec) -> float:
        for a, b, cap in self.pair_caps:
            if a == sender.id and b == receiver.id:
                return cap
        return sender.v2v_pair_cap_kwh_per_slot

    def present_at(self, t: int) -> list[int]:
        return [k for k, ev in enumerate(self.fleet) if ev.present(t)]


@dataclass(frozen=True, order=True)
class Violation:
    ev_id: str  # "" for scenario-level problems
    field: str
    message: str
    slot: int | None = None

    def __str__(self):
        where = f"ev {self.ev_id}: " if self.ev_id else ""
        at = f" (slot {self.slot})" if self.slot is not None else ""
        return f"{where}{self.field}: {self.message}{at}"


def _series_violations(name: str, series: Sequence[float], n: int, nonneg: bool) -> list[Violation]:
    out = []
    if len(series) != n:
        out.append(Violation("", name, f"length {len(series)} != slot_count {n}"))
    for t, v in enumerate(series):
        if not math.isfinite(v):
            out.append(Violation("", name, "non-finite entry", t))
        elif nonneg and v < 0:
            out.append(Violation("", name, "negative entry", t))
    return out


def _ev_violations(ev: EvSpec, grid: TimeGrid) -> list[Violation]:
    v = []

    def bad(fld, msg):
        v.append(Violation(ev.id, fld, msg))

    if ev.arrival > ev.departure:
        bad("arrival", "arrival after departure")
    if ev.arrival < 0 or ev.arrival >= grid.slot_count:
        bad("arrival", "arrival outside time grid")
    if ev.departure < 0 or ev.departure >= grid.slot_count:
        bad("departure", "departure outside time grid")
    if ev.min_kwh > ev.capacity_kwh:
        bad("min_kwh", "minimum exceeds capacity")
    if ev.initial_kwh > ev.capacity_kwh:
        bad("initial_kwh", "initial exceeds capacity")
    if ev.initial_kwh < ev.min_kwh:
        bad("initial_kwh", "initial below minimum")
    if ev.target_kwh > ev.capacity_kwh:
        bad("target_kwh", "target exceeds capacity")
    if ev.target_kwh < ev.min_kwh:
        bad("target_kwh", "target below minimum")
    for name in ("max_charge_kwh_per_slot", "max_discharge_kwh_per_slot",
                 "v2g_cap_kwh_per_slot", "v2v_pair_cap_kwh_per_slot",
                 "degradation_coeff", "min_kwh"):
        if getattr(ev, name) < 0:
            bad(name, "must be nonnegative")
    if not 0.0 <= ev.eff_charge <= 1.0:
        bad("eff_charge", "must lie in [0, 1]")
    if not 0.0 < ev.eff_discharge <= 1.0:
        bad("eff_discharge", "must lie in (0, 1]")
    return v


def _policy_violations(policy: FairnessPolicy) -> list[Violation]:
    checks = {
        HardPerSlot: ("zbar",),
        SoftCumulative: ("zbar_c",),
        Budget: ("theta", "budget_per_ev"),
    }
    out = []
    for name in checks.get(type(policy), ()):
        if getattr(policy, name) < 0:
            out.append(Violation("", f"fairness.{name}", "threshold must be nonnegative"))
    if isinstance(policy, Budget):
        for ev_id, val in policy.overrides:
            if val < 0:
                out.append(Violation(ev_id, "fairness.budget", "threshold must be nonnegative"))
    return out


def validate_scenario(s: Scenario) -> list[Violation]:
    """Return every violated invariant, sorted by (ev id, field); empty means valid."""
    g = s.grid
    out: list[Violation] = []
    if g.slot_count < 1:
        out.append(Violation("", "grid.slot_count", "must be at least 1"))
    if not g.slot_hours > 0:
        out.append(Violation("", "grid.slot_hours", "must be positive"))
    n = max(g.slot_count, 0)
    out += _series_violations("tariff.buy_price", s.tariff.buy_price, n, nonneg=True)
    out += _series_violations("tariff.sell_price", s.tariff.sell_price, n, nonneg=False)
    out += _series_violations("supply.renewable_kwh", s.supply.renewable_kwh, n, nonneg=True)
    if s.supply.grid_cap_kwh_per_slot < 0:
        out.append(Violation("", "supply.grid_cap_kwh_per_slot", "must be nonnegative"))
    out += _policy_violations(s.fairness)

    seen: set[str] = set()
    for ev in s.fleet:
        if ev.id in seen:
            out.append(Violation(ev.id, "id", "duplicate EV id"))
        seen.add(ev.id)
        out += _ev_violations(ev, g)
    for a, b, cap in s.pair_caps:
        if a not in seen or b not in seen:
            out.append(Violation(a, "pair_caps", f"unknown EV in pair ({a}, {b})"))
        if a == b:
            out.append(Violation(a, "pair_caps", "self pair"))
        if cap < 0:
            out.append(Violation(a, "pair_caps", "must be nonnegative"))
    return sorted(out, key=lambda v: (v.ev_id, v.field, v.slot if v.slot is not None else -1, v.message))


def reachability_check(ev: EvSpec, grid: TimeGrid | None = None) -> float:
    """Energy surplus at departure under full-rate charging; negative means unreachable."""
    slots = ev.departure - ev.arrival + 1
    return ev.initial_kwh + ev.eff_charge * ev.max_charge_kwh_per_slot * slots - ev.target_kwh


# ---------------------------------------------------------------------------
# JSON serialization

def policy_to_dict(p: FairnessPolicy) -> dict[str, Any]:
    if isinstance(p, HardPerSlot):
        return {"kind": "hard", "zbar": p.zbar}
    if isinstance(p, SoftCumulative):
        return {"kind": "soft", "zbar_c": p.zbar_c}
    if isinstance(p, Budget):
        d: dict[str, Any] = {"kind": "budget", "theta": p.theta, "budget_per_ev": p.budget_per_ev}
        if p.overrides:
            d["overrides"] = {k: v for k, v in p.overrides}
        return d
    return {"kind": "none"}


def policy_from_dict(d: Mapping[str, Any]) -> FairnessPolicy:
    kind = d.get("kind", "none")
    if kind == "none":
        return Unconstrained()
    if kind == "hard":
        return HardPerSlot(float(d["zbar"]))
    if kind == "soft":
        return SoftCumulative(float(d["zbar_c"]))
    if kind == "budget":
        ov = tuple(sorted((str(k), float(v)) for k, v in d.get("overrides", {}).items()))
        return Budget(float(d["theta"]), float(d["budget_per_ev"]), ov)
    raise ParseError(f"unknown fairness kind {kind!r}")


def parse_fairness(text: str) -> FairnessPolicy:
    """Parse ``none | hard:<zbar> | soft:<zbarc> | budget:<theta>,<D>``."""
    text = text.strip()
    kind, _, arg = text.partition(":")
    try:
        if kind == "none" and not arg:
            return Unconstrained()
        if kind == "hard":
            return HardPerSlot(float(arg))
        if kind == "soft":
            return SoftCumulative(float(arg))
        if kind == "budget":
            theta, d = arg.split(",")
            return Budget(float(theta), float(d))
    except ValueError:
        pass
    raise ParseError(f"bad fairness spec {text!r}; expected none|hard:Z|soft:Zc|budget:theta,D")


def format_fairness(p: FairnessPolicy) -> str:
    if isinstance(p, HardPerSlot):
        return f"hard:{p.zbar!r}"
    if isinstance(p, SoftCumulative):
        return f"soft:{p.zbar_c!r}"
    if isinstance(p, Budget):
        return f"budget:{p.theta!r},{p.budget_per_ev!r}"
    return "none"


def scenario_to_dict(s: Scenario) -> dict[str, Any]:
    d = {
        "grid": {"slot_count": s.grid.slot_count, "slot_hours": s.grid.slot_hours,
                 "start_label": s.grid.start_label},
        "fleet": [{f.name: getattr(ev, f.name) for f in fields(EvSpec)} for ev in s.fleet],
        "tariff": {"buy_price": list(s.tariff.buy_price), "sell_price": list(s.tariff.sell_price)},
        "supply": {"grid_cap_kwh_per_slot": s.supply.grid_cap_kwh_per_slot,
                   "renewable_kwh": list(s.supply.renewable_kwh)},
        "fairness": policy_to_dict(s.fairness),
        "mode": s.mode.value,
    }
    if s.pair_caps:
        d["pair_caps"] = [{"from": a, "to": b, "cap": c} for a, b, c in s.pair_caps]
    return d


_EV_INT = {"arrival", "departure"}


def scenario_from_dict(d: Mapping[str, Any]) -> Scenario:
    try:
        g = d["grid"]
        grid = TimeGrid(int(g["slot_count"]), float(g["slot_hours"]), str(g.get("start_label", "00:00")))
        fleet = []
        for e in d["fleet"]:
            kw = {}
            for f in fields(EvSpec):
                if f.name not in e:
                    if f.default is not MISSING:
                        continue
                    raise KeyError(f.name)
                val = e[f.name]
                kw[f.name] = str(val) if f.name == "id" else int(val) if f.name in _EV_INT else float(val)
            fleet.append(EvSpec(**kw))
        tariff = Tariff(d["tariff"]["buy_price"], d["tariff"]["sell_price"])
        sup = d["supply"]
        supply = SupplyLimits(float(sup["grid_cap_kwh_per_slot"]), sup["renewable_kwh"])
        fairness = policy_from_dict(d.get("fairness", {"kind": "none"}))
        mode = Mode(d.get("mode", Mode.JOINT.value))
        pairs = tuple((str(p["from"]), str(p["to"]), float(p["cap"])) for p in d.get("pair_caps", []))
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed scenario document: {exc!r}") from exc
    return Scenario(grid, tuple(fleet), tariff, supply, fairness, mode, pairs)


def dumps_scenario(s: Scenario, solver: Mapping[str, Any] | None = None) -> str:
    d = scenario_to_dict(s)
    if solver:
        d["solver"] = dict(solver)
    return json.dumps(d, indent=1, sort_keys=True) + "\n"


def save_scenario(s: Scenario, path: str | Path, solver: Mapping[str, Any] | None = None) -> None:
    Path(path).write_text(dumps_scenario(s, solver))


def read_scenario_file(path: str | Path) -> tuple[Scenario, dict[str, Any]]:
    """Load a scenario JSON file; returns the scenario and its optional ``solver`` block."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be an object")
    return scenario_from_dict(raw), dict(raw.get("solver") or {})


def load_scenario(path: str | Path) -> Scenario:
    return read_scenario_file(path)[0]


def fingerprint(s: Scenario) -> str:
    """Content hash of the scenario, stable across re-serialization."""
    canon = json.dumps(scenario_to_dict(s), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def uniform_fleet(ids: Iterable[str], **kw) -> tuple[EvSpec, ...]:
    """Convenience: identical EVs differing only by id."""
    return tuple(EvSpec(id=i, **kw) for i in ids)
