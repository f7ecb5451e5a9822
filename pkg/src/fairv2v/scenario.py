"""
Scenario generation for residential and shopping-center charging sites, TOU
tariff construction and half-hourly wholesale price ingestion.

None of the numeric defaults below (tariff levels, arrival statistics, SOC
distribution, efficiencies, degradation coefficient, synthetic sell prices) are
published values; they are configuration choices and can all be overridden.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .domain import EvSpec, Mode, Scenario, SupplyLimits, Tariff, TimeGrid, Unconstrained, reachability_check
from .errors import AlignmentError, CoverageError, FairV2VError, ParseError


class Case(str, enum.Enum):
    RESIDENTIAL = "residential"
    SHOPPING = "shopping"


# per-case defaults: slots, start label, arrival mean/sd (clock h), duration mean/sd (h)
_CASE_DEFAULTS = {
    Case.RESIDENTIAL: dict(slot_count=48, start_label="00:00", arrival=(18.0, 2.0), duration=(10.0, 3.0),
                           n_fixed=50, n_random=50),
    Case.SHOPPING: dict(slot_count=18, start_label="09:00", arrival=(11.0, 1.5), duration=(2.5, 1.0),
                        n_fixed=30, n_random=70),
}

DEFAULT_TOU_LEVELS = {"offpeak": 0.10, "shoulder": 0.20, "peak": 0.35}
# clock-hour windows [start, stop) for each level
DEFAULT_TOU_HOURS = {"offpeak": [(22.0, 24.0), (0.0, 7.0)], "shoulder": [(7.0, 17.0)], "peak": [(17.0, 22.0)]}
DEFAULT_SOC_DISTRIBUTION = ((0.2, 0.25), (0.3, 0.25), (0.4, 0.25), (0.5, 0.25))


@dataclass(frozen=True)
class PriceSeries:
    values: tuple[float, ...]
    source: str = "synthetic"
    column: str = ""
    note: str = ""

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class GenConfig:
    case: Case = Case.RESIDENTIAL
    n_fixed: int | None = None
    n_random: int | None = None
    seed: int = 0
    capacity_kwh: float = 50.0
    charger_kw: float = 7.0
    target_fraction_range: tuple[float, float] = (0.70, 1.00)
    initial_soc_distribution: tuple[tuple[float, float], ...] = DEFAULT_SOC_DISTRIBUTION
    grid_cap_kwh_per_slot: float | None = None  # None: n_EVs x charger energy per slot
    renewable_profile: str = "none"  # "none" or "bell"
    renewable_peak_kwh: float = 0.0
    slot_hours: float = 0.5
    slot_count: int | None = None
    start_label: str | None = None
    arrival_mean_h: float | None = None
    arrival_sd_h: float | None = None
    duration_mean_h: float | None = None
    duration_sd_h: float | None = None
    min_soc_fraction: float = 0.10
    eff_charge: float = 0.95
    eff_discharge: float = 0.95
    degradation_coeff: float = 0.01
    tou_levels: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_TOU_LEVELS))
    sell_prices: tuple[float, ...] | None = None
    mode: Mode = Mode.JOINT

    def __post_init__(self):
        object.__setattr__(self, "case", Case(self.case))
        lo, hi = self.target_fraction_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError("target_fraction_range must lie within [0, 1]")
        w = sum(p for _, p in self.initial_soc_distribution)
        if not math.isclose(w, 1.0, abs_tol=1e-9):
            raise ValueError(f"initial SOC weights sum to {w}, not 1")
        for k in ("n_fixed", "n_random"):
            v = getattr(self, k)
            if v is not None and v < 0:
                raise ValueError(f"{k} must be nonnegative")

    def resolved(self, key):
        d = _CASE_DEFAULTS[self.case]
        v = getattr(self, key)
        if v is not None:
            return v
        return {"arrival_mean_h": d["arrival"][0], "arrival_sd_h": d["arrival"][1],
                "duration_mean_h": d["duration"][0], "duration_sd_h": d["duration"][1]}.get(key, d.get(key))


def build_tou_tariff(levels: Mapping[str, float], windows: Mapping[str, Sequence[tuple[int, int]]],
                     grid: TimeGrid) -> PriceSeries:
    """Per-slot buy prices from level -> list of half-open slot ranges ``[start, stop)``.

    Every slot must be covered exactly once.
    """
    owner: list[str | None] = [None] * grid.slot_count
    for name, ranges in windows.items():
        if name not in levels:
            raise CoverageError(f"window for unknown level {name!r}")
        for a, b in ranges:
            if a < 0 or b > grid.slot_count or a > b:
                raise CoverageError(f"window [{a}, {b}) outside grid of {grid.slot_count} slots")
            for t in range(a, b):
                if owner[t] is not None:
                    raise CoverageError(f"slot {t} covered by both {owner[t]!r} and {name!r}")
                owner[t] = name
    missing = [t for t, o in enumerate(owner) if o is None]
    if missing:
        raise CoverageError(f"slots not covered by any window: {missing}")
    return PriceSeries(tuple(float(levels[o]) for o in owner), "tou", note="time-of-use levels")


def clock_windows(grid: TimeGrid, hours: Mapping[str, Sequence[tuple[float, float]]] = DEFAULT_TOU_HOURS):
    """Map clock-hour windows onto slot ranges by each slot's start time."""
    def level_at(h):
        h = h % 24.0
        for name, spans in hours.items():
            for a, b in spans:
                if a <= h < b:
                    return name
        raise CoverageError(f"clock hour {h} not covered")

    out: dict[str, list[tuple[int, int]]] = {}
    t = 0
    while t < grid.slot_count:
        name = level_at(grid.slot_start_hour(t))
        u = t
        while u + 1 < grid.slot_count and level_at(grid.slot_start_hour(u + 1)) == name:
            u += 1
        out.setdefault(name, []).append((t, u + 1))
        t = u + 1
    return out


def synthetic_sell_prices(grid: TimeGrid) -> PriceSeries:
    """Smooth wholesale-like $/kWh profile: evening peak, midday solar dip."""
    vals = []
    for t in range(grid.slot_count):
        h = (grid.slot_start_hour(t) + grid.slot_hours / 2) % 24.0
        v = 0.06 + 0.09 * math.exp(-((h - 18.5) / 2.0) ** 2) - 0.03 * math.exp(-((h - 13.0) / 2.5) ** 2)
        vals.append(round(v, 6))
    return PriceSeries(tuple(vals), "synthetic", note="not market data")


def load_sell_prices(path: str | Path, grid: TimeGrid) -> PriceSeries:
    """Read ``timestamp,price_per_mwh`` half-hourly rows and align them to ``grid`` in $/kWh.

    Half-hour grids take rows one-to-one; coarser grids that are a whole
    multiple of 30 minutes take the mean of each block of rows.
    """
    path = Path(path)
    stamps: list[datetime] = []
    prices: list[float] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp", "price_per_mwh"]:
            raise ParseError(f"{path}:1: expected header 'timestamp,price_per_mwh', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                stamps.append(datetime.fromisoformat(row[0].strip()))
                prices.append(float(row[1]))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            if not math.isfinite(prices[-1]):
                raise ParseError(f"{path}:{lineno}: non-finite price")
    half = timedelta(minutes=30)
    for k in range(1, len(stamps)):
        if stamps[k] - stamps[k - 1] != half:
            raise AlignmentError(f"{path}: rows {k + 1} and {k + 2} are not 30 minutes apart (gap or disorder)")
    ratio = grid.slot_hours / 0.5
    k = int(round(ratio))
    if k < 1 or not math.isclose(ratio, k, abs_tol=1e-9):
        raise AlignmentError(f"slot length {grid.slot_hours} h is not a multiple of 30 minutes")
    if len(prices) != k * grid.slot_count:
        raise AlignmentError(f"{path}: {len(prices)} half-hourly rows cannot tile {grid.slot_count} slots "
                             f"of {grid.slot_hours} h (need {k * grid.slot_count})")
    kwh = np.asarray(prices, float) / 1000.0
    vals = kwh.reshape(grid.slot_count, k).mean(axis=1)
    note = "one row per slot" if k == 1 else f"mean of {k} half-hourly rows per slot"
    return PriceSeries(tuple(float(v) for v in vals), str(path), "price_per_mwh", note)


def _truncated_normal(rng, mean, sd, lo, hi, tries=1000):
    for _ in range(tries):
        v = rng.normal(mean, sd)
        if lo <= v <= hi:
            return v
    return min(max(mean, lo), hi)


def _renewables(cfg: GenConfig, grid: TimeGrid) -> tuple[float, ...]:
    if cfg.renewable_profile == "none" or cfg.renewable_peak_kwh <= 0:
        return (0.0,) * grid.slot_count
    if cfg.renewable_profile != "bell":
        raise ValueError(f"unknown renewable profile {cfg.renewable_profile!r}")
    out = []
    for t in range(grid.slot_count):
        h = (grid.slot_start_hour(t) + grid.slot_hours / 2) % 24.0
        out.append(round(cfg.renewable_peak_kwh * math.exp(-((h - 12.5) / 2.5) ** 2), 6) if 6 <= h <= 19 else 0.0)
    return tuple(out)


def _generate(cfg: GenConfig, case: Case) -> Scenario:
    if cfg.case is not case:
        raise ValueError(f"config case is {cfg.case.value}, expected {case.value}")
    rng = np.random.default_rng(cfg.seed)
    H = int(cfg.resolved("slot_count"))
    grid = TimeGrid(H, cfg.slot_hours, cfg.resolved("start_label"))
    n_fixed = int(cfg.resolved("n_fixed"))
    n_random = int(cfg.resolved("n_random"))
    rate = grid.energy_per_slot(cfg.charger_kw)
    start_h = grid.slot_start_hour(0)
    socs = np.array([f for f, _ in cfg.initial_soc_distribution])
    weights = np.array([w for _, w in cfg.initial_soc_distribution])
    lo_f, hi_f = cfg.target_fraction_range
    cap = cfg.capacity_kwh

    def draw_ev(idx: int, fixed: bool) -> EvSpec:
        for _ in range(1000):
            if fixed or H == 1:
                a, d = 0, H - 1
            else:
                arr_h = _truncated_normal(rng, cfg.resolved("arrival_mean_h"), cfg.resolved("arrival_sd_h"),
                                          start_h, start_h + (H - 1) * cfg.slot_hours - 1e-9)
                a = min(int((arr_h - start_h) / cfg.slot_hours), H - 2)
                dur = _truncated_normal(rng, cfg.resolved("duration_mean_h"), cfg.resolved("duration_sd_h"),
                                        cfg.slot_hours, float("inf"))
                stay = max(1, int(round(dur / cfg.slot_hours)))
                d = min(a + stay, H - 1)
            init = round(float(rng.choice(socs, p=weights)) * cap, 6)
            ev = None
            for _ in range(50):
                tgt = round(max(float(rng.uniform(lo_f, hi_f)) * cap, init), 2)
                ev = EvSpec(
                    id=f"ev{idx:03d}", arrival=a, departure=d, capacity_kwh=cap,
                    min_kwh=round(cfg.min_soc_fraction * cap, 6), initial_kwh=init, target_kwh=tgt,
                    max_charge_kwh_per_slot=rate, max_discharge_kwh_per_slot=rate,
                    v2g_cap_kwh_per_slot=rate, v2v_pair_cap_kwh_per_slot=rate,
                    eff_charge=cfg.eff_charge, eff_discharge=cfg.eff_discharge,
                    degradation_coeff=cfg.degradation_coeff,
                )
                if reachability_check(ev, grid) >= 0:
                    return ev
        raise FairV2VError(f"could not draw a reachable EV #{idx} after repeated attempts")

    fleet = [draw_ev(k, True) for k in range(n_fixed)]
    fleet += [draw_ev(n_fixed + k, False) for k in range(n_random)]

    buy = build_tou_tariff(cfg.tou_levels, clock_windows(grid), grid)
    sell = cfg.sell_prices if cfg.sell_prices is not None else synthetic_sell_prices(grid).values
    if len(sell) != H:
        raise AlignmentError(f"sell price series has {len(sell)} entries, grid has {H} slots")
    gcap = cfg.grid_cap_kwh_per_slot
    if gcap is None:
        gcap = len(fleet) * rate
    return Scenario(grid, tuple(fleet), Tariff(buy.values, tuple(sell)),
                    SupplyLimits(float(gcap), _renewables(cfg, grid)), Unconstrained(), cfg.mode)


def generate_residential(cfg: GenConfig) -> Scenario:
    """Home site: fixed EVs parked all day plus EVs with random evening stays."""
    return _generate(cfg, Case.RESIDENTIAL)


def generate_shopping(cfg: GenConfig) -> Scenario:
    """Shopping-center site over business hours: staff EVs all day plus short customer visits."""
    return _generate(cfg, Case.SHOPPING)


def generate(cfg: GenConfig) -> Scenario:
    return _generate(cfg, cfg.case)
