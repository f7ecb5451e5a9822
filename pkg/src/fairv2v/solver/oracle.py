"""
Discretized exhaustive oracle for tiny instances.

Charge, V2G and directed-flow levels are taken from ``{0, step, ..., cap}``;
discharge is V2G plus outgoing flows. Grid and renewable draw are not
enumerated: renewable energy is free, so for a given slot decision the
cheapest split draws ``min(need, renewable cap)`` from renewables and the rest
from the grid, which is exact. The enumeration runs slot by slot as a dynamic
program over the SOC vector (plus the fairness accumulator, when one is active),
so the result is the true minimum over the discrete decision set.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from ..domain import Budget, HardPerSlot, Scenario, SoftCumulative
from ..errors import NoFeasiblePoint, TooLarge

MAX_PRODUCT = 10**7
_CHUNK = 1 << 18
_KEY = 1e9  # state keys are SOC values rounded to nano-kWh


def _levels(cap: float, step: float) -> np.ndarray:
    k = int(math.floor(cap / step + 1e-9))
    return np.arange(k + 1) * step


def _unique_min(keys: np.ndarray, cost: np.ndarray, payload: np.ndarray):
    """Keep the cheapest row per distinct key row."""
    if keys.shape[0] == 0:
        return keys, cost, payload
    order = np.lexsort((cost,) + tuple(keys[:, c] for c in range(keys.shape[1] - 1, -1, -1)))
    k = keys[order]
    first = np.ones(len(order), bool)
    first[1:] = np.any(k[1:] != k[:-1], axis=1)
    sel = order[first]
    return keys[sel], cost[sel], payload[sel]


def _slot_moves(s: Scenario, t: int, step: float):
    """Collapsed decisions at slot t: (delta matrix [soc..., acc...], cost vector)."""
    fleet = s.fleet
    n = len(fleet)
    mode = s.mode
    pol = s.fairness
    active = [i for i in range(n) if fleet[i].present(t)]
    track_acc = isinstance(pol, (SoftCumulative, Budget)) and mode.has_discharge
    width = n + (n if track_acc else 0)
    if not active:
        return np.zeros((1, width)), np.zeros(1)

    names, levels = [], []
    for i in active:
        names.append(("ch", i))
        levels.append(_levels(fleet[i].max_charge_kwh_per_slot, step))
        if mode.has_discharge:
            names.append(("v2g", i))
            levels.append(_levels(fleet[i].v2g_cap_kwh_per_slot, step))
    if mode.has_v2v:
        for i, j in itertools.permutations(active, 2):
            names.append(("flow", i, j))
            cap = min(s.pair_cap(fleet[i], fleet[j]), fleet[i].max_discharge_kwh_per_slot)
            levels.append(_levels(cap, step))
    sizes = [len(v) for v in levels]
    total = math.prod(sizes)
    if total > MAX_PRODUCT:
        raise TooLarge(f"slot {t}: {total} joint decisions exceed {MAX_PRODUCT}")

    buy = s.tariff.buy_price[t]
    sell = s.tariff.sell_price[t]
    gcap = s.supply.grid_cap_kwh_per_slot
    rcap = s.supply.renewable_kwh[t]
    keys_acc, cost_acc, delta_acc = [], [], []
    for lo in range(0, total, _CHUNK):
        flat = np.arange(lo, min(total, lo + _CHUNK))
        idx = np.unravel_index(flat, sizes)
        val = {nm: levels[k][idx[k]] for k, nm in enumerate(names)}
        m = flat.size
        ok = np.ones(m, bool)
        cost = np.zeros(m)
        need = np.zeros(m)
        delta = np.zeros((m, width))
        for i in active:
            ev = fleet[i]
            ch = val["ch", i]
            inflow = sum((val["flow", j, i] for j in active if ("flow", j, i) in val), np.zeros(m))
            out = sum((val["flow", i, j] for j in active if ("flow", i, j) in val), np.zeros(m))
            v2g = val.get(("v2g", i), np.zeros(m))
            dis = v2g + out
            ok &= ch - inflow >= -1e-12
            need += ch - inflow
            if mode.has_discharge:
                ok &= dis <= ev.max_discharge_kwh_per_slot + 1e-12
                if ev.max_charge_kwh_per_slot > 0 and ev.max_discharge_kwh_per_slot > 0:
                    ok &= ~((ch > 0) & (dis > 0))
                if isinstance(pol, HardPerSlot):
                    ok &= dis <= pol.zbar + 1e-12
            cost += ev.degradation_coeff * dis**2 - sell * v2g
            delta[:, i] = ev.eff_charge * ch - dis / ev.eff_discharge
            if track_acc:
                delta[:, n + i] = dis if isinstance(pol, SoftCumulative) else np.maximum(dis - pol.theta, 0.0)
        grid = np.maximum(need - rcap, 0.0)
        ok &= grid <= gcap + 1e-12
        cost += buy * grid
        if not ok.any():
            continue
        d = delta[ok]
        k = np.round(d * _KEY).astype(np.int64)
        k, c, d = _unique_min(k, cost[ok], d)
        keys_acc.append(k)
        cost_acc.append(c)
        delta_acc.append(d)
    if not keys_acc:
        return np.zeros((0, width)), np.zeros(0)
    k, c, d = _unique_min(np.vstack(keys_acc), np.concatenate(cost_acc), np.vstack(delta_acc))
    return d, c


def brute_force_oracle(s: Scenario, step_kwh: float) -> float:
    """Minimum objective over the step-discretized decision set.

    Departure targets count as met within ``step_kwh / 2``.
    """
    if step_kwh <= 0:
        raise ValueError("step_kwh must be positive")
    fleet = s.fleet
    n = len(fleet)
    pol = s.fairness
    track_acc = isinstance(pol, (SoftCumulative, Budget)) and s.mode.has_discharge
    width = n + (n if track_acc else 0)
    if track_acc:
        limit = np.array([pol.zbar_c if isinstance(pol, SoftCumulative) else pol.budget_for(ev.id)
                          for ev in fleet])

    state = np.zeros((1, width))
    state[0, :n] = [ev.initial_kwh for ev in fleet]
    cost = np.zeros(1)
    for t in range(s.grid.slot_count):
        d, c = _slot_moves(s, t, step_kwh)
        if d.shape[0] == 0:
            raise NoFeasiblePoint(f"no admissible decision at slot {t}")
        new = (state[:, None, :] + d[None, :, :]).reshape(-1, width)
        nc = (cost[:, None] + c[None, :]).ravel()
        ok = np.ones(len(nc), bool)
        for i, ev in enumerate(fleet):
            if ev.present(t):
                ok &= (new[:, i] >= ev.min_kwh - 1e-9) & (new[:, i] <= ev.capacity_kwh + 1e-9)
            if t == ev.departure:
                ok &= np.abs(new[:, i] - ev.target_kwh) <= step_kwh / 2 + 1e-9
        if track_acc:
            ok &= np.all(new[:, n:] <= limit + 1e-9, axis=1)
        new, nc = new[ok], nc[ok]
        if len(nc) == 0:
            raise NoFeasiblePoint(f"no feasible trajectory through slot {t}")
        keys = np.round(new * _KEY).astype(np.int64)
        _, cost, state = _unique_min(keys, nc, new)
    return float(cost.min())
