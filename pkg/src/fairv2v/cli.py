"""
Command-line interface: ``fairv2v {generate,solve,sweep,verify}``.

Exit codes: 0 success, 1 verify found a violation, 2 infeasible instance,
3 parse or validation failure, 4 I/O failure. Errors are also written to
stderr as one JSON object ``{"error": ..., "message": ..., "exit": ...}``.

Solver parameters resolve as defaults < scenario ``solver`` block <
environment (FAIRV2V_GAP_TOL, FAIRV2V_NODE_LIMIT, FAIRV2V_TOL,
FAIRV2V_SOLVER_MODE) < command-line flags.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .domain import (Budget, HardPerSlot, Mode, Scenario, SoftCumulative, Unconstrained, dumps_scenario,
                     fingerprint, parse_fairness, read_scenario_file)
from .errors import (AlignmentError, DimensionError, FairV2VError, InfeasibleTarget, InvalidScenario,
                     ParseError)
from .metrics import feasibility_audit
from .runner import resolve_params, run
from .scenario import Case, GenConfig, generate, load_sell_prices
from .solver import SolverParams
from .solver.schedule import load_schedule

EXIT_OK, EXIT_VIOLATION, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_IO = 0, 1, 2, 3, 4
SWEEP_PARAMS = ("zbar", "zbar_c", "theta", "budget")
SWEEP_COLUMNS = ("threshold", "total_cost", "jfi", "rel_gap", "wall_ms")

log = logging.getLogger("fairv2v")


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind, self.message = code, kind, message


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit": code}) + "\n")
    return code


def _load(path: str) -> tuple[Scenario, dict]:
    try:
        return read_scenario_file(path)
    except FileNotFoundError:
        raise CliError(EXIT_INPUT, "FileNotFound", f"{path}: no such file")
    except OSError as exc:
        raise CliError(EXIT_INPUT, "IOError", f"{path}: {exc.strerror or exc}")
    except (ParseError, InvalidScenario, DimensionError) as exc:
        raise CliError(EXIT_INPUT, type(exc).__name__, f"{path}: {exc}")


def _write(path: str, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise CliError(EXIT_IO, "IOError", f"cannot write {path}: {exc.strerror or exc}")


def _solver_flags(a) -> dict:
    return {"gap_tol": a.gap_tol, "node_limit": a.node_limit, "tol": a.tol, "mode": a.solver}


def _params(a, block: dict) -> SolverParams:
    try:
        return resolve_params(block, _solver_flags(a))
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_INPUT, "BadSolverParams", str(exc))


def _apply_overrides(s: Scenario, a) -> Scenario:
    if getattr(a, "mode", None):
        s = s.with_mode(Mode(a.mode))
    if getattr(a, "fairness", None):
        try:
            s = s.with_policy(parse_fairness(a.fairness))
        except ParseError as exc:
            raise CliError(EXIT_INPUT, "ParseError", str(exc))
    return s


def _run(s: Scenario, params: SolverParams):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return run(s, params)
    except InfeasibleTarget as exc:
        raise CliError(EXIT_INFEASIBLE, "InfeasibleTarget", str(exc))
    except (InvalidScenario, DimensionError) as exc:
        raise CliError(EXIT_INPUT, type(exc).__name__, str(exc))


# -- generate ---------------------------------------------------------------

def cmd_generate(a) -> int:
    kw = {"case": Case(a.case), "seed": a.seed}
    for k in ("n_fixed", "n_random", "slot_count", "slot_hours", "grid_cap_kwh_per_slot"):
        v = getattr(a, k)
        if v is not None:
            kw[k] = v
    if a.renewable_peak is not None:
        kw["renewable_profile"] = "bell"
        kw["renewable_peak_kwh"] = a.renewable_peak
    if a.mode:
        kw["mode"] = Mode(a.mode)
    try:
        cfg = GenConfig(**kw)
        s = generate(cfg)
        if a.sell_prices:
            series = load_sell_prices(a.sell_prices, s.grid)
            s = replace(s, tariff=replace(s.tariff, sell_price=tuple(series.values)))
    except FileNotFoundError:
        raise CliError(EXIT_INPUT, "FileNotFound", f"{a.sell_prices}: no such file")
    except (ParseError, AlignmentError, ValueError) as exc:
        raise CliError(EXIT_INPUT, type(exc).__name__, str(exc))
    if a.fairness:
        s = _apply_overrides(s, a)
    _write(a.output, dumps_scenario(s))
    print(f"wrote {a.output}: {len(s.fleet)} EVs, {s.grid.slot_count} slots, fingerprint {fingerprint(s)}")
    return EXIT_OK


# -- solve ------------------------------------------------------------------

def cmd_solve(a) -> int:
    s, block = _load(a.scenario)
    s = _apply_overrides(s, a)
    params = _params(a, block)
    res = _run(s, params)
    rec = res.record()
    if a.output:
        _write(a.output, json.dumps(res.to_dict(), indent=1, sort_keys=True) + "\n")
    if not res.feasible:
        return _fail(EXIT_INFEASIBLE, "Infeasible",
                     f"no feasible schedule (status {res.solution.status.value}; {'; '.join(res.solution.notes)})")
    print(json.dumps({k: rec[k] for k in ("fingerprint", "mode", "fairness", "status", "objective",
                                           "rel_gap", "nodes_explored", "jfi", "wall_ms")}))
    return EXIT_OK


# -- sweep ------------------------------------------------------------------

def parse_points(text: str) -> list[float]:
    """``start:stop:step`` (inclusive stop) or a comma list."""
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0:
                raise ValueError("step must be positive")
            k = int(math.floor((stop - start) / step + 1e-9))
            pts = [round(start + i * step, 12) for i in range(k + 1)]
        else:
            pts = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(EXIT_INPUT, "ParseError", f"bad sweep points {text!r}: {exc}")
    if not pts or any(b <= a for a, b in zip(pts, pts[1:])):
        raise CliError(EXIT_INPUT, "ParseError", f"sweep points must be nonempty and strictly increasing: {text!r}")
    return pts


def policy_for(param: str, value: float, companions: dict):
    if param == "zbar":
        return HardPerSlot(value)
    if param == "zbar_c":
        return SoftCumulative(value)
    if param == "theta":
        return Budget(value, companions["budget"])
    if param == "budget":
        return Budget(companions["theta"], value)
    raise ValueError(param)


def sweep_points(a) -> list[tuple[float, ...]]:
    xs = parse_points(a.points)
    if a.param2:
        ys = parse_points(a.points2)
        return [(x, y) for x in xs for y in ys]
    return [(x,) for x in xs]


def _policy_at(a, point):
    comp = {"theta": a.theta, "budget": a.budget}
    if a.param2:
        comp[a.param2] = point[1]
    if a.param in ("theta", "budget") and comp["budget" if a.param == "theta" else "theta"] is None:
        raise CliError(EXIT_INPUT, "MissingCompanion",
                       f"sweeping {a.param} needs --{'budget' if a.param == 'theta' else 'theta'} or --param2")
    return policy_for(a.param, point[0], comp)


def _sweep_one(args):
    s, params = args
    try:
        res = run(s, params)
    except InfeasibleTarget:
        return None
    if not res.feasible:
        return None
    return (res.costs.total_cost, res.fairness.jfi, res.solution.rel_gap, res.wall_ms)


def _fmt(v) -> str:
    return repr(float(v))


def cmd_sweep(a) -> int:
    s, block = _load(a.scenario)
    if a.mode:
        s = s.with_mode(Mode(a.mode))
    if a.param2 and {a.param, a.param2} != {"theta", "budget"}:
        raise CliError(EXIT_INPUT, "ParseError", "two-parameter sweeps pair theta with budget")
    params = _params(a, block)
    points = sweep_points(a)
    jobs = [(s.with_policy(_policy_at(a, pt)), params) for pt in points]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if a.workers > 1:
            with ProcessPoolExecutor(a.workers) as ex:
                results = list(ex.map(_sweep_one, jobs))  # map keeps sweep order
        else:
            results = []
            for job in jobs:
                r = _sweep_one(job)
                results.append(r)
                if r is None and not a.keep_going:
                    break
    header = ["threshold"] + (["threshold2"] if a.param2 else []) + list(SWEEP_COLUMNS[1:])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    rows = []
    code = EXIT_OK
    for pt, r in zip(points, results):
        if r is None:
            if not a.keep_going:
                _write(a.output, buf.getvalue())
                return _fail(EXIT_INFEASIBLE, "Infeasible", f"sweep point {pt} is infeasible")
            w.writerow([_fmt(v) for v in pt] + ["inf", "nan", "nan", "nan"])
            code = EXIT_INFEASIBLE if code == EXIT_OK else code
            continue
        w.writerow([_fmt(v) for v in pt] + [_fmt(r[0]), _fmt(r[1]), _fmt(r[2]), f"{r[3]:.3f}"])
        rows.append((pt, r[0]))
    _write(a.output, buf.getvalue())
    for msg in monotonicity_warnings(rows, params.gap_tol):
        sys.stderr.write(f"warning: {msg}\n")
    print(f"wrote {a.output}: {len(points)} points")
    return EXIT_OK if a.keep_going else code


def monotonicity_warnings(rows, gap_tol: float) -> list[str]:
    """Cost must not rise as any threshold rises; report steps that break this beyond the gap."""
    out = []
    by_key = dict(rows)
    for pt, cost in rows:
        for axis in range(len(pt)):
            nxt = [q for q in by_key if all(q[k] == pt[k] for k in range(len(pt)) if k != axis) and q[axis] > pt[axis]]
            if not nxt:
                continue
            q = min(nxt, key=lambda v: v[axis])
            tol = 2 * gap_tol * max(1.0, abs(cost))
            if by_key[q] > cost + tol:
                out.append(f"total cost rises from {cost:.6f} at {pt} to {by_key[q]:.6f} at {q}")
    return out


# -- verify -----------------------------------------------------------------

def cmd_verify(a) -> int:
    s, _ = _load(a.scenario)
    try:
        sched = load_schedule(a.schedule, s)
    except FileNotFoundError:
        raise CliError(EXIT_INPUT, "FileNotFound", f"{a.schedule}: no such file")
    except ParseError as exc:
        raise CliError(EXIT_INPUT, "ParseError", f"{a.schedule}: {exc}")
    raw = json.loads(Path(a.schedule).read_text())
    rec = raw.get("record", {})
    if rec.get("mode"):
        s = s.with_mode(Mode(rec["mode"]))
    if rec.get("fairness"):
        s = s.with_policy(parse_fairness(rec["fairness"]))
    if sched.scenario_fingerprint and sched.scenario_fingerprint != fingerprint(s):
        raise CliError(EXIT_INPUT, "FingerprintMismatch",
                       f"schedule was solved for scenario {sched.scenario_fingerprint}, "
                       f"but {a.scenario} (with the run's mode and policy) hashes to {fingerprint(s)}")
    if set(sched.ev_ids) != {ev.id for ev in s.fleet}:
        raise CliError(EXIT_INPUT, "FleetMismatch", "schedule and scenario list different EVs")
    audit = feasibility_audit(sched, s, a.tol)
    print(audit.table())
    return EXIT_OK if audit.passed else EXIT_VIOLATION


# -- parser -----------------------------------------------------------------

def _add_solver_flags(p):
    g = p.add_argument_group("solver")
    g.add_argument("--solver", choices=("exact", "heuristic"), help="solution method (default exact)")
    g.add_argument("--gap-tol", type=float, help="relative gap tolerance (default 1e-4)")
    g.add_argument("--node-limit", type=int, help="branch-and-bound node limit (default 100000)")
    g.add_argument("--tol", type=float, help="QP residual tolerance (default 1e-6)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fairv2v", description=__doc__.split("\n\n")[0].strip())
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    modes = [m.value for m in Mode]

    g = sub.add_parser("generate", help="write a generated scenario JSON")
    g.add_argument("--case", choices=[c.value for c in Case], required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--n-fixed", type=int)
    g.add_argument("--n-random", type=int)
    g.add_argument("--slot-count", type=int)
    g.add_argument("--slot-hours", type=float)
    g.add_argument("--grid-cap", dest="grid_cap_kwh_per_slot", type=float)
    g.add_argument("--renewable-peak", type=float, help="add a bell-shaped daytime renewable profile (kWh/slot)")
    g.add_argument("--sell-prices", help="CSV with header timestamp,price_per_mwh")
    g.add_argument("--mode", choices=modes)
    g.add_argument("--fairness", help="none | hard:Z | soft:Zc | budget:theta,D")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="solve one scenario")
    s.add_argument("scenario")
    s.add_argument("--mode", choices=modes)
    s.add_argument("--fairness", help="none | hard:Z | soft:Zc | budget:theta,D")
    s.add_argument("-o", "--output", help="run JSON (record, schedule, costs, fairness, audit)")
    _add_solver_flags(s)
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", help="sweep a fairness threshold and write a CSV")
    w.add_argument("scenario")
    w.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    w.add_argument("--points", required=True, help="start:stop:step or a comma list")
    w.add_argument("--param2", choices=("theta", "budget"), help="second axis for theta x budget grids")
    w.add_argument("--points2")
    w.add_argument("--theta", type=float, help="fixed theta when sweeping budget")
    w.add_argument("--budget", type=float, help="fixed budget when sweeping theta")
    w.add_argument("--mode", choices=modes)
    w.add_argument("-o", "--output", required=True)
    w.add_argument("--keep-going", action="store_true", help="record infeasible points instead of stopping")
    w.add_argument("--workers", type=int, default=1)
    _add_solver_flags(w)
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="audit a schedule against its scenario")
    v.add_argument("schedule")
    v.add_argument("scenario")
    v.add_argument("--tol", type=float, default=1e-6)
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(a, "param2", None) and not a.points2:
        return _fail(EXIT_INPUT, "ParseError", "--param2 needs --points2")
    try:
        return a.func(a)
    except CliError as exc:
        return _fail(exc.code, exc.kind, exc.message)
    except FairV2VError as exc:
        return _fail(EXIT_INPUT, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
