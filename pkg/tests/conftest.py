import numpy as np
import pytest

from fairv2v.domain import (EvSpec, Mode, Scenario, SupplyLimits, Tariff, TimeGrid, Unconstrained)


def make_ev(ev_id="a", arrival=0, departure=1, *, cap=50.0, lo=0.0, init=10.0, target=10.0, rate=3.5,
            eff=1.0, alpha=0.0, v2g=None, pair=None):
    return EvSpec(ev_id, arrival, departure, cap, lo, init, target, rate, rate,
                  rate if v2g is None else v2g, rate if pair is None else pair, eff, eff, alpha)


def make_scenario(fleet, buy, sell=None, *, grid_cap=100.0, renew=None, fairness=None, mode="joint",
                  slot_hours=0.5):
    H = len(buy)
    sell = [0.0] * H if sell is None else sell
    renew = [0.0] * H if renew is None else renew
    return Scenario(TimeGrid(H, slot_hours), tuple(fleet), Tariff(tuple(buy), tuple(sell)),
                    SupplyLimits(grid_cap, tuple(renew)), fairness or Unconstrained(), Mode(mode))


def random_scenario(n=3, H=6, mode="joint", seed=0, alpha=0.01, fairness=None):
    """Small random fleet with a cheap first half and an expensive second half."""
    rng = np.random.default_rng(seed)
    fleet = []
    for k in range(n):
        a = int(rng.integers(0, H // 2))
        d = int(rng.integers(a + 1, H))
        if k == 0:
            a, d = 0, H - 1
        init = float(rng.choice([10.0, 15.0, 20.0]))
        room = 0.95 * 3.5 * (d - a + 1)
        target = min(50.0, init + float(rng.integers(0, max(1, int(room)))))
        fleet.append(EvSpec(f"ev{k}", a, d, 50.0, 5.0, init, target, 3.5, 3.5, 3.5, 3.5, 0.95, 0.95, alpha))
    buy = [0.1 if t < H // 2 else 0.35 for t in range(H)]
    sell = [0.5 if t % 2 else 0.05 for t in range(H)]
    return make_scenario(fleet, buy, sell, grid_cap=n * 3.5, fairness=fairness, mode=mode)


def oracle_instance(fairness=None, alpha=0.01):
    """Two EVs, three slots, unit efficiencies; used for brute-force equivalence."""
    fleet = (make_ev("a", 0, 2, cap=10, lo=1, init=6, target=5, rate=1.0, alpha=alpha),
             make_ev("b", 0, 2, cap=10, lo=1, init=2, target=4, rate=1.0, alpha=alpha))
    return make_scenario(fleet, [0.1, 0.35, 0.35], [0.05, 0.3, 0.12], grid_cap=2.0,
                         renew=[0.3, 0.55, 0.2], fairness=fairness)


cvxpy = None
try:
    import cvxpy  # noqa: F811
except ImportError:  # pragma: no cover
    pass


def _constraints(cp, x, p, ub_fill=1e6):
    cons = [x >= p.lb, x <= np.where(np.isfinite(p.ub), p.ub, ub_fill)]
    if p.A_eq.shape[0]:
        cons.append(p.A_eq @ x == p.b_eq)
    if p.A_in.shape[0]:
        cons.append(p.A_in @ x <= p.b_in)
    return cons


def clarabel_relaxation(p):
    """Continuous relaxation optimum via an independent conic solver."""
    cp = pytest.importorskip("cvxpy")
    if "CLARABEL" not in cp.installed_solvers():
        pytest.skip("Clarabel backend not installed")
    x = cp.Variable(p.n)
    obj = 0.5 * cp.sum(cp.multiply(p.Q.diagonal(), cp.square(x))) + p.c @ x
    prob = cp.Problem(cp.Minimize(obj), _constraints(cp, x, p))
    prob.solve(solver="CLARABEL")
    return prob.status, prob.value


def glpk_milp(p):
    """Exact MILP optimum (Q must be zero) via GLPK."""
    cp = pytest.importorskip("cvxpy")
    if "GLPK_MI" not in cp.installed_solvers():
        pytest.skip("GLPK_MI backend (cvxopt) not installed")
    b = list(p.binaries)
    x = cp.Variable(p.n)
    z = cp.Variable(len(b), boolean=True)
    cons = _constraints(cp, x, p) + [x[b] == z]
    prob = cp.Problem(cp.Minimize(p.c @ x), cons)
    prob.solve(solver="GLPK_MI")
    return prob.status, prob.value


def enumerate_binaries(p):
    """Exact MIQP optimum by trying every binary assignment (tiny instances only)."""
    import itertools
    best = np.inf
    bins = np.array(p.binaries, dtype=int)
    for bits in itertools.product((0.0, 1.0), repeat=len(bins)):
        lb, ub = p.lb.copy(), p.ub.copy()
        lb[bins] = ub[bins] = bits
        status, val = clarabel_relaxation(p.with_bounds(lb, ub))
        if status == "optimal" and val < best:
            best = val
    return best
