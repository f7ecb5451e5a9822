import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from fairv2v.domain import Budget, HardPerSlot, SoftCumulative
from fairv2v.model import QpProblem, assemble
from fairv2v.solver import QpStatus, problem_residuals, solve_qp

from conftest import clarabel_relaxation, make_ev, make_scenario, random_scenario


def qp(Q, c, A_eq=None, b_eq=None, A_in=None, b_in=None, lb=None, ub=None):
    n = len(c)
    empty = sp.csr_matrix((0, n))
    return QpProblem(
        Q=sp.csc_matrix(np.atleast_2d(Q)), c=np.asarray(c, float),
        A_eq=sp.csr_matrix(A_eq) if A_eq is not None else empty,
        b_eq=np.asarray(b_eq if b_eq is not None else [], float),
        A_in=sp.csr_matrix(A_in) if A_in is not None else empty,
        b_in=np.asarray(b_in if b_in is not None else [], float),
        lb=np.asarray(lb if lb is not None else [-np.inf] * n, float),
        ub=np.asarray(ub if ub is not None else [np.inf] * n, float),
    )


def test_active_lower_bound():
    p = qp([[2.0]], [0.0], A_in=[[-1.0]], b_in=[-1.0])
    sol = solve_qp(p)
    assert sol.status is QpStatus.OPTIMAL
    assert sol.x[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.objective == pytest.approx(1.0, abs=1e-6)


def test_degenerate_lp_on_equality():
    p = qp(np.zeros((2, 2)), [1.0, 1.0], A_eq=[[1.0, 1.0]], b_eq=[1.0], lb=[0, 0])
    sol = solve_qp(p)
    assert sol.status is QpStatus.OPTIMAL
    assert sol.objective == pytest.approx(1.0, abs=1e-6)
    assert sol.x.sum() == pytest.approx(1.0, abs=1e-6)


def test_one_ev_flat_price_charging():
    s = make_scenario([make_ev("a", 0, 1, init=10, target=14, rate=3.5)], [0.2, 0.2], mode="charging-only")
    p, m = assemble(s)
    sol = solve_qp(p)
    assert sol.status is QpStatus.OPTIMAL
    assert sol.objective == pytest.approx(0.8, abs=1e-6)
    grid = sol.x[m.columns("grid")]
    assert grid.sum() == pytest.approx(4.0, abs=1e-6)


def test_infeasible_rows_detected():
    p = qp([[0.0]], [1.0], A_in=[[1.0], [-1.0]], b_in=[0.0, -1.0])
    assert solve_qp(p).status is QpStatus.INFEASIBLE


def test_crossed_bounds_infeasible():
    p = qp([[1.0]], [0.0], lb=[2.0], ub=[1.0])
    assert solve_qp(p).status is QpStatus.INFEASIBLE


def test_empty_problem():
    p = qp(np.zeros((0, 0)), [])
    sol = solve_qp(p)
    assert sol.status is QpStatus.OPTIMAL and sol.objective == 0.0


def test_iteration_limit_reports_status():
    from fairv2v.solver import QpSettings
    p, _ = assemble(random_scenario(4, 8, seed=1))
    sol = solve_qp(p.relaxed(), settings=QpSettings(max_iter=5, polish_rounds=0))
    assert sol.status in (QpStatus.ITER_LIMIT, QpStatus.OPTIMAL)
    if sol.status is QpStatus.ITER_LIMIT:
        assert sol.kkt_residuals.max() > 1e-6


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("policy", [None, HardPerSlot(1.0), SoftCumulative(3.0), Budget(0.5, 1.0)])
def test_relaxation_matches_clarabel(seed, policy):
    p, _ = assemble(random_scenario(3, 6, seed=seed, fairness=policy))
    r = p.relaxed()
    sol = solve_qp(r)
    status, ref = clarabel_relaxation(r)
    assert status == "optimal"
    assert sol.status is QpStatus.OPTIMAL
    assert sol.objective == pytest.approx(ref, abs=1e-5, rel=1e-6)


def test_stored_residuals_recompute():
    p, _ = assemble(random_scenario(4, 8, seed=7, fairness=Budget(0.5, 1.0)))
    sol = solve_qp(p.relaxed())
    assert sol.status is QpStatus.OPTIMAL
    again = problem_residuals(p.relaxed(), sol.x, sol.y)
    assert again == sol.kkt_residuals
    assert again.max() <= 1e-6
    assert p.max_violation(sol.x) <= 1e-6


def test_deterministic():
    p, _ = assemble(random_scenario(4, 8, seed=3))
    a, b = solve_qp(p.relaxed()), solve_qp(p.relaxed())
    assert a.objective == b.objective
    assert np.array_equal(a.x, b.x)
    assert a.iterations == b.iterations


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1), st.floats(0.0, 2.0))
def test_random_box_qp_against_clarabel(n, seed, curv):
    rng = np.random.default_rng(seed)
    Q = np.diag(rng.uniform(0, curv, n))
    c = rng.normal(size=n)
    A = rng.normal(size=(2, n))
    x_feas = rng.uniform(-1, 1, n)
    b = A @ x_feas + rng.uniform(0, 1, 2)
    p = qp(Q, c, A_in=A, b_in=b, lb=-2 * np.ones(n), ub=2 * np.ones(n), A_eq=[np.ones(n)], b_eq=[x_feas.sum()])
    sol = solve_qp(p)
    status, ref = clarabel_relaxation(p)
    assert sol.status is QpStatus.OPTIMAL
    assert sol.objective == pytest.approx(ref, abs=1e-5, rel=1e-5)
