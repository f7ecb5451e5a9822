import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairv2v.domain import Budget, HardPerSlot, Mode, SoftCumulative, Unconstrained
from fairv2v.errors import DimensionError, InfeasibleTarget, InvalidScenario, NotAllocated, PolicyModeMismatch
from fairv2v.model import ROW_TAGS, add_fairness, assemble, dump_problem, row_audit, var_lookup

from conftest import make_ev, make_scenario, random_scenario


def test_charging_only_layout():
    s = make_scenario([make_ev("a", 0, 1, init=10, target=12)], [0.2, 0.2], mode="charging-only")
    p, m = assemble(s)
    assert p.n == 8
    assert p.binaries == ()
    assert sorted({k[0] for k in m.index}) == ["ch", "grid", "renew", "soc"]


def test_two_copresent_evs_one_slot_joint():
    s = make_scenario([make_ev("a", 0, 0), make_ev("b", 0, 0)], [0.2])
    p, m = assemble(s)
    flows = list(m.flows())
    assert len(flows) == 2
    assert {(i, j) for i, j, _, _ in flows} == {(0, 1), (1, 0)}
    assert len(p.binaries) == 2
    assert all(p.lb[b] == 0 and p.ub[b] == 1 for b in p.binaries)


def test_flows_only_for_copresent_pairs():
    s = make_scenario([make_ev("a", 0, 1), make_ev("b", 2, 3), make_ev("c", 1, 2)], [0.2] * 4)
    _, m = assemble(s)
    for i, j, t, _ in m.flows():
        assert i != j
        assert s.fleet[i].present(t) and s.fleet[j].present(t)
    with pytest.raises(NotAllocated):
        var_lookup(m, "flow", "a", 1, partner="b")
    assert var_lookup(m, "flow", "a", 1, partner="c") >= 0


def test_columns_are_contiguous():
    p, m = assemble(random_scenario(4, 8, seed=2, fairness=Budget(0.5, 1.0)))
    cols = sorted(m.index.values())
    assert cols == list(range(p.n))
    assert len(m.names) == p.n


def test_unreachable_target_raises_at_assembly():
    ev = make_ev("a", 0, 9, init=10, target=45, rate=3.5, eff=0.95)
    with pytest.raises(InfeasibleTarget) as exc:
        assemble(make_scenario([ev], [0.2] * 10))
    assert exc.value.shortfalls["a"] == pytest.approx(-1.75)


def test_series_mismatch_is_dimension_error():
    s = make_scenario([make_ev()], [0.2, 0.2], renew=[0.0])
    with pytest.raises(DimensionError):
        assemble(s)


def test_invalid_scenario_raises():
    with pytest.raises(InvalidScenario):
        assemble(make_scenario([make_ev("a", 0, 1, target=60)], [0.2, 0.2]))


def test_degradation_on_q_diagonal():
    s = make_scenario([make_ev("a", 0, 2, alpha=0.01)], [0.2] * 3)
    p, m = assemble(s)
    q = p.Q.diagonal()
    dis = m.columns("dis")
    assert len(dis) == 3
    assert np.all(q[dis] == 0.02)
    assert np.count_nonzero(q) == 3


def test_lookup_errors():
    s = make_scenario([make_ev("a", 0, 1), make_ev("b", 0, 1)], [0.2, 0.2], mode="charging-only")
    _, m = assemble(s)
    assert var_lookup(m, "soc", "a", 0) == var_lookup(m, "soc", 0, 0)
    with pytest.raises(NotAllocated):
        var_lookup(m, "x", "a", 0)
    with pytest.raises(NotAllocated):
        var_lookup(m, "flow", "a", 0, partner="a")
    with pytest.raises(NotAllocated):
        var_lookup(m, "soc", "a", 5)


def test_hard_policy_tightens_bounds():
    s = make_scenario([make_ev("a", 0, 2, rate=3.5)], [0.2] * 3, fairness=HardPerSlot(0.5))
    p, m = assemble(s)
    assert all(p.ub[c] == 0.5 for c in m.columns("dis"))
    assert all(p.bound_tags[c] == "hard_per_slot" for c in m.columns("dis"))


def test_soft_policy_adds_one_row():
    ev = make_ev("a", 0, 9)
    base, m = assemble(make_scenario([ev], [0.2] * 10))
    p, _ = add_fairness(base, m, SoftCumulative(4.0))
    assert p.A_in.shape[0] == base.A_in.shape[0] + 1
    row = p.A_in.getrow(p.A_in.shape[0] - 1)
    assert row.nnz == 10 and np.all(row.data == 1.0)
    assert p.b_in[-1] == 4.0
    assert p.in_tags[-1] == "soft_cumulative"


def test_budget_policy_structure_and_hinge_example():
    ev = make_ev("a", 0, 2, rate=3.5)
    base, m = assemble(make_scenario([ev], [0.2] * 3))
    p, m2 = add_fairness(base, m, Budget(0.5, 2.0))
    assert p.n == base.n + 3
    assert len(m2.columns("slack")) == 3
    assert p.in_tags.count("budget_hinge") == 3
    assert p.in_tags.count("budget_total") == 1
    # a point with dis = (1.5, 0.5, 0) and slack = max(dis - theta, 0) meets the new rows
    x = np.zeros(p.n)
    for t, d in enumerate((1.5, 0.5, 0.0)):
        x[var_lookup(m2, "dis", "a", t)] = d
        x[var_lookup(m2, "slack", "a", t)] = max(d - 0.5, 0.0)
    new = slice(base.A_in.shape[0], None)
    assert np.all(p.A_in[new] @ x <= p.b_in[new] + 1e-12)
    assert sum(max(d - 0.5, 0) for d in (1.5, 0.5, 0.0)) == 1.0


def test_charging_only_policy_warns_and_is_noop():
    s = make_scenario([make_ev("a", 0, 2)], [0.2] * 3, mode="charging-only")
    base, m = assemble(s)
    with pytest.warns(PolicyModeMismatch):
        p, _ = add_fairness(base, m, HardPerSlot(0.5))
    assert p is base
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert add_fairness(base, m, Unconstrained())[0] is base


def test_every_row_is_tagged():
    p, _ = assemble(random_scenario(3, 6, seed=4, fairness=Budget(0.5, 1.0)))
    audit = row_audit(p)
    assert len(audit) == p.A_eq.shape[0] + p.A_in.shape[0]
    assert {tag for _, _, tag in audit} <= set(ROW_TAGS)


def test_v2g_mode_has_no_flows_and_charging_only_no_discharge():
    s = random_scenario(3, 6, seed=1)
    _, m_v2g = assemble(s.with_mode(Mode.V2G_ONLY))
    _, m_co = assemble(s.with_mode(Mode.CHARGING_ONLY))
    assert list(m_v2g.flows()) == []
    assert m_co.columns("dis") == [] and m_co.columns("v2g") == []


def test_dump_format(tmp_path):
    s = make_scenario([make_ev("a", 0, 0), make_ev("b", 0, 0)], [0.2])
    p, m = assemble(s)
    text = dump_problem(p, m, tmp_path / "p.txt")
    lines = text.splitlines()
    assert lines[0].startswith("# fairv2v-qp")
    assert sum(1 for ln in lines if ln.startswith("col ")) == p.n
    assert sum(1 for ln in lines if ln.startswith(("eq ", "in "))) == p.A_eq.shape[0] + p.A_in.shape[0]
    assert (tmp_path / "p.txt").read_text() == text


def test_v2v_conservation_structure():
    p, m = assemble(random_scenario(4, 6, seed=5))
    A = p.A_eq.tocsc()
    for _, _, _, col in m.flows():
        rows = A.indices[A.indptr[col]:A.indptr[col + 1]]
        tags = sorted(p.eq_tags[r] for r in rows)
        assert tags == ["charge_balance", "discharge_balance"]


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(2, 6), st.integers(0, 1000))
def test_objective_is_cost_sum_at_any_point(n, H, seed):
    s = random_scenario(n, H, seed=seed)
    p, m = assemble(s)
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 3, p.n)
    expect = 0.0
    for i, ev in enumerate(s.fleet):
        for t in ev.window:
            expect += s.tariff.buy_price[t] * x[m.index["grid", i, t]]
            expect += ev.degradation_coeff * x[m.index["dis", i, t]] ** 2
            expect -= s.tariff.sell_price[t] * x[m.index["v2g", i, t]]
    assert p.objective(x) == pytest.approx(expect, rel=1e-12, abs=1e-12)
