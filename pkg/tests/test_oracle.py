import pytest

from fairv2v.domain import Budget, HardPerSlot, SoftCumulative
from fairv2v.errors import NoFeasiblePoint, TooLarge
from fairv2v.model import assemble
from fairv2v.solver import brute_force_oracle, solve_exact

from conftest import make_ev, make_scenario, oracle_instance

POLICIES = [None, HardPerSlot(0.5), SoftCumulative(1.0), Budget(0.25, 0.5)]


def test_single_slot_purchase():
    s = make_scenario([make_ev("a", 0, 0, init=10, target=12, rate=3.5)], [0.3], mode="charging-only")
    assert brute_force_oracle(s, 1.0) == pytest.approx(0.6, abs=1e-12)


def test_at_target_with_heavy_degradation_does_nothing():
    s = make_scenario([make_ev("a", 0, 2, init=20, target=20, alpha=5.0)], [0.2] * 3, [0.4] * 3, mode="v2g")
    assert brute_force_oracle(s, 0.5) == 0.0


def test_unreachable_target():
    s = make_scenario([make_ev("a", 0, 1, init=10, target=20, rate=1.0)], [0.2, 0.2])
    with pytest.raises(NoFeasiblePoint):
        brute_force_oracle(s, 0.5)


def test_enumeration_bound():
    fleet = [make_ev(k, 0, 1, rate=3.5) for k in "abcd"]
    with pytest.raises(TooLarge):
        brute_force_oracle(make_scenario(fleet, [0.2, 0.2]), 0.05)


def test_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        brute_force_oracle(oracle_instance(), 0.0)


@pytest.mark.parametrize("policy", POLICIES)
def test_refinement_nonincreasing_and_above_exact(policy):
    s = oracle_instance(policy)
    p, m = assemble(s)
    exact = solve_exact(p, None, m).objective
    vals = [brute_force_oracle(s, h) for h in (0.5, 0.25, 0.125)]
    assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))
    assert all(v >= exact - 1e-6 for v in vals)


def test_flows_reach_the_oracle():
    # a's surplus covers b for free; without flows b buys 3 kWh
    fleet = [make_ev("a", 0, 0, init=20, target=17, rate=3.0), make_ev("b", 0, 0, init=10, target=13, rate=3.0)]
    joint = make_scenario(fleet, [0.3], [0.0])
    v2g = make_scenario(fleet, [0.3], [0.0], mode="v2g")
    assert brute_force_oracle(joint, 1.0) == pytest.approx(0.0, abs=1e-12)
    assert brute_force_oracle(v2g, 1.0) == pytest.approx(0.9, abs=1e-12)
