import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairv2v.domain import (Budget, HardPerSlot, Mode, SoftCumulative, TimeGrid, Unconstrained, dumps_scenario,
                            fingerprint, format_fairness, load_scenario, parse_fairness, reachability_check,
                            save_scenario, scenario_from_dict, scenario_to_dict, validate_scenario)
from fairv2v.errors import ParseError

from conftest import make_ev, make_scenario, random_scenario


def test_time_grid_units():
    g = TimeGrid(48, 0.5)
    assert g.horizon_hours == 24.0
    assert g.energy_per_slot(7.0) == 3.5
    assert TimeGrid(18, 0.5, "09:00").slot_start_hour(4) == 11.0


def test_valid_scenario_has_empty_report():
    s = make_scenario([make_ev("a", 0, 3, init=10, target=20)], [0.2] * 4)
    assert validate_scenario(s) == []


def test_target_above_capacity_is_reported():
    s = make_scenario([make_ev("a", 0, 3, cap=50, target=60)], [0.2] * 4)
    report = validate_scenario(s)
    assert len(report) == 1
    assert report[0].ev_id == "a"
    assert "target exceeds capacity" in report[0].message


def test_arrival_after_departure_is_reported():
    s = make_scenario([make_ev("a", 10, 5)], [0.2] * 12)
    msgs = [v.message for v in validate_scenario(s)]
    assert any("arrival after departure" in m for m in msgs)


def test_report_ordering_and_idempotence():
    s = make_scenario([make_ev("b", 0, 9, target=70), make_ev("a", 3, 1), make_ev("a", 0, 1)], [0.2] * 4,
                      renew=[0, 0, 0])
    r1, r2 = validate_scenario(s), validate_scenario(s)
    assert r1 == r2
    assert [v.ev_id for v in r1] == sorted(v.ev_id for v in r1)
    fields = {v.field for v in r1}
    assert "id" in fields and "supply.renewable_kwh" in fields


def test_negative_sell_price_allowed_but_not_buy():
    ok = make_scenario([make_ev()], [0.2, 0.2], [-0.05, 0.1])
    assert validate_scenario(ok) == []
    bad = make_scenario([make_ev()], [-0.2, 0.2])
    assert [v.field for v in validate_scenario(bad)] == ["tariff.buy_price"]


def test_negative_thresholds_rejected():
    for pol in (HardPerSlot(-1.0), SoftCumulative(-0.1), Budget(-0.5, 1.0), Budget(0.5, -1.0)):
        s = make_scenario([make_ev()], [0.2, 0.2], fairness=pol)
        assert validate_scenario(s), pol


@pytest.mark.parametrize("init,target,eff,slots,expected", [
    (10.0, 10.0, 1.0, 4, 14.0),
    (10.0, 45.0, 1.0, 10, 0.0),
    (10.0, 45.0, 0.95, 10, -1.75),
])
def test_reachability(init, target, eff, slots, expected):
    ev = make_ev("a", 0, slots - 1, init=init, target=target, rate=3.5, eff=eff)
    assert reachability_check(ev) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("text,policy", [
    ("none", Unconstrained()),
    ("hard:0.5", HardPerSlot(0.5)),
    ("soft:4", SoftCumulative(4.0)),
    ("budget:0.5,2", Budget(0.5, 2.0)),
])
def test_fairness_grammar(text, policy):
    assert parse_fairness(text) == policy
    assert parse_fairness(format_fairness(policy)) == policy


@pytest.mark.parametrize("text", ["", "hard", "hard:x", "budget:1", "soft:1,2", "gini:3"])
def test_fairness_grammar_rejects(text):
    with pytest.raises(ParseError):
        parse_fairness(text)


def test_json_round_trip(tmp_path):
    s = random_scenario(4, 8, seed=3, fairness=Budget(0.5, 2.0, (("ev1", 3.0),)))
    path = tmp_path / "s.json"
    save_scenario(s, path, {"gap_tol": 1e-5})
    back = load_scenario(path)
    assert back == s
    assert fingerprint(back) == fingerprint(s)
    assert dumps_scenario(back, {"gap_tol": 1e-5}) == path.read_text()


def test_malformed_json_is_parse_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"grid": ')
    with pytest.raises(ParseError):
        load_scenario(path)
    d = scenario_to_dict(random_scenario())
    del d["fleet"][0]["capacity_kwh"]
    with pytest.raises(ParseError):
        scenario_from_dict(d)


def test_fingerprint_changes_with_content():
    s = random_scenario(seed=1)
    assert fingerprint(s) != fingerprint(s.with_policy(HardPerSlot(1.0)))
    assert fingerprint(s) != fingerprint(s.with_mode(Mode.V2G_ONLY))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(2, 10), st.integers(0, 10_000))
def test_fingerprint_stable_under_reserialization(n, H, seed):
    s = random_scenario(n, H, seed=seed)
    again = scenario_from_dict(json.loads(json.dumps(scenario_to_dict(s))))
    assert fingerprint(again) == fingerprint(s)
