import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairv2v.domain import TimeGrid, dumps_scenario, reachability_check, validate_scenario
from fairv2v.errors import AlignmentError, CoverageError, ParseError
from fairv2v.scenario import (Case, GenConfig, build_tou_tariff, clock_windows, generate, generate_residential,
                              generate_shopping, load_sell_prices)


def test_residential_default_fleet():
    s = generate_residential(GenConfig(n_fixed=50, n_random=50, seed=1))
    assert len(s.fleet) == 100
    assert s.grid.slot_count == 48
    full = [ev for ev in s.fleet if (ev.arrival, ev.departure) == (0, 47)]
    assert len(full) >= 50
    assert all((ev.arrival, ev.departure) == (0, 47) for ev in s.fleet[:50])
    assert s.fleet[0].max_charge_kwh_per_slot == 3.5
    assert s.fleet[0].capacity_kwh == 50.0


def test_shopping_default_fleet():
    s = generate_shopping(GenConfig(case=Case.SHOPPING, n_fixed=30, n_random=70, seed=7))
    assert len(s.fleet) == 100
    assert s.grid.slot_count == 18
    assert s.grid.start_label == "09:00"
    assert all((ev.arrival, ev.departure) == (0, 17) for ev in s.fleet[:30])
    assert max(ev.departure for ev in s.fleet) <= 17


def test_generation_is_deterministic():
    a = dumps_scenario(generate(GenConfig(seed=11)))
    b = dumps_scenario(generate(GenConfig(seed=11)))
    assert a == b
    assert a != dumps_scenario(generate(GenConfig(seed=12)))


def test_no_random_evs_means_full_windows():
    s = generate(GenConfig(n_random=0, n_fixed=6, seed=3))
    assert all((ev.arrival, ev.departure) == (0, 47) for ev in s.fleet)


def test_case_mismatch_rejected():
    with pytest.raises(ValueError):
        generate_residential(GenConfig(case=Case.SHOPPING))


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(list(Case)), st.integers(0, 8), st.integers(0, 12), st.integers(0, 2**32 - 1))
def test_generated_evs_valid_and_reachable(case, n_fixed, n_random, seed):
    s = generate(GenConfig(case=case, n_fixed=n_fixed, n_random=n_random, seed=seed))
    assert validate_scenario(s) == []
    for ev in s.fleet:
        assert ev.arrival < ev.departure or s.grid.slot_count == 1
        assert reachability_check(ev, s.grid) >= 0
        assert 0.7 * ev.capacity_kwh - 1e-9 <= ev.target_kwh or ev.target_kwh == ev.initial_kwh
        assert ev.initial_kwh / ev.capacity_kwh in (0.2, 0.3, 0.4, 0.5)


def test_tou_constant():
    g = TimeGrid(4, 0.5)
    series = build_tou_tariff({"offpeak": 0.1}, {"offpeak": [(0, 4)]}, g)
    assert series.values == (0.1,) * 4


def test_tou_three_levels():
    g = TimeGrid(48, 0.5)
    windows = {"peak": [(34, 44)], "shoulder": [(14, 34)], "offpeak": [(0, 14), (44, 48)]}
    series = build_tou_tariff({"peak": 0.35, "shoulder": 0.2, "offpeak": 0.1}, windows, g)
    assert len(series) == 48
    assert len(set(series.values)) == 3


def test_tou_coverage_errors():
    g = TimeGrid(4, 0.5)
    levels = {"a": 0.1, "b": 0.2}
    with pytest.raises(CoverageError):
        build_tou_tariff(levels, {"a": [(0, 3)], "b": [(2, 4)]}, g)
    with pytest.raises(CoverageError):
        build_tou_tariff(levels, {"a": [(0, 2)]}, g)


def test_default_clock_windows_cover_day():
    g = TimeGrid(48, 0.5)
    w = clock_windows(g)
    assert w["peak"] == [(34, 44)]
    assert sum(b - a for spans in w.values() for a, b in spans) == 48


def _csv(path, rows, start="2024-01-01T00:00", header="timestamp,price_per_mwh"):
    from datetime import datetime, timedelta
    t0 = datetime.fromisoformat(start)
    lines = [header] + [f"{(t0 + timedelta(minutes=30 * k)).isoformat()},{v}" for k, v in enumerate(rows)]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_sell_prices_unit_conversion(tmp_path):
    ps = load_sell_prices(_csv(tmp_path / "p.csv", [100.0] * 48), TimeGrid(48, 0.5))
    assert ps.values == (0.1,) * 48


def test_sell_prices_hourly_pooling(tmp_path):
    rows = list(np.arange(48, dtype=float) * 10)
    ps = load_sell_prices(_csv(tmp_path / "p.csv", rows), TimeGrid(24, 1.0))
    assert len(ps) == 24
    assert ps.values[0] == pytest.approx((0 + 10) / 2 / 1000)
    assert np.mean(ps.values) == pytest.approx(np.mean(rows) / 1000, abs=1e-12)


def test_sell_prices_row_count(tmp_path):
    with pytest.raises(AlignmentError):
        load_sell_prices(_csv(tmp_path / "p.csv", [50.0] * 47), TimeGrid(48, 0.5))


def test_sell_prices_gap(tmp_path):
    p = _csv(tmp_path / "p.csv", [50.0] * 4)
    lines = p.read_text().splitlines()
    del lines[2]
    p.write_text("\n".join(lines + ["2024-01-01T02:00,50"]) + "\n")
    with pytest.raises(AlignmentError):
        load_sell_prices(p, TimeGrid(4, 0.5))


def test_sell_prices_parse_error_cites_line(tmp_path):
    p = _csv(tmp_path / "p.csv", [50.0] * 4)
    lines = p.read_text().splitlines()
    lines[3] = "2024-01-01T01:00,abc"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError, match=":4:"):
        load_sell_prices(p, TimeGrid(4, 0.5))
    with pytest.raises(ParseError, match=":1:"):
        load_sell_prices(_csv(tmp_path / "q.csv", [1.0], header="time,price"), TimeGrid(1, 0.5))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-500, 15000, allow_nan=False), min_size=1, max_size=12), st.sampled_from([1, 2, 4]))
def test_pooling_preserves_mean(tmp_path_factory, blocks, k):
    rows = [v for v in blocks for _ in range(k)]
    rows = [r + 0.25 * i for i, r in enumerate(rows)]
    path = _csv(tmp_path_factory.mktemp("px") / "p.csv", rows)
    ps = load_sell_prices(path, TimeGrid(len(blocks), 0.5 * k))
    assert np.mean(ps.values) == pytest.approx(np.mean(rows) / 1000, abs=1e-12)
