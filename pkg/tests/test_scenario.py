import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transit_contagion import analysis
from transit_contagion.assignment import simulate_loading, stranded_count
from transit_contagion.contacts import build_contact_network, network_stats
from transit_contagion.epidemic import (
    EpiConfig,
    TransmissionParams,
    endangered_count,
    global_infection_rate,
    run_epidemic,
    weight_network,
)
from transit_contagion.errors import ScenarioError, UnmappedCapacityFraction
from transit_contagion.feed import DemandSet, TripRequest
from transit_contagion.scenario import (
    PMAX_TABLE,
    ScenarioSpec,
    default_grid,
    grid_table,
    pmax_for_capacity,
    reduce_demand,
    run_grid,
    run_scenario,
    scale_capacities,
    scenario_id,
)

from conftest import make_network

EPI = EpiConfig(n_seeds=10, horizon=5, infectious_period=5, n_runs=200, master_seed=11)


def demand_of(n_persons, trips_per_person=2):
    reqs = []
    for p in range(n_persons):
        for j in range(trips_per_person):
            reqs.append(TripRequest(3600 * (j + 1), f"p{p:04d}", "A", "B"))
    return DemandSet.from_requests(reqs)


def test_reduce_demand_counts():
    d = demand_of(100)
    kept = reduce_demand(d, 0.83, seed=4)
    assert kept.person_count == 83
    assert len(kept) == 166
    by_person = {}
    for r in kept.requests:
        by_person.setdefault(r.person_id, []).append(r)
    assert all(len(v) == 2 for v in by_person.values())


def test_reduce_demand_identity_and_determinism():
    d = demand_of(50)
    assert reduce_demand(d, 1.0, seed=9) is d
    assert reduce_demand(d, 0.5, 3).persons == reduce_demand(d, 0.5, 3).persons


def test_reduce_demand_nested():
    d = demand_of(200)
    sets = [set(reduce_demand(d, f, 5).persons) for f in (1.0, 0.83, 0.665, 0.59, 0.5)]
    assert all(a >= b for a, b in zip(sets, sets[1:]))


def test_reduce_demand_overlap_statistics():
    d = demand_of(1000)
    f = 0.5
    overlaps = []
    for s in range(40):
        a = set(reduce_demand(d, f, s).persons)
        b = set(reduce_demand(d, f, s + 1000).persons)
        overlaps.append(len(a & b) / 1000)
    # hypergeometric mean f^2 = 0.25, sd per draw about 0.008
    assert abs(sum(overlaps) / len(overlaps) - f * f) < 0.01


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 300), f=st.floats(0.01, 1.0), seed=st.integers(0, 2**31))
def test_retained_count_is_floor(n, f, seed):
    d = demand_of(n, 1)
    assert reduce_demand(d, f, seed).person_count == math.floor(f * n + 1e-9)


@pytest.mark.parametrize("bad", [0.0, -0.1, 1.5])
def test_reduce_demand_rejects_bad_fraction(bad):
    with pytest.raises(ValueError):
        reduce_demand(demand_of(3), bad)


def test_scale_capacities():
    net = make_network(
        {"T1": [("A", 0, 0), ("B", 60, 60)], "T2": [("A", 10, 10), ("B", 70, 70)]}, capacity={"T1": 48, "T2": 1}
    )
    half = scale_capacities(net, 0.5)
    assert half.trips["T1"].capacity == 24
    assert half.trips["T2"].capacity == 1
    assert half.trips["T1"].stop_times == net.trips["T1"].stop_times
    assert scale_capacities(net, 1.0) is net
    assert scale_capacities(net, 0.9).trips["T1"].capacity == 43


def test_pmax_table():
    assert pmax_for_capacity(1.0) == 0.163
    assert pmax_for_capacity(0.9) == 0.160
    assert pmax_for_capacity(0.8) == 0.158
    assert pmax_for_capacity(0.7) == 0.156
    assert pmax_for_capacity(0.5) == 0.140


@pytest.mark.parametrize("c", [0.85, 0.6, 0.95, 0.1, 0.75])
def test_pmax_rejects_unmapped(c):
    with pytest.raises(UnmappedCapacityFraction, match="interpolate"):
        pmax_for_capacity(c)


def test_pmax_interpolation():
    assert pmax_for_capacity(0.85, interpolate=True) == pytest.approx(0.159)
    assert pmax_for_capacity(0.6, interpolate=True) == pytest.approx(0.148)
    assert pmax_for_capacity(0.9, interpolate=True) == 0.160
    below = pmax_for_capacity(0.3, interpolate=True)
    assert below < 0.140
    values = [pmax_for_capacity(c / 100, interpolate=True) for c in range(30, 101)]
    assert all(a <= b + 1e-15 for a, b in zip(values, values[1:]))


def test_grid_composition():
    specs = default_grid()
    assert len(specs) == 21
    assert sum(s.is_baseline for s in specs) == 1
    assert len({s.scenario_id for s in specs}) == 21
    assert {s.capacity_fraction for s in specs} == set(PMAX_TABLE)
    assert default_grid([1.0], [1.0]) == [ScenarioSpec(1.0, 1.0)]
    assert scenario_id(0.665, 0.5) == "d0665_c0500"


def test_run_scenario_matches_module_composition(small_city):
    spec = ScenarioSpec(1.0, 1.0)
    report = run_scenario(spec, small_city.network, small_city.demand, EPI)
    res = simulate_loading(small_city.network, small_city.demand)
    contacts = build_contact_network(res.trajectories)
    est = run_epidemic(weight_network(contacts, TransmissionParams(0.163, 7200.0)), EPI)
    assert report.stats == network_stats(contacts)
    assert report.stranded == stranded_count(res)
    assert report.global_rate == global_infection_rate(est)
    assert report.endangered == endangered_count(est)
    routes = analysis.route_risk_ranking(res.trajectories, est, small_city.network.route_of, top_n=None)
    assert list(report.route_risks) == routes
    assert report.config["p_max"] == 0.163


def test_reduced_scenario_shrinks_network(small_city):
    base = run_scenario(ScenarioSpec(1.0, 1.0), small_city.network, small_city.demand, EPI)
    low = run_scenario(ScenarioSpec(0.5, 0.5), small_city.network, small_city.demand, EPI)
    assert low.stats.n_nodes <= base.stats.n_nodes
    assert low.config["p_max"] == 0.140


def test_unmapped_capacity_carries_scenario_id(small_city):
    with pytest.raises(ScenarioError) as info:
        run_scenario(ScenarioSpec(1.0, 0.85), small_city.network, small_city.demand, EPI)
    assert info.value.scenario_id == "d1000_c0850"
    assert "d1000_c0850" in str(info.value)
    assert isinstance(info.value.cause, UnmappedCapacityFraction)


def test_grid_partial_failure_and_order_independence(small_city):
    specs = [ScenarioSpec(1.0, 1.0), ScenarioSpec(0.5, 0.85), ScenarioSpec(0.83, 0.7), ScenarioSpec(0.5, 0.5)]
    g = run_grid(specs, small_city.network, small_city.demand, EPI)
    assert not g.ok
    assert list(g.failures) == ["d0500_c0850"]
    assert len(g.reports) == 3
    shuffled = specs[:]
    random.Random(2).shuffle(shuffled)
    g2 = run_grid(shuffled, small_city.network, small_city.demand, EPI)
    assert g.by_cell() == g2.by_cell()


def test_single_spec_grid(small_city):
    g = run_grid([ScenarioSpec(1.0, 1.0)], small_city.network, small_city.demand, EPI)
    d, c, m = grid_table(g.reports, "global_rate")
    assert d == [1.0] and c == [1.0] and len(m) == 1 and len(m[0]) == 1
    with pytest.raises(ValueError):
        run_grid([], small_city.network, small_city.demand, EPI)


def test_stranded_monotone_on_crowded_city(crowded_city):
    specs = default_grid()
    g = run_grid(specs, crowded_city.network, crowded_city.demand, EpiConfig(n_seeds=10, n_runs=50))
    d, c, m = grid_table(g.reports, "stranded")
    for row in m:
        vals = [x for x in row if x is not None]
        assert vals == sorted(vals)
    for j in range(len(c)):
        col = [row[j] for row in m if row[j] is not None]
        assert col == sorted(col, reverse=True)
