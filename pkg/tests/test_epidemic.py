import random
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transit_contagion.assignment import RideSegment, Trajectory
from transit_contagion.contacts import build_contact_network
from transit_contagion.epidemic import (
    EpiConfig,
    InfectionEstimates,
    TransmissionParams,
    WeightedContactNetwork,
    edge_probability,
    endangered_count,
    epi_summary,
    global_infection_rate,
    run_epidemic,
    weight_network,
)
from transit_contagion.errors import SeedCountExceedsNodes
from transit_contagion.feed import TripRequest

import oracles


def traj(pid, *rides):
    segs = tuple(RideSegment(tid, "a", s, "b", e, 0, 1) for tid, s, e in rides)
    return Trajectory(pid, TripRequest(0, pid, "a", "b"), segs, True)


def chain(*names, duration=3600, trip="T"):
    """Contact network forming a path over ``names``; each consecutive pair shares its own trip."""
    trajs = {n: [] for n in names}
    for i, (a, b) in enumerate(zip(names, names[1:])):
        trajs[a].append((f"{trip}{i}", 0, duration))
        trajs[b].append((f"{trip}{i}", 0, duration))
    return build_contact_network([traj(n, *rides) for n, rides in trajs.items()])


def fixed_weights(net, w):
    w = np.full(net.n_edges, w, dtype=float)
    return WeightedContactNetwork(net, w, TransmissionParams())


def test_edge_probability_values():
    p = TransmissionParams(0.163, 7200)
    got = [edge_probability(d, p) for d in (0, 3600, 7200, 14400)]
    assert got == pytest.approx([0.0, 0.0815, 0.163, 0.163], abs=1e-12)
    with pytest.raises(ValueError):
        edge_probability(-1, p)


@pytest.mark.parametrize("kwargs", [{"p_max": 1.2}, {"p_max": -0.1}, {"d_max": 0}])
def test_params_validate(kwargs):
    with pytest.raises(ValueError):
        TransmissionParams(**kwargs)


def test_weight_network_matches_per_edge_formula(small_city):
    from transit_contagion.assignment import simulate_loading

    res = simulate_loading(small_city.network, small_city.demand)
    net = build_contact_network(res.trajectories)
    params = TransmissionParams(0.14, 5400)
    wnet = weight_network(net, params)
    assert len(wnet.weights) == net.n_edges > 0
    for d, w in zip(net.duration.tolist(), wnet.weights.tolist()):
        assert w == edge_probability(d, params)


def test_weight_network_saturates():
    net = build_contact_network([traj("a", ("T", 0, 0)), traj("b", ("T", 0, 0))])
    assert net.n_edges == 0
    assert weight_network(net, TransmissionParams()).weights.size == 0
    net = build_contact_network(
        [traj("a", ("T", 0, 7200), ("U", 0, 14400)), traj("b", ("T", 0, 7200), ("U", 0, 14400)), traj("c", ("T", 0, 1))]
    )
    w = dict(zip(net.edges(), weight_network(net, TransmissionParams()).weights))
    assert w[("a", "b", "T", 0, 7200)] == 0.163 == w[("a", "b", "U", 0, 14400)]


def test_epi_config_validates():
    with pytest.raises(ValueError):
        EpiConfig(infectious_period=-1)
    with pytest.raises(ValueError):
        EpiConfig(n_runs=0)


def test_abc_oracle():
    net = chain("A", "B", "C")
    est = run_epidemic(fixed_weights(net, 0.5), EpiConfig(horizon=2, infectious_period=5, n_runs=100_000), seeds=["A"])
    p = est.as_dict()
    assert p["A"] == 1.0
    assert p["B"] == pytest.approx(0.75, abs=0.005)
    assert p["C"] == pytest.approx(0.25, abs=0.005)


def test_certain_transmission():
    net = chain("A", "B")
    est = run_epidemic(fixed_weights(net, 1.0), EpiConfig(n_seeds=1, horizon=1, n_runs=500))
    assert est.probabilities.tolist() == [1.0, 1.0]


def test_zero_weights_only_seeds():
    net = chain(*"ABCDEFGH")
    cfg = EpiConfig(n_seeds=1, horizon=5, n_runs=40_000)
    est = run_epidemic(fixed_weights(net, 0.0), cfg)
    assert est.counts.sum() == cfg.n_runs
    # uniform seeding
    assert np.allclose(est.probabilities, 1 / 8, atol=4 * np.sqrt(1 / 8 * 7 / 8 / cfg.n_runs))


def test_seed_sampling_is_uniform_without_replacement():
    net = chain(*[f"n{i:02d}" for i in range(20)])
    cfg = EpiConfig(n_seeds=7, horizon=1, n_runs=30_000)
    est = run_epidemic(fixed_weights(net, 0.0), cfg)
    assert est.counts.sum() == 7 * cfg.n_runs
    expected = 7 / 20
    assert np.allclose(est.probabilities, expected, atol=4 * np.sqrt(expected * (1 - expected) / cfg.n_runs))


def test_too_many_seeds():
    with pytest.raises(SeedCountExceedsNodes):
        run_epidemic(fixed_weights(chain("A", "B"), 0.1), EpiConfig(n_seeds=3))


def test_seeds_always_infected():
    net = chain(*"ABCDE")
    est = run_epidemic(fixed_weights(net, 0.3), EpiConfig(n_seeds=1, n_runs=2000), seeds=["C"])
    assert est.as_dict()["C"] == 1.0


def test_zero_horizon_not_allowed_but_tau_zero_is():
    net = chain(*"ABC")
    # tau 0: seeds attempt once, then deactivate; newly infected attempt once as well
    est = run_epidemic(fixed_weights(net, 1.0), EpiConfig(horizon=5, infectious_period=0, n_runs=10), seeds=["A"])
    assert est.probabilities.tolist() == [1.0, 1.0, 1.0]


def test_infectious_period_limits_spread_time():
    # a long path with w=1: after T iterations the infection reached exactly T hops
    net = chain(*[f"n{i}" for i in range(8)])
    est = run_epidemic(fixed_weights(net, 1.0), EpiConfig(horizon=3, n_runs=5), seeds=["n0"])
    assert est.probabilities.tolist() == [1, 1, 1, 1, 0, 0, 0, 0]


def _random_net(rng, n, m):
    names = [f"v{i}" for i in range(n)]
    trajs = {x: [] for x in names}
    for e in range(m):
        a, b = rng.sample(names, 2)
        d = rng.randrange(60, 7200)
        trajs[a].append((f"t{e}", 0, d))
        trajs[b].append((f"t{e}", 0, d))
    return build_contact_network([traj(x, *r) for x, r in trajs.items()])


def test_worker_count_independence():
    rng = random.Random(1)
    net = _random_net(rng, 60, 200)
    wnet = weight_network(net, TransmissionParams(0.4, 3600))
    cfg = EpiConfig(n_seeds=3, n_runs=3001)
    ref = run_epidemic(wnet, cfg, workers=1).counts
    for workers in (2, 4, 8):
        assert np.array_equal(run_epidemic(wnet, cfg, workers=workers).counts, ref)


def test_monotone_in_pmax():
    rng = random.Random(2)
    net = _random_net(rng, 50, 150)
    cfg = EpiConfig(n_seeds=2, n_runs=2000)
    prev = None
    for p in (0.05, 0.1, 0.14, 0.156, 0.163, 0.3):
        counts = run_epidemic(weight_network(net, TransmissionParams(p)), cfg, workers=1).counts
        if prev is not None:
            assert np.all(counts >= prev)
        prev = counts


def test_scan_order_does_not_matter_against_reference():
    rng = random.Random(3)
    net = _random_net(rng, 12, 20)
    wnet = weight_network(net, TransmissionParams(0.5, 3600))
    seeds = [net.nodes[0], net.nodes[5]]
    cfg = EpiConfig(horizon=3, infectious_period=1, n_runs=40_000)
    est = run_epidemic(wnet, cfg, seeds=seeds)

    adj = {v: [] for v in net.nodes}
    for (a, b, *_), w in zip(net.edges(), wnet.weights):
        adj[a].append((b, w))
        adj[b].append((a, w))
    ref_rng = random.Random(4)
    counts = dict.fromkeys(net.nodes, 0)
    n_ref = 40_000
    for _ in range(n_ref):
        for v in oracles.reference_sir_run(adj, seeds, 3, 1, ref_rng):
            counts[v] += 1
    for v, p in est.as_dict().items():
        q = counts[v] / n_ref
        se = np.sqrt(max(p * (1 - p), 1e-4) * 2 / n_ref)
        assert abs(p - q) < 5 * se, v


def test_tau_at_least_horizon_is_si():
    rng = random.Random(5)
    net = _random_net(rng, 30, 60)
    wnet = weight_network(net, TransmissionParams(0.3))
    a = run_epidemic(wnet, EpiConfig(n_seeds=2, horizon=4, infectious_period=4, n_runs=3000))
    b = run_epidemic(wnet, EpiConfig(n_seeds=2, horizon=4, infectious_period=40, n_runs=3000))
    assert np.array_equal(a.counts, b.counts)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), n_runs=st.integers(1, 300))
def test_estimates_are_probabilities(seed, n_runs):
    net = _random_net(random.Random(seed), 15, 25)
    est = run_epidemic(weight_network(net, TransmissionParams(0.5)), EpiConfig(n_seeds=2, n_runs=n_runs, master_seed=seed))
    p = est.probabilities
    assert np.all((p >= 0) & (p <= 1))
    assert est.counts.sum() >= 2 * n_runs


def test_rates_and_endangered():
    est = InfectionEstimates(("a", "b", "c", "d"), np.array([4, 0, 0, 0]), 4)
    assert global_infection_rate(est) == 0.25
    assert endangered_count([0.6, 0.5, 0.4]) == 1
    assert endangered_count([0.5, 0.5 + 1e-12]) == 1
    assert endangered_count([]) == 0
    assert global_infection_rate(InfectionEstimates((), np.zeros(0, dtype=int), 10)) == 0.0
    with pytest.raises(ValueError):
        endangered_count([0.1], threshold=2)


def test_summary_echoes_config():
    est = InfectionEstimates(("a", "b"), np.array([3, 1]), 4)
    s = epi_summary(est, EpiConfig(), TransmissionParams(0.14, 7200))
    assert s["global_rate"] == 0.5 and s["endangered_count"] == 1
    assert s["config"]["d_max"] == 7200 and s["config"]["master_seed"] == EpiConfig().master_seed


def test_abc_runtime():
    net = chain("A", "B", "C")
    run_epidemic(fixed_weights(net, 0.5), EpiConfig(horizon=2, n_runs=10), seeds=["A"])
    t0 = time.perf_counter()
    run_epidemic(fixed_weights(net, 0.5), EpiConfig(horizon=2, n_runs=100_000), seeds=["A"])
    assert time.perf_counter() - t0 < 5
