from __future__ import annotations

import random

import pytest

from transit_contagion.feed import (
    Mode,
    Stop,
    StopTime,
    TransferLink,
    TransitNetwork,
    TransitRoute,
    VehicleTrip,
    write_feed,
)
from transit_contagion.synthgen import CityParams, generate_city


def make_network(trips, transfers=(), n_stops=None, capacity=40):
    """Build a network from ``{trip_id: [(stop, arr, dep), ...]}``; one route per trip."""
    stop_ids = sorted({s for times in trips.values() for s, _, _ in times} | {t[0] for t in transfers} | {t[1] for t in transfers})
    if n_stops:
        stop_ids = sorted(set(stop_ids) | {f"Z{i}" for i in range(n_stops - len(stop_ids))})
    stops = [Stop(s, s, 0.0, 0.0) for s in stop_ids]
    routes, vts = [], []
    for tid, times in trips.items():
        cap = capacity[tid] if isinstance(capacity, dict) else capacity
        routes.append(TransitRoute(f"r_{tid}", Mode.BUS, "a"))
        vts.append(VehicleTrip(tid, f"r_{tid}", cap, tuple(StopTime(*x) for x in times)))
    links = [TransferLink(a, b, w) for a, b, w in transfers]
    return TransitNetwork.build(stops, routes, vts, links)


def random_network(rng: random.Random, n_stops=6, n_trips=6, with_walks=True):
    stops = [f"s{i}" for i in range(n_stops)]
    trips = {}
    for k in range(n_trips):
        seq = rng.sample(stops, rng.randint(2, min(5, n_stops)))
        t = rng.randrange(6 * 3600, 8 * 3600, 60)
        times = []
        for s in seq:
            dwell = rng.choice((0, 0, 30))
            times.append((s, t, t + dwell))
            t += dwell + rng.randrange(60, 900, 30)
        trips[f"t{k}"] = times
    links = []
    if with_walks:
        for _ in range(rng.randint(0, 4)):
            a, b = rng.sample(stops, 2)
            if (a, b) not in {(x, y) for x, y, _ in links}:
                links.append((a, b, rng.randrange(60, 600, 30)))
    return make_network(trips, links, n_stops=n_stops)


@pytest.fixture(scope="session")
def small_city():
    return generate_city(CityParams(n_stops=16, n_routes=6, trips_per_route=40, n_persons=300, seed=3))


@pytest.fixture(scope="session")
def crowded_city():
    """Small city where capacity binds: some riders are turned away even at full capacity."""
    return generate_city(
        CityParams(n_stops=16, n_routes=6, trips_per_route=40, n_persons=1000, default_capacity=20, seed=3)
    )


@pytest.fixture
def minimal_feed(tmp_path):
    net = make_network({"T1": [("A", 3600, 3600), ("B", 4200, 4200)]}, capacity=40)
    write_feed(net, tmp_path)
    return tmp_path


_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; returns ``ok`` so the test can assert on it."""

    def record(number: int, ok: bool, detail: str, status: str | None = None) -> bool:
        _CRITERIA[number] = (status or ("PASS" if ok else "FAIL"), detail)
        print(f"criterion {number}: {_CRITERIA[number][0]} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status:4s} {detail}")
