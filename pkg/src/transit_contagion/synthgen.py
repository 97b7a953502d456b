"""
Synthetic desk-scale cities.

Stops sit on a square grid. Routes cycle through three families: row lines,
column lines and radial lines through the grid center, each served in both
directions at a fixed headway over the service span. Neighboring stops in a
row are joined by walking links. Every person commutes: one request per
commute peak, alternating home->work and work->home, with preferred arrival
times drawn from a normal around the peak.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InfeasibleParams
from .feed import (
    DemandSet,
    Mode,
    Stop,
    StopTime,
    TransferLink,
    TransitNetwork,
    TransitRoute,
    TripRequest,
    VehicleTrip,
    write_demand,
    write_feed,
)


@dataclass(frozen=True)
class CityParams:
    n_stops: int = 36
    n_routes: int = 12
    trips_per_route: int = 72
    service_span: int = 18 * 3600
    service_start: int = 5 * 3600
    default_capacity: int = 48
    n_persons: int = 5000
    commute_peaks: tuple[tuple[float, float], ...] = ((7 * 3600, 3600), (17 * 3600, 3600))
    seed: int = 7
    hop_time: int = 360
    dwell: int = 30
    walk_time: int = 300
    base_lat: float = 37.70
    base_lon: float = -122.50
    spacing_deg: float = 0.01

    def __post_init__(self):
        # tuples survive JSON round-trips as lists
        object.__setattr__(self, "commute_peaks", tuple(tuple(p) for p in self.commute_peaks))


@dataclass
class SyntheticCity:
    network: TransitNetwork
    demand: DemandSet
    manifest: dict = field(default_factory=dict)


def _grid_side(n_stops: int) -> int:
    return math.ceil(math.sqrt(n_stops))


def _route_stops(kind: int, line: int, side: int, n_stops: int) -> list[int]:
    """Stop indices (row-major grid positions) visited by one route."""
    if kind == 0:  # row
        r = line % side
        seq = [r * side + c for c in range(side)]
    elif kind == 1:  # column
        c = line % side
        seq = [r * side + c for r in range(side)]
    else:  # radial: a diagonal-ish chord through the center
        offset = line % side
        seq = []
        for r in range(side):
            c = (offset + r) % side if line % 2 == 0 else (side - 1 - offset - r) % side
            seq.append(r * side + c)
    seq = [s for s in seq if s < n_stops]
    if len(seq) < 2:
        # sparse last row: fall back to the first stops
        seq = list(range(min(n_stops, side)))
    return seq


def generate_city(params: CityParams) -> SyntheticCity:
    if params.n_stops < 2:
        raise InfeasibleParams("need at least 2 stops")
    for name in ("n_routes", "trips_per_route", "n_persons", "default_capacity", "service_span"):
        if getattr(params, name) < 1:
            raise InfeasibleParams(f"{name} must be positive")
    span_end = params.service_start + params.service_span
    for mean, std in params.commute_peaks:
        if not params.service_start <= mean <= span_end or std < 0:
            raise InfeasibleParams(f"commute peak {mean} outside the service span")

    side = _grid_side(params.n_stops)
    stops = []
    for i in range(params.n_stops):
        r, c = divmod(i, side)
        stops.append(
            Stop(
                f"S{i:03d}",
                f"Stop {r}-{c}",
                round(params.base_lat + r * params.spacing_deg, 6),
                round(params.base_lon + c * params.spacing_deg, 6),
            )
        )

    sequences = [_route_stops(k % 3, k // 3, side, params.n_stops) for k in range(params.n_routes)]
    # grid positions no route reaches are left out so the feed validates clean
    served = sorted({s for seq in sequences for s in seq})
    routes, trips = [], []
    for k, seq in enumerate(sequences):
        run_time = (len(seq) - 1) * (params.hop_time + params.dwell)
        if run_time > params.service_span:
            raise InfeasibleParams("service span shorter than one trip")
        rid = f"R{k:02d}"
        routes.append(TransitRoute(rid, Mode.BUS, "synth"))
        n_trips = params.trips_per_route
        latest = params.service_span - run_time
        headway = latest / max(n_trips - 1, 1) if n_trips > 1 else 0
        for j in range(n_trips):
            start = params.service_start + int(round(j * headway))
            order = seq if j % 2 == 0 else seq[::-1]
            times = []
            t = start
            for pos, s in enumerate(order):
                arr = t
                dep = arr if pos in (0, len(order) - 1) else arr + params.dwell
                times.append(StopTime(stops[s].stop_id, arr, dep))
                t = dep + params.hop_time
            trips.append(VehicleTrip(f"{rid}_{j:03d}", rid, params.default_capacity, tuple(times)))

    served_set = set(served)
    transfers = []
    for i in range(params.n_stops):
        r, c = divmod(i, side)
        j = i + 1
        if c + 1 < side and j < params.n_stops and i in served_set and j in served_set:
            transfers.append(TransferLink(stops[i].stop_id, stops[j].stop_id, params.walk_time))
            transfers.append(TransferLink(stops[j].stop_id, stops[i].stop_id, params.walk_time))

    network = TransitNetwork.build([stops[i] for i in served], routes, trips, transfers)

    rng = np.random.default_rng(params.seed)
    requests = []
    width = len(str(params.n_persons - 1))
    for p in range(params.n_persons):
        pid = f"P{p:0{width}d}"
        home, work = (served[i] for i in rng.choice(len(served), size=2, replace=False))
        for q, (mean, std) in enumerate(params.commute_peaks):
            t = int(round(rng.normal(mean, std)))
            t = min(max(t, params.service_start + 1), span_end)
            o, d = (home, work) if q % 2 == 0 else (work, home)
            requests.append(TripRequest(t, pid, stops[o].stop_id, stops[d].stop_id))
    demand = DemandSet.from_requests(requests)

    manifest = {
        "params": asdict(params),
        "counts": {**network.counts(), "requests": len(demand), "persons": demand.person_count},
    }
    return SyntheticCity(network, demand, manifest)


def write_city(city: SyntheticCity, out_dir: str | Path) -> dict[str, Path]:
    """Write ``feed/``, ``demand.csv`` and ``manifest.json`` under ``out_dir``."""
    out_dir = Path(out_dir)
    feed_dir = out_dir / "feed"
    write_feed(city.network, feed_dir)
    demand_path = write_demand(city.demand, out_dir / "demand.csv")
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(city.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"feed": feed_dir, "demand": demand_path, "manifest": manifest_path}


def params_from_dict(data: dict) -> CityParams:
    return CityParams(**data)
