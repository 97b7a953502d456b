"""
Transit feed and demand ingestion.

Reads a GTFS-style directory (stops, routes, trips, stop_times, transfers and
a ``vehicles.txt`` capacity supplement) plus an individual-trip demand CSV
into immutable domain objects. Times are integer seconds since service-day
midnight; values past 24:00:00 are kept as-is.
"""

from __future__ import annotations

import csv
import heapq
import logging
import re
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import (
    DemandDegenerateTrip,
    DemandParseError,
    FeedMissingFile,
    FeedOrderError,
    FeedReferenceError,
    FeedValueError,
)

logger = logging.getLogger(__name__)

TIME_PATTERN = re.compile(r"^(\d{1,3}):([0-5]\d):([0-5]\d)$")
# Feeds may run past midnight; anything beyond two days is a typo.
MAX_SERVICE_SECONDS = 48 * 3600


class Mode(str, Enum):
    BUS = "bus"
    LIGHT_RAIL = "light_rail"
    HEAVY_RAIL = "heavy_rail"
    FERRY = "ferry"


# GTFS route_type -> mode; the writer uses the first key listed per mode.
ROUTE_TYPES = {0: Mode.LIGHT_RAIL, 1: Mode.HEAVY_RAIL, 2: Mode.HEAVY_RAIL, 3: Mode.BUS, 4: Mode.FERRY}
MODE_ROUTE_TYPE = {Mode.LIGHT_RAIL: 0, Mode.HEAVY_RAIL: 1, Mode.BUS: 3, Mode.FERRY: 4}

# Path costs are integers in 1/6000 utility-minutes per second of travel.
RIDE_COST_UNITS = 100
WALK_COST_UNITS = 393

DEFAULT_CAPACITY = {
    Mode.BUS: 48,
    Mode.LIGHT_RAIL: 200,
    Mode.HEAVY_RAIL: 200,
    Mode.FERRY: 300,
}

REQUIRED_FILES = ("stops.txt", "routes.txt", "trips.txt", "stop_times.txt")
OPTIONAL_FILES = ("transfers.txt", "vehicles.txt")


def parse_time(text: str) -> int:
    """Parse ``H:MM:SS``/``HH:MM:SS`` into seconds. Raises ValueError."""
    m = TIME_PATTERN.match(text.strip())
    if m is None:
        raise ValueError(f"malformed time {text!r}")
    h, mi, s = (int(g) for g in m.groups())
    seconds = h * 3600 + mi * 60 + s
    if seconds > MAX_SERVICE_SECONDS:
        raise ValueError(f"time {text!r} beyond the service day")
    return seconds


def format_time(seconds: int) -> str:
    h, rem = divmod(int(seconds), 3600)
    m, s = divmod(rem, 60)
    return f"{h:02d}:{m:02d}:{s:02d}"


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Stop:
    stop_id: str
    name: str
    lat: float
    lon: float


@dataclass(frozen=True)
class TransitRoute:
    route_id: str
    mode: Mode
    agency: str


@dataclass(frozen=True)
class StopTime:
    stop_id: str
    arrival: int
    departure: int


@dataclass(frozen=True)
class VehicleTrip:
    trip_id: str
    route_id: str
    capacity: int
    stop_times: tuple[StopTime, ...]

    @property
    def n_segments(self) -> int:
        return len(self.stop_times) - 1


@dataclass(frozen=True)
class TransferLink:
    from_stop: str
    to_stop: str
    walk_time: int


@dataclass(frozen=True, eq=False)
class TransitNetwork:
    """Immutable, indexed view of a parsed feed.

    ``stop_index`` maps each stop to the ids of the trips calling there.
    """

    stops: Mapping[str, Stop]
    routes: Mapping[str, TransitRoute]
    trips: Mapping[str, VehicleTrip]
    transfers: tuple[TransferLink, ...]
    stop_index: Mapping[str, tuple[str, ...]]

    @classmethod
    def build(
        cls,
        stops: Iterable[Stop],
        routes: Iterable[TransitRoute],
        trips: Iterable[VehicleTrip],
        transfers: Iterable[TransferLink] = (),
    ) -> "TransitNetwork":
        stop_map = {s.stop_id: s for s in sorted(stops, key=lambda s: s.stop_id)}
        route_map = {r.route_id: r for r in sorted(routes, key=lambda r: r.route_id)}
        trip_map = {t.trip_id: t for t in sorted(trips, key=lambda t: t.trip_id)}
        links = tuple(sorted(transfers, key=lambda t: (t.from_stop, t.to_stop)))
        served: dict[str, set[str]] = {sid: set() for sid in stop_map}
        for trip in trip_map.values():
            for st in trip.stop_times:
                served[st.stop_id].add(trip.trip_id)
        index = {sid: tuple(sorted(ids)) for sid, ids in served.items()}
        return cls(
            stops=MappingProxyType(stop_map),
            routes=MappingProxyType(route_map),
            trips=MappingProxyType(trip_map),
            transfers=links,
            stop_index=MappingProxyType(index),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TransitNetwork):
            return NotImplemented
        return (
            dict(self.stops) == dict(other.stops)
            and dict(self.routes) == dict(other.routes)
            and dict(self.trips) == dict(other.trips)
            and self.transfers == other.transfers
        )

    __hash__ = object.__hash__

    def route_of(self, trip_id: str) -> str:
        return self.trips[trip_id].route_id

    @cached_property
    def timetable(self) -> "Timetable":
        return Timetable(self)

    def counts(self) -> dict[str, int]:
        return {
            "stops": len(self.stops),
            "routes": len(self.routes),
            "trips": len(self.trips),
            "stop_times": sum(len(t.stop_times) for t in self.trips.values()),
            "transfers": len(self.transfers),
        }


class Timetable:
    """Lookup tables used by path search: arrivals per stop sorted by time,
    walking links in both directions and a schedule-free graph for bounds."""

    def __init__(self, network: TransitNetwork):
        arrivals: dict[str, list[tuple[int, str, int]]] = {sid: [] for sid in network.stops}
        for trip in network.trips.values():
            for seq, st in enumerate(trip.stop_times):
                if seq > 0:
                    arrivals[st.stop_id].append((st.arrival, trip.trip_id, seq))
        self._arrivals = {sid: sorted(v) for sid, v in arrivals.items()}
        self._arrival_times = {sid: [a[0] for a in v] for sid, v in self._arrivals.items()}
        self.links_to: dict[str, list[tuple[str, int]]] = {sid: [] for sid in network.stops}
        self.links_from: dict[str, dict[str, int]] = {sid: {} for sid in network.stops}
        for link in network.transfers:
            self.links_to[link.to_stop].append((link.from_stop, link.walk_time))
            self.links_from[link.from_stop][link.to_stop] = link.walk_time
        # schedule-free graph for search bounds: fastest ride per hop, walks
        fastest: dict[tuple[str, str], int] = {}
        for trip in network.trips.values():
            for a, b in zip(trip.stop_times, trip.stop_times[1:]):
                hop = (a.stop_id, b.stop_id)
                fastest[hop] = min(fastest.get(hop, b.arrival - a.departure), b.arrival - a.departure)
        self.static_out: dict[str, list[tuple[str, int]]] = {sid: [] for sid in network.stops}
        for (a, b), secs in sorted(fastest.items()):
            if a != b:
                self.static_out[a].append((b, secs * RIDE_COST_UNITS))
        for link in network.transfers:
            self.static_out[link.from_stop].append((link.to_stop, link.walk_time * WALK_COST_UNITS))
        self._bounds: dict[str, dict[str, int]] = {}

    def lower_bounds(self, origin: str) -> dict[str, int]:
        """Cheapest schedule-free cost from ``origin`` to every reachable stop
        (Dijkstra, cached per origin). Unreachable stops are absent."""
        if origin in self._bounds:
            return self._bounds[origin]
        dist = {origin: 0}
        heap = [(0, origin)]
        while heap:
            d, s = heapq.heappop(heap)
            if d > dist[s]:
                continue
            for nxt, units in self.static_out[s]:
                nd = d + units
                if nxt not in dist or nd < dist[nxt]:
                    dist[nxt] = nd
                    heapq.heappush(heap, (nd, nxt))
        self._bounds[origin] = dist
        return dist

    def arrivals_between(self, stop_id: str, lo: int, hi: int) -> list[tuple[int, str, int]]:
        """(arrival, trip_id, seq) for vehicles arriving at ``stop_id`` within [lo, hi]."""
        times = self._arrival_times[stop_id]
        return self._arrivals[stop_id][bisect_left(times, lo) : bisect_right(times, hi)]


@dataclass(frozen=True, order=True)
class TripRequest:
    preferred_arrival: int
    person_id: str
    origin_stop: str
    destination_stop: str


@dataclass(frozen=True)
class DemandSet:
    requests: tuple[TripRequest, ...]

    @classmethod
    def from_requests(cls, requests: Iterable[TripRequest]) -> "DemandSet":
        return cls(tuple(sorted(requests)))

    @property
    def person_count(self) -> int:
        return len(self.persons)

    @cached_property
    def persons(self) -> tuple[str, ...]:
        return tuple(sorted({r.person_id for r in self.requests}))

    def __len__(self) -> int:
        return len(self.requests)

    def __iter__(self) -> Iterator[TripRequest]:
        return iter(self.requests)


# ---------------------------------------------------------------------------
# parsing


def _read_csv(path: Path, required: Sequence[str]) -> Iterator[tuple[int, dict[str, str]]]:
    """Yield (line_number, row) pairs, line 1 being the header."""
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise FeedValueError(f"missing required column(s) {', '.join(missing)}", path.name, 1)
        for row in reader:
            yield reader.line_num, {k: (v or "").strip() for k, v in row.items() if k is not None}


def _int_field(row: dict[str, str], key: str, fname: str, line: int) -> int:
    try:
        return int(row[key])
    except ValueError:
        raise FeedValueError(f"{key} must be an integer, got {row[key]!r}", fname, line) from None


def _time_field(row: dict[str, str], key: str, fname: str, line: int) -> int:
    try:
        return parse_time(row[key])
    except ValueError as exc:
        raise FeedValueError(f"{key}: {exc}", fname, line) from None


def parse_transit_feed(directory: str | Path) -> TransitNetwork:
    """Parse a feed directory into a fully indexed :class:`TransitNetwork`."""
    directory = Path(directory)
    for name in REQUIRED_FILES:
        if not (directory / name).is_file():
            raise FeedMissingFile("required feed file is missing", str(directory / name))

    stops: dict[str, Stop] = {}
    for line, row in _read_csv(directory / "stops.txt", ("stop_id", "stop_lat", "stop_lon")):
        sid = row["stop_id"]
        if not sid:
            raise FeedValueError("empty stop_id", "stops.txt", line)
        if sid in stops:
            raise FeedValueError(f"duplicate stop_id {sid!r}", "stops.txt", line)
        try:
            lat, lon = float(row["stop_lat"]), float(row["stop_lon"])
        except ValueError:
            raise FeedValueError("stop_lat/stop_lon must be numeric", "stops.txt", line) from None
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            raise FeedValueError(f"coordinates out of range ({lat}, {lon})", "stops.txt", line)
        stops[sid] = Stop(sid, row.get("stop_name", ""), lat, lon)

    routes: dict[str, TransitRoute] = {}
    for line, row in _read_csv(directory / "routes.txt", ("route_id", "route_type")):
        rid = row["route_id"]
        if rid in routes:
            raise FeedValueError(f"duplicate route_id {rid!r}", "routes.txt", line)
        rtype = _int_field(row, "route_type", "routes.txt", line)
        if rtype not in ROUTE_TYPES:
            raise FeedValueError(f"unsupported route_type {rtype}", "routes.txt", line)
        routes[rid] = TransitRoute(rid, ROUTE_TYPES[rtype], row.get("agency_id", ""))

    trip_routes: dict[str, str] = {}
    for line, row in _read_csv(directory / "trips.txt", ("route_id", "trip_id")):
        tid = row["trip_id"]
        if tid in trip_routes:
            raise FeedValueError(f"duplicate trip_id {tid!r}", "trips.txt", line)
        if row["route_id"] not in routes:
            raise FeedReferenceError(f"unknown route_id {row['route_id']!r}", "trips.txt", line)
        trip_routes[tid] = row["route_id"]

    raw_times: dict[str, list[tuple[int, int, StopTime]]] = {tid: [] for tid in trip_routes}
    st_cols = ("trip_id", "arrival_time", "departure_time", "stop_id", "stop_sequence")
    for line, row in _read_csv(directory / "stop_times.txt", st_cols):
        tid, sid = row["trip_id"], row["stop_id"]
        if tid not in trip_routes:
            raise FeedReferenceError(f"unknown trip_id {tid!r}", "stop_times.txt", line)
        if sid not in stops:
            raise FeedReferenceError(f"unknown stop_id {sid!r}", "stop_times.txt", line)
        seq = _int_field(row, "stop_sequence", "stop_times.txt", line)
        arr = _time_field(row, "arrival_time", "stop_times.txt", line)
        dep = _time_field(row, "departure_time", "stop_times.txt", line)
        raw_times[tid].append((seq, line, StopTime(sid, arr, dep)))

    capacities: dict[str, int] = {}
    if (directory / "vehicles.txt").is_file():
        for line, row in _read_csv(directory / "vehicles.txt", ("trip_id", "capacity")):
            tid = row["trip_id"]
            if tid not in trip_routes:
                raise FeedReferenceError(f"unknown trip_id {tid!r}", "vehicles.txt", line)
            if tid in capacities:
                raise FeedValueError(f"duplicate capacity for trip {tid!r}", "vehicles.txt", line)
            cap = _int_field(row, "capacity", "vehicles.txt", line)
            if cap < 1:
                raise FeedValueError(f"capacity must be >= 1, got {cap}", "vehicles.txt", line)
            capacities[tid] = cap

    trips = []
    for tid, rows in raw_times.items():
        if not rows:
            raise FeedValueError(f"trip {tid!r} has no stop_times", "trips.txt")
        rows.sort(key=lambda r: r[0])
        for (seq_a, _, a), (seq_b, line_b, b) in zip(rows, rows[1:]):
            if seq_a == seq_b:
                raise FeedOrderError(f"trip {tid!r} repeats stop_sequence {seq_b}", "stop_times.txt", line_b)
            if b.arrival < a.departure:
                raise FeedOrderError(f"trip {tid!r} arrives before previous departure", "stop_times.txt", line_b)
        for _, line, st in rows:
            if st.departure < st.arrival:
                raise FeedOrderError(f"trip {tid!r} departs before it arrives", "stop_times.txt", line)
        route = routes[trip_routes[tid]]
        cap = capacities.get(tid, DEFAULT_CAPACITY[route.mode])
        trips.append(VehicleTrip(tid, route.route_id, cap, tuple(r[2] for r in rows)))

    transfers: list[TransferLink] = []
    if (directory / "transfers.txt").is_file():
        seen: set[tuple[str, str]] = set()
        cols = ("from_stop_id", "to_stop_id", "min_transfer_time")
        for line, row in _read_csv(directory / "transfers.txt", cols):
            a, b = row["from_stop_id"], row["to_stop_id"]
            for sid in (a, b):
                if sid not in stops:
                    raise FeedReferenceError(f"unknown stop_id {sid!r}", "transfers.txt", line)
            if a == b:
                raise FeedValueError("transfer link must join two different stops", "transfers.txt", line)
            if (a, b) in seen:
                raise FeedValueError(f"duplicate transfer {a!r}->{b!r}", "transfers.txt", line)
            walk = _int_field(row, "min_transfer_time", "transfers.txt", line)
            if walk < 0:
                raise FeedValueError("min_transfer_time must be >= 0", "transfers.txt", line)
            seen.add((a, b))
            transfers.append(TransferLink(a, b, walk))

    network = TransitNetwork.build(stops.values(), routes.values(), trips, transfers)
    logger.info("parsed feed %s: %s", directory, network.counts())
    return network


def parse_demand(path: str | Path) -> DemandSet:
    """Read ``person_id,origin_stop,destination_stop,preferred_arrival`` rows."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"demand file not found: {path}")
    cols = ("person_id", "origin_stop", "destination_stop", "preferred_arrival")
    requests = []
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in cols if c not in (reader.fieldnames or [])]
        if missing:
            raise DemandParseError(f"missing column(s) {', '.join(missing)}", 1, path.name)
        for row in reader:
            line = reader.line_num
            try:
                t = parse_time(row["preferred_arrival"] or "")
            except ValueError as exc:
                raise DemandParseError(str(exc), line, path.name) from None
            o, d = row["origin_stop"].strip(), row["destination_stop"].strip()
            if o == d:
                raise DemandDegenerateTrip(f"origin equals destination ({o!r})", line, path.name)
            requests.append(TripRequest(t, row["person_id"].strip(), o, d))
    demand = DemandSet.from_requests(requests)
    logger.info("parsed demand %s: %d requests, %d persons", path, len(demand), demand.person_count)
    return demand


def check_demand_stops(demand: DemandSet, network: TransitNetwork) -> list[str]:
    """Stop ids referenced by the demand but absent from the network."""
    return sorted({s for r in demand for s in (r.origin_stop, r.destination_stop) if s not in network.stops})


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    unserved_stops: list[str] = field(default_factory=list)
    degenerate_capacity: list[str] = field(default_factory=list)
    unreachable_transfers: list[tuple[str, str]] = field(default_factory=list)

    @property
    def is_clean(self) -> bool:
        return not (self.unserved_stops or self.degenerate_capacity or self.unreachable_transfers)

    def __len__(self) -> int:
        return len(self.unserved_stops) + len(self.degenerate_capacity) + len(self.unreachable_transfers)

    def lines(self) -> list[str]:
        out = [f"unserved stop {s}" for s in self.unserved_stops]
        out += [f"degenerate capacity (1) on trip {t}" for t in self.degenerate_capacity]
        out += [f"transfer {a}->{b} touches an unserved stop" for a, b in self.unreachable_transfers]
        return out


def validate_feed(network: TransitNetwork) -> ValidationReport:
    report = ValidationReport()
    served = {sid for sid, trips in network.stop_index.items() if trips}
    report.unserved_stops = sorted(set(network.stops) - served)
    report.degenerate_capacity = sorted(t.trip_id for t in network.trips.values() if t.capacity <= 1)
    report.unreachable_transfers = [
        (t.from_stop, t.to_stop)
        for t in network.transfers
        if t.from_stop not in served or t.to_stop not in served
    ]
    return report


# ---------------------------------------------------------------------------
# canonical writers


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_feed(network: TransitNetwork, directory: str | Path) -> list[Path]:
    """Write the network in canonical form (sorted rows, HH:MM:SS times)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_rows(
        directory / "stops.txt",
        ("stop_id", "stop_name", "stop_lat", "stop_lon"),
        ((s.stop_id, s.name, f"{s.lat:.6f}", f"{s.lon:.6f}") for s in network.stops.values()),
    )
    _write_rows(
        directory / "routes.txt",
        ("route_id", "agency_id", "route_type"),
        ((r.route_id, r.agency, MODE_ROUTE_TYPE[r.mode]) for r in network.routes.values()),
    )
    _write_rows(
        directory / "trips.txt",
        ("route_id", "trip_id"),
        ((t.route_id, t.trip_id) for t in network.trips.values()),
    )
    _write_rows(
        directory / "stop_times.txt",
        ("trip_id", "arrival_time", "departure_time", "stop_id", "stop_sequence"),
        (
            (t.trip_id, format_time(st.arrival), format_time(st.departure), st.stop_id, i + 1)
            for t in network.trips.values()
            for i, st in enumerate(t.stop_times)
        ),
    )
    _write_rows(
        directory / "transfers.txt",
        ("from_stop_id", "to_stop_id", "transfer_type", "min_transfer_time"),
        ((t.from_stop, t.to_stop, 2, t.walk_time) for t in network.transfers),
    )
    _write_rows(
        directory / "vehicles.txt",
        ("trip_id", "capacity"),
        ((t.trip_id, t.capacity) for t in network.trips.values()),
    )
    return [directory / n for n in (*REQUIRED_FILES, *OPTIONAL_FILES)]


def write_demand(demand: DemandSet, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_rows(
        path,
        ("person_id", "origin_stop", "destination_stop", "preferred_arrival"),
        ((r.person_id, r.origin_stop, r.destination_stop, format_time(r.preferred_arrival)) for r in demand),
    )
    return path
