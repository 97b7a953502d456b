"""
Schedule-based transit assignment.

Each request gets up to ``K`` timetable-feasible candidate paths from a
best-first backward search, ranked by the generalized cost

    u = t_IV + 1.77 t_WT + 3.93 t_WK + 47.73 X_TR      (minutes)

One path is drawn with a logit model and passengers are then loaded onto
capacity-constrained vehicles in event order. Passengers who cannot be
served on any candidate are stranded together with everything they rode
that day.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyChoiceSet, UnknownStop
from .feed import RIDE_COST_UNITS, WALK_COST_UNITS, DemandSet, TransitNetwork, TripRequest

logger = logging.getLogger(__name__)

IN_VEHICLE_WEIGHT = 1.0
WAIT_WEIGHT = 1.77
WALK_WEIGHT = 3.93
TRANSFER_PENALTY = 47.73

# Integer cost in 1/6000 utility-minutes (weights have two decimals, times
# are whole seconds), so search ordering is exact.
_IVT_UNITS = RIDE_COST_UNITS
_WAIT_UNITS = 177
_WALK_UNITS = WALK_COST_UNITS
_TRANSFER_UNITS = 286380

DEFAULT_THETA = 0.2
DEFAULT_PATHS = 10
DEFAULT_WINDOW = 30 * 60
DEFAULT_MAX_TRANSFERS = 2


@dataclass(frozen=True)
class AssignmentParams:
    theta: float = DEFAULT_THETA
    k: int = DEFAULT_PATHS
    window: int = DEFAULT_WINDOW
    seed: int = 0
    max_transfers: int = DEFAULT_MAX_TRANSFERS

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.window <= 0:
            raise ValueError("window must be positive")
        if self.max_transfers < 0:
            raise ValueError("max_transfers must be >= 0")


@dataclass(frozen=True)
class PathUtilityComponents:
    in_vehicle: float
    waiting: float
    walking: float
    transfers: int

    def __post_init__(self):
        if min(self.in_vehicle, self.waiting, self.walking, self.transfers) < 0:
            raise ValueError("utility components must be non-negative")


def path_utility(c: PathUtilityComponents) -> float:
    return (
        IN_VEHICLE_WEIGHT * c.in_vehicle
        + WAIT_WEIGHT * c.waiting
        + WALK_WEIGHT * c.walking
        + TRANSFER_PENALTY * c.transfers
    )


@dataclass(frozen=True)
class Leg:
    trip_id: str
    board_stop: str
    board_seq: int
    board_time: int
    alight_stop: str
    alight_seq: int
    alight_time: int


@dataclass(frozen=True)
class Walk:
    from_stop: str
    to_stop: str
    seconds: int


@dataclass(frozen=True)
class CandidatePath:
    """A timetable-feasible itinerary.

    ``walks[i]`` is the walk before ``legs[i]`` (``walks[0]`` is the access
    walk) and ``walks[-1]`` the egress walk, so ``len(walks) == len(legs) + 1``;
    ``None`` marks no walking.
    """

    legs: tuple[Leg, ...]
    walks: tuple[Walk | None, ...]
    components: PathUtilityComponents
    utility: float

    @property
    def key(self) -> tuple:
        walks = tuple((w.from_stop, w.to_stop) if w else ("", "") for w in self.walks)
        return tuple((leg.trip_id, leg.board_seq, leg.alight_seq) for leg in self.legs), walks

    @property
    def first_board_time(self) -> int:
        return self.legs[0].board_time

    @property
    def arrival_time(self) -> int:
        egress = self.walks[-1]
        return self.legs[-1].alight_time + (egress.seconds if egress else 0)


def make_path(legs: Sequence[Leg], walks: Sequence[Walk | None]) -> CandidatePath:
    """Assemble a path and derive its utility components from the timetable times."""
    ivt = sum(leg.alight_time - leg.board_time for leg in legs)
    walk = sum(w.seconds for w in walks if w is not None)
    wait = 0
    for prev, nxt, w in zip(legs, legs[1:], walks[1:]):
        ready = prev.alight_time + (w.seconds if w else 0)
        wait += nxt.board_time - ready
    comps = PathUtilityComponents(ivt / 60.0, wait / 60.0, walk / 60.0, len(legs) - 1)
    return CandidatePath(tuple(legs), tuple(walks), comps, path_utility(comps))


# ---------------------------------------------------------------------------
# candidate enumeration


_ARRIVE, _BOARD, _DONE = 0, 1, 2


def enumerate_candidate_paths(
    network: TransitNetwork,
    request: TripRequest,
    window: int = DEFAULT_WINDOW,
    k: int = DEFAULT_PATHS,
    *,
    max_transfers: int = DEFAULT_MAX_TRANSFERS,
    max_transfer_wait: int | None = None,
) -> list[CandidatePath]:
    """Return the ``k`` cheapest paths arriving in ``[preferred - window, preferred]``.

    The search runs backwards from the destination over the timetable,
    expanding partial paths in A* order. The bound for a partial path at
    stop ``s`` is the schedule-free ride cost from the origin to ``s``, plus
    one transfer penalty when another leg is unavoidable; it is consistent,
    so complete paths pop out in utility order. Paths visit each stop and
    each vehicle trip at most once, and transfer waits are capped at
    ``max_transfer_wait`` (default: the window). Ties are broken by the
    path's trip/stop key.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if window <= 0:
        raise ValueError("window must be positive")
    for sid in (request.origin_stop, request.destination_stop):
        if sid not in network.stops:
            raise UnknownStop(f"unknown stop {sid!r}")
    max_wait = window if max_transfer_wait is None else max_transfer_wait
    max_legs = max_transfers + 1
    tt = network.timetable
    trips = network.trips
    origin, dest = request.origin_stop, request.destination_stop
    pa = request.preferred_arrival
    access = tt.links_from[origin]
    reach = tt.lower_bounds(origin)
    if dest not in reach:
        return []

    def h_board(stop: str) -> int:
        if stop == origin:
            return 0
        bound = _TRANSFER_UNITS + reach[stop]
        if stop in access:
            bound = min(bound, access[stop] * _WALK_UNITS)
        return bound

    # label: (kind, stop, time, lower, legs, walks, visited, trips, cost)
    # ``lower`` is the earliest alight time allowed on the final leg, or None
    # for labels that still need a transfer; ``walks`` holds the walk before
    # each leg plus the egress walk.
    heap: list = []
    counter = 0

    def push(cost: int, bound: int, label: tuple) -> None:
        nonlocal counter
        heapq.heappush(heap, (cost + bound, counter, cost, label))
        counter += 1

    push(0, reach[dest], (_ARRIVE, dest, pa, pa - window, (), (None,), frozenset((dest,)), frozenset()))
    for src, w in tt.links_to[dest]:
        if src == origin or src not in reach:
            continue
        walk = (Walk(src, dest, w),)
        push(w * _WALK_UNITS, reach[src], (_ARRIVE, src, pa - w, pa - window - w, (), walk, frozenset((dest, src)), frozenset()))

    done: list[tuple[int, CandidatePath]] = []
    threshold: int | None = None
    while heap:
        f, _, cost, lab = heapq.heappop(heap)
        if threshold is not None and f > threshold:
            break
        kind, stop, time, lower, legs, walks, visited, used = lab
        if kind == _DONE:
            done.append((cost, make_path(legs, walks)))
            if len(done) == k and threshold is None:
                threshold = cost
            continue

        if kind == _ARRIVE:
            final = lower is not None
            lo = lower if final else time - max_wait
            for arr, tid, j in tt.arrivals_between(stop, lo, time):
                if tid in used:
                    continue
                trip = trips[tid]
                step = 0 if final else (time - arr) * _WAIT_UNITS + _TRANSFER_UNITS
                used2 = used | {tid}
                for i in range(j - 1, -1, -1):
                    st = trip.stop_times[i]
                    b = st.stop_id
                    if b in visited or b not in reach:
                        continue
                    leg = Leg(tid, b, i, st.departure, stop, j, arr)
                    push(
                        cost + step + (arr - st.departure) * _IVT_UNITS,
                        h_board(b),
                        (_BOARD, b, st.departure, None, (leg, *legs), walks, visited | {b}, used2),
                    )
            continue

        # _BOARD: the path boards its first leg at ``stop`` at ``time``
        if stop == origin:
            push(cost, 0, (_DONE, stop, time, None, legs, (None, *walks), visited, used))
            continue
        if stop in access:
            w = access[stop]
            push(cost + w * _WALK_UNITS, 0, (_DONE, origin, time - w, None, legs, (Walk(origin, stop, w), *walks), visited, used))
        if len(legs) >= max_legs:
            continue
        push(cost, _TRANSFER_UNITS + reach[stop], (_ARRIVE, stop, time, None, legs, (None, *walks), visited, used))
        for src, w in tt.links_to[stop]:
            if src == origin or src in visited or src not in reach:
                continue
            push(
                cost + w * _WALK_UNITS,
                _TRANSFER_UNITS + reach[src],
                (_ARRIVE, src, time - w, None, legs, (Walk(src, stop, w), *walks), visited | {src}, used),
            )

    done.sort(key=lambda cp: (cp[0], cp[1].key))
    return [p for _, p in done[:k]]


# ---------------------------------------------------------------------------
# logit choice


def logit_probabilities(utilities: Sequence[float], theta: float = DEFAULT_THETA) -> list[float]:
    """Multinomial logit over disutilities: p_i proportional to exp(-theta * u_i)."""
    if len(utilities) == 0:
        raise EmptyChoiceSet("no alternatives to choose from")
    if not theta > 0:
        raise ValueError("theta must be positive")
    u = np.asarray(utilities, dtype=float)
    e = np.exp(-theta * (u - u.min()))
    return list(e / e.sum())


@dataclass(frozen=True)
class Hyperpath:
    paths: tuple[CandidatePath, ...]
    probabilities: tuple[float, ...]

    @classmethod
    def from_paths(cls, paths: Sequence[CandidatePath], theta: float = DEFAULT_THETA) -> "Hyperpath":
        probs = logit_probabilities([p.utility for p in paths], theta)
        return cls(tuple(paths), tuple(probs))

    def sample(self, u: float) -> int:
        """Index of the alternative selected by a uniform draw ``u`` in [0, 1)."""
        cdf = np.cumsum(self.probabilities)
        return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), len(cdf) - 1))


def stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def choice_draw(seed: int, person_id: str, ordinal: int) -> float:
    """Uniform draw keyed by (seed, person, request ordinal).

    Keying by person rather than by processing order keeps a passenger's
    choice fixed when other passengers are added or removed.
    """
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, stable_hash(person_id), ordinal])
    return float(rng.random())


# ---------------------------------------------------------------------------
# loading


@dataclass(frozen=True)
class RideSegment:
    trip_id: str
    board_stop: str
    board_time: int
    alight_stop: str
    alight_time: int
    board_seq: int
    alight_seq: int


@dataclass(frozen=True)
class Trajectory:
    person_id: str
    request: TripRequest
    segments: tuple[RideSegment, ...]
    completed: bool
    egress_walk: int = 0

    @property
    def destination(self) -> str:
        return self.request.destination_stop


@dataclass(frozen=True)
class StrandedPassenger:
    person_id: str
    reason: str


@dataclass(frozen=True)
class AssignmentResult:
    trajectories: tuple[Trajectory, ...]
    stranded: tuple[StrandedPassenger, ...]

    @property
    def persons(self) -> tuple[str, ...]:
        return tuple(sorted({t.person_id for t in self.trajectories}))

    def segments(self) -> Iterable[tuple[str, RideSegment]]:
        for traj in self.trajectories:
            for seg in traj.segments:
                yield traj.person_id, seg


def stranded_count(result: AssignmentResult) -> int:
    return len({s.person_id for s in result.stranded})


def _segments_of(path: CandidatePath) -> tuple[RideSegment, ...]:
    return tuple(
        RideSegment(l.trip_id, l.board_stop, l.board_time, l.alight_stop, l.alight_time, l.board_seq, l.alight_seq)
        for l in path.legs
    )


def candidate_table(
    network: TransitNetwork,
    demand: DemandSet | Iterable[TripRequest],
    window: int = DEFAULT_WINDOW,
    k: int = DEFAULT_PATHS,
    *,
    max_transfers: int = DEFAULT_MAX_TRANSFERS,
) -> dict[TripRequest, list[CandidatePath]]:
    """Candidate paths for every distinct request. Capacities do not enter
    the search, so the table can be reused across capacity scenarios."""
    table: dict[TripRequest, list[CandidatePath]] = {}
    for req in demand:
        if req not in table:
            table[req] = enumerate_candidate_paths(network, req, window, k, max_transfers=max_transfers)
    return table


@dataclass
class _Plan:
    person_id: str
    request: TripRequest
    order: list[CandidatePath]
    attempt: int = 0
    reserved: list[tuple[str, int, int]] = field(default_factory=list)
    done: bool = False


def simulate_loading(
    network: TransitNetwork,
    demand: DemandSet,
    theta: float = DEFAULT_THETA,
    k: int = DEFAULT_PATHS,
    window: int = DEFAULT_WINDOW,
    rng_seed: int = 0,
    *,
    max_transfers: int = DEFAULT_MAX_TRANSFERS,
    candidates: Mapping[TripRequest, Sequence[CandidatePath]] | None = None,
) -> AssignmentResult:
    """Assign every request and load passengers onto vehicles.

    Boarding attempts are processed in the order vehicles reach the stop;
    at one stop, passengers who got there first board first, then by
    person_id. A boarding is denied if any segment of the ride would exceed
    the trip capacity. A denied passenger drops what they reserved for that
    request and moves to the next candidate (sampled path first, then the
    rest by utility) that has not already left; when none remain the
    person is stranded and every ride they made that day is withdrawn.
    """
    if candidates is None:
        candidates = {}
    loads = {tid: np.zeros(max(trip.n_segments, 0), dtype=np.int64) for tid, trip in network.trips.items()}
    caps = {tid: trip.capacity for tid, trip in network.trips.items()}

    stranded: dict[str, str] = {}
    plans: list[_Plan] = []
    ordinal: dict[str, int] = defaultdict(int)
    for req in demand:
        n = ordinal[req.person_id]
        ordinal[req.person_id] += 1
        paths = candidates.get(req)
        if paths is None:
            paths = enumerate_candidate_paths(network, req, window, k, max_transfers=max_transfers)
        if not paths:
            stranded.setdefault(req.person_id, "no_path")
            continue
        hyper = Hyperpath.from_paths(paths, theta)
        pick = hyper.sample(choice_draw(rng_seed, req.person_id, n))
        order = [paths[pick]] + [p for i, p in enumerate(paths) if i != pick]
        plans.append(_Plan(req.person_id, req, order))

    by_person: dict[str, list[_Plan]] = defaultdict(list)
    for plan in plans:
        by_person[plan.person_id].append(plan)

    # event: (board time, arrival at stop, person, plan index, leg index, attempt)
    events: list[tuple[int, int, str, int, int, int]] = []
    for idx, plan in enumerate(plans):
        if plan.person_id in stranded:
            continue
        first = plan.order[0]
        events.append((first.first_board_time, first.first_board_time, plan.person_id, idx, 0, 0))
    heapq.heapify(events)

    def release(plan: _Plan) -> None:
        for tid, a, b in plan.reserved:
            loads[tid][a:b] -= 1
        plan.reserved.clear()

    while events:
        board_time, _, pid, idx, leg_i, attempt = heapq.heappop(events)
        plan = plans[idx]
        if pid in stranded or attempt != plan.attempt:
            continue
        path = plan.order[attempt]
        leg = path.legs[leg_i]
        load = loads[leg.trip_id]
        a, b = leg.board_seq, leg.alight_seq
        if load[a:b].max(initial=0) + 1 <= caps[leg.trip_id]:
            load[a:b] += 1
            plan.reserved.append((leg.trip_id, a, b))
            if leg_i + 1 < len(path.legs):
                nxt = path.legs[leg_i + 1]
                walk = path.walks[leg_i + 1]
                at_stop = leg.alight_time + (walk.seconds if walk else 0)
                heapq.heappush(events, (nxt.board_time, at_stop, pid, idx, leg_i + 1, attempt))
            else:
                plan.done = True
            continue

        release(plan)
        nxt_attempt = next(
            (i for i in range(attempt + 1, len(plan.order)) if plan.order[i].first_board_time >= board_time),
            None,
        )
        if nxt_attempt is None:
            stranded[pid] = "capacity"
            for other in by_person[pid]:
                release(other)
                other.done = False
            continue
        plan.attempt = nxt_attempt
        t0 = plan.order[nxt_attempt].first_board_time
        heapq.heappush(events, (t0, t0, pid, idx, 0, nxt_attempt))

    trajectories = []
    for plan in plans:
        if plan.person_id in stranded or not plan.done:
            continue
        path = plan.order[plan.attempt]
        egress = path.walks[-1]
        trajectories.append(
            Trajectory(plan.person_id, plan.request, _segments_of(path), True, egress.seconds if egress else 0)
        )
    trajectories.sort(key=lambda t: (t.person_id, t.request))
    result = AssignmentResult(
        tuple(trajectories),
        tuple(StrandedPassenger(p, r) for p, r in sorted(stranded.items())),
    )
    logger.info(
        "loaded %d trajectories, %d persons stranded",
        len(result.trajectories),
        stranded_count(result),
    )
    return result


def segment_loads(network: TransitNetwork, trajectories: Iterable[Trajectory]) -> dict[str, np.ndarray]:
    """Onboard count per inter-stop segment of each trip, recounted from trajectories."""
    loads = {tid: np.zeros(max(t.n_segments, 0), dtype=np.int64) for tid, t in network.trips.items()}
    for traj in trajectories:
        for seg in traj.segments:
            loads[seg.trip_id][seg.board_seq : seg.alight_seq] += 1
    return loads



TRAJECTORY_COLUMNS = (
    "person_id", "trip_id", "board_stop", "board_time", "alight_stop", "alight_time", "board_seq", "alight_seq",
)


def write_trajectories(result: AssignmentResult, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for pid, seg in result.segments():
            w.writerow(
                (pid, seg.trip_id, seg.board_stop, seg.board_time, seg.alight_stop, seg.alight_time,
                 seg.board_seq, seg.alight_seq)
            )
    return path


def read_trajectories(path: str | Path, network: TransitNetwork | None = None) -> list[Trajectory]:
    """Load ``trajectories.csv`` as one trajectory per person.

    The stop-sequence columns are optional when ``network`` is given; they
    are then looked up from the timetable.
    """
    by_person: dict[str, list[RideSegment]] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in TRAJECTORY_COLUMNS[:6] if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {', '.join(missing)}")
        for row in reader:
            bt, at = int(row["board_time"]), int(row["alight_time"])
            if row.get("board_seq") not in (None, ""):
                bs, as_ = int(row["board_seq"]), int(row["alight_seq"])
            elif network is not None:
                times = network.trips[row["trip_id"]].stop_times
                bs = next(i for i, st in enumerate(times) if st.stop_id == row["board_stop"] and st.departure == bt)
                as_ = next(i for i, st in enumerate(times) if st.stop_id == row["alight_stop"] and st.arrival == at)
            else:
                raise ValueError(f"{path}: stop sequences missing and no network to recover them")
            by_person[row["person_id"]].append(
                RideSegment(row["trip_id"], row["board_stop"], bt, row["alight_stop"], at, bs, as_)
            )
    out = []
    for pid in sorted(by_person):
        segs = tuple(sorted(by_person[pid], key=lambda s: (s.board_time, s.trip_id)))
        req = TripRequest(segs[-1].alight_time, pid, segs[0].board_stop, segs[-1].alight_stop)
        out.append(Trajectory(pid, req, segs, True))
    return out


def write_stranded(result: AssignmentResult, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("person_id", "reason"))
        for s in result.stranded:
            w.writerow((s.person_id, s.reason))
    return path
