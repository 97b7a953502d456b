"""Critical trip and route rankings, trend matrices and report emission."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .assignment import Trajectory
from .errors import UnknownRoute

DEFAULT_TOP_TRIPS = 100
DEFAULT_TOP_ROUTES = 10
DEFAULT_MIN_PASSENGERS = 5


@dataclass(frozen=True)
class TripRisk:
    trip_id: str
    passenger_count: int
    mean_infection_probability: float


@dataclass(frozen=True)
class RouteRisk:
    route_id: str
    distinct_passenger_count: int
    mean_infection_probability: float


def _probability_lookup(estimates) -> Mapping[str, float]:
    if hasattr(estimates, "as_dict"):
        return estimates.as_dict()
    return estimates


def _rank(rows: Iterable[tuple[str, int, float]], top_n: int, min_passengers: int) -> list[tuple[str, int, float]]:
    kept = [r for r in rows if r[1] >= min_passengers]
    kept.sort(key=lambda r: (-r[2], r[0]))
    return kept[:top_n] if top_n is not None else kept


def trip_passengers(trajectories: Iterable[Trajectory]) -> dict[str, set[str]]:
    riders: dict[str, set[str]] = defaultdict(set)
    for traj in trajectories:
        if not traj.completed:
            continue
        for seg in traj.segments:
            riders[seg.trip_id].add(traj.person_id)
    return riders


def trip_risk_ranking(
    trajectories: Iterable[Trajectory],
    estimates,
    top_n: int | None = DEFAULT_TOP_TRIPS,
    min_passengers: int = DEFAULT_MIN_PASSENGERS,
) -> list[TripRisk]:
    """Trips ranked by the mean infection probability of their distinct passengers."""
    prob = _probability_lookup(estimates)
    rows = []
    for tid, riders in trip_passengers(trajectories).items():
        # math.fsum keeps the mean independent of set iteration order
        rows.append((tid, len(riders), math.fsum(prob[p] for p in riders) / len(riders)))
    return [TripRisk(*r) for r in _rank(rows, top_n, min_passengers)]


def route_risk_ranking(
    trajectories: Iterable[Trajectory],
    estimates,
    route_of: Mapping[str, str] | callable,
    top_n: int | None = DEFAULT_TOP_ROUTES,
    min_passengers: int = DEFAULT_MIN_PASSENGERS,
    *,
    per_incidence: bool = False,
) -> list[RouteRisk]:
    """Routes ranked by mean passenger infection probability.

    By default each passenger counts once per route however many of its
    trips they rode. ``per_incidence=True`` instead averages over every
    (trip, passenger) incidence on the route; the count column then holds
    the number of incidences.
    """
    prob = _probability_lookup(estimates)
    lookup = route_of if callable(route_of) else route_of.__getitem__
    distinct: dict[str, set[str]] = defaultdict(set)
    incidences: dict[str, list[str]] = defaultdict(list)
    for tid, riders in trip_passengers(trajectories).items():
        rid = lookup(tid)
        distinct[rid] |= riders
        incidences[rid].extend(riders)
    groups = incidences if per_incidence else distinct
    rows = [(rid, len(ps), math.fsum(prob[p] for p in ps) / len(ps)) for rid, ps in groups.items()]
    return [RouteRisk(*r) for r in _rank(rows, top_n, min_passengers)]


def risk_trend_matrix(
    scenario_risks: Sequence[tuple[str, Sequence[RouteRisk]]],
    route_ids: Sequence[str],
    known_routes: Iterable[str] | None = None,
) -> list[list[float | None]]:
    """Route x scenario matrix of mean infection probabilities.

    ``scenario_risks`` pairs each scenario id with its full (untruncated)
    route ranking. A route with no passengers in a scenario gets ``None``.
    """
    known = set(known_routes) if known_routes is not None else None
    if known is not None:
        for rid in route_ids:
            if rid not in known:
                raise UnknownRoute(rid)
    matrix = []
    for rid in route_ids:
        row = []
        for _, risks in scenario_risks:
            by_id = {r.route_id: r.mean_infection_probability for r in risks}
            row.append(by_id.get(rid))
        matrix.append(row)
    return matrix


def write_trip_risks(rows: Sequence[TripRisk], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("trip_id", "passenger_count", "mean_infection_probability"))
        for r in rows:
            w.writerow((r.trip_id, r.passenger_count, repr(r.mean_infection_probability)))
    return path


def write_route_risks(rows: Sequence[RouteRisk], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("route_id", "distinct_passenger_count", "mean_infection_probability"))
        for r in rows:
            w.writerow((r.route_id, r.distinct_passenger_count, repr(r.mean_infection_probability)))
    return path


def write_trend_matrix(
    matrix: Sequence[Sequence[float | None]], route_ids: Sequence[str], scenario_ids: Sequence[str], path: str | Path
) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("route_id", *scenario_ids))
        for rid, row in zip(route_ids, matrix):
            w.writerow((rid, *("" if x is None else repr(x) for x in row)))
    return path


def read_trend_matrix(path: str | Path) -> tuple[list[str], list[str], list[list[float | None]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    scenario_ids = rows[0][1:]
    route_ids = [r[0] for r in rows[1:]]
    matrix = [[float(x) if x else None for x in r[1:]] for r in rows[1:]]
    return route_ids, scenario_ids, matrix


# ---------------------------------------------------------------------------
# manifests


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_config_echo(config: Mapping, out_dir: str | Path) -> Path:
    path = Path(out_dir) / "config.json"
    path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_manifest(out_dir: str | Path, config: Mapping) -> Path:
    """Hash every file under ``out_dir`` into ``manifest.json`` (path -> sha256)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config_echo(config, out_dir)
    files = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            try:
                files[p.relative_to(out_dir).as_posix()] = file_digest(p)
            except OSError as exc:
                raise OSError(f"cannot hash {p}: {exc}") from exc
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"config": config, "files": files}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


# ---------------------------------------------------------------------------
# report emission

GRID_METRICS = {
    "grid_stranded.csv": "stranded",
    "grid_infection.csv": "global_rate",
    "grid_endangered.csv": "endangered",
}
STATS_COLUMNS = (
    "max_degree",
    "median_degree",
    "mean_degree",
    "max_clique",
    "median_clique",
    "mean_clique",
    "n_nodes",
    "n_edges",
)


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x)) if isinstance(x, float) else str(x)


def write_grid_matrix(reports: Sequence, metric: str, path: str | Path) -> Path:
    """Rows are demand keep fractions, columns capacity fractions, both high to low."""
    demand = sorted({r.spec.demand_keep_fraction for r in reports}, reverse=True)
    capacity = sorted({r.spec.capacity_fraction for r in reports}, reverse=True)
    cells = {(r.spec.demand_keep_fraction, r.spec.capacity_fraction): getattr(r, metric) for r in reports}
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("demand_keep_fraction", *(repr(c) for c in capacity)))
        for d in demand:
            w.writerow((repr(d), *(_fmt(cells.get((d, c))) for c in capacity)))
    return path


def read_grid_matrix(path: str | Path) -> tuple[list[float], list[float], list[list[float | None]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    capacity = [float(c) for c in rows[0][1:]]
    demand = [float(r[0]) for r in rows[1:]]
    cells = [[float(x) if x else None for x in r[1:]] for r in rows[1:]]
    return demand, capacity, cells


def write_grid_stats(reports: Sequence, path: str | Path) -> Path:
    path = Path(path)
    ordered = sorted(reports, key=lambda r: (-r.spec.demand_keep_fraction, -r.spec.capacity_fraction))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("scenario_id", "demand_keep_fraction", "capacity_fraction", *STATS_COLUMNS))
        for r in ordered:
            s = r.stats.as_dict()
            w.writerow(
                (r.spec.scenario_id, repr(r.spec.demand_keep_fraction), repr(r.spec.capacity_fraction),
                 *(_fmt(s[c]) for c in STATS_COLUMNS))
            )
    return path


def emit_reports(
    reports: Sequence,
    out_dir: str | Path,
    config: Mapping,
    *,
    failures: Mapping[str, str] | None = None,
    top_routes: int = DEFAULT_TOP_ROUTES,
) -> Path:
    """Write per-scenario directories, the four grid tables, the route trend
    matrix, a config echo and a manifest of content hashes.

    Trend routes are the top routes of the baseline scenario, or of the first
    report when no baseline ran.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if reports:
        for r in reports:
            r.write(out_dir / r.spec.scenario_id, top_routes)
        write_grid_stats(reports, out_dir / "grid_stats.csv")
        for name, metric in GRID_METRICS.items():
            write_grid_matrix(reports, metric, out_dir / name)
        base = next((r for r in reports if r.spec.is_baseline), reports[0])
        route_ids = [rr.route_id for rr in base.route_risks[:top_routes]]
        ordered = sorted(reports, key=lambda r: (-r.spec.demand_keep_fraction, -r.spec.capacity_fraction))
        matrix = risk_trend_matrix([(r.spec.scenario_id, r.route_risks) for r in ordered], route_ids)
        write_trend_matrix(matrix, route_ids, [r.spec.scenario_id for r in ordered], out_dir / "risk_trends.csv")
    echo = dict(config)
    if failures:
        echo["failures"] = dict(sorted(failures.items()))
    return write_manifest(out_dir, echo)
