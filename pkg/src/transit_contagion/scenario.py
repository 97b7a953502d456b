"""
Demand-reduction x capacity-reduction scenarios.

Every scenario runs the whole pipeline on a reduced copy of the base inputs.
The same sampling seed is used for every demand level, so lower keep
fractions retain a subset of the persons kept at higher ones; together with
the identity-keyed epidemic streams this makes neighboring grid cells share
most of their randomness.
"""

from __future__ import annotations

import bisect
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import analysis
from .assignment import (
    AssignmentParams,
    AssignmentResult,
    CandidatePath,
    candidate_table,
    simulate_loading,
    stranded_count,
    write_stranded,
    write_trajectories,
)
from .contacts import (
    ContactNetwork,
    NetworkStats,
    build_contact_network,
    clique_histogram,
    network_stats,
    temporal_histograms,
    write_edges,
    write_histogram,
    write_stats,
)
from .epidemic import (
    DEFAULT_D_MAX,
    EpiConfig,
    InfectionEstimates,
    TransmissionParams,
    endangered_count,
    epi_summary,
    global_infection_rate,
    run_epidemic,
    weight_network,
    write_estimates,
    write_summary,
)
from .errors import ScenarioError, UnmappedCapacityFraction
from .feed import DemandSet, TransitNetwork, TripRequest

logger = logging.getLogger(__name__)

DEMAND_LEVELS = (1.0, 0.83, 0.665, 0.59, 0.5)
CAPACITY_LEVELS = (1.0, 0.9, 0.8, 0.7, 0.5)

# maximum transmission probability for a 2-hour ride at each capacity level
PMAX_TABLE = {1.0: 0.163, 0.9: 0.160, 0.8: 0.158, 0.7: 0.156, 0.5: 0.140}

DEFAULT_SAMPLING_SEED = 1


def scenario_id(demand_keep_fraction: float, capacity_fraction: float) -> str:
    return f"d{round(demand_keep_fraction * 1000):04d}_c{round(capacity_fraction * 1000):04d}"


def _check_fraction(name: str, value: float) -> None:
    if not 0.0 < value <= 1.0:
        raise ValueError(f"{name} must lie in (0, 1], got {value}")


@dataclass(frozen=True)
class ScenarioSpec:
    demand_keep_fraction: float = 1.0
    capacity_fraction: float = 1.0
    scenario_id: str = ""
    seed: int = DEFAULT_SAMPLING_SEED

    def __post_init__(self):
        _check_fraction("demand_keep_fraction", self.demand_keep_fraction)
        _check_fraction("capacity_fraction", self.capacity_fraction)
        if not self.scenario_id:
            object.__setattr__(self, "scenario_id", scenario_id(self.demand_keep_fraction, self.capacity_fraction))

    @property
    def is_baseline(self) -> bool:
        return self.demand_keep_fraction == 1.0 and self.capacity_fraction == 1.0


def default_grid(
    demand_levels: Sequence[float] = DEMAND_LEVELS,
    capacity_levels: Sequence[float] = CAPACITY_LEVELS,
    seed: int = DEFAULT_SAMPLING_SEED,
) -> list[ScenarioSpec]:
    """Baseline plus every (demand, reduced capacity) pair.

    With the default levels this is 1 + 5 x 4 = 21 scenarios. Full-capacity
    cells other than the baseline are included only when 1.0 is the sole
    capacity level.
    """
    specs = [ScenarioSpec(1.0, 1.0, seed=seed)] if 1.0 in demand_levels and 1.0 in capacity_levels else []
    reduced = [c for c in capacity_levels if c != 1.0] or list(capacity_levels)
    for d in demand_levels:
        for c in reduced:
            if d == 1.0 and c == 1.0:
                continue
            specs.append(ScenarioSpec(d, c, seed=seed))
    return specs


# ---------------------------------------------------------------------------
# input transformations


def reduce_demand(demand: DemandSet, keep_fraction: float, seed: int = DEFAULT_SAMPLING_SEED) -> DemandSet:
    """Keep floor(keep_fraction * N) persons, uniformly at random, with all their requests.

    The persons are a prefix of one seeded permutation, so for a fixed seed
    the retained sets are nested across keep fractions.
    """
    _check_fraction("keep_fraction", keep_fraction)
    persons = demand.persons
    n_keep = math.floor(keep_fraction * len(persons) + 1e-9)
    if n_keep == len(persons):
        return demand
    order = np.random.default_rng(seed).permutation(len(persons))
    kept = {persons[i] for i in order[:n_keep]}
    return DemandSet(tuple(r for r in demand.requests if r.person_id in kept))


def scale_capacities(network: TransitNetwork, capacity_fraction: float) -> TransitNetwork:
    """Every trip capacity becomes max(1, floor(capacity * fraction))."""
    _check_fraction("capacity_fraction", capacity_fraction)
    if capacity_fraction == 1.0:
        return network
    trips = [
        replace(t, capacity=max(1, math.floor(t.capacity * capacity_fraction + 1e-9)))
        for t in network.trips.values()
    ]
    return TransitNetwork.build(network.stops.values(), network.routes.values(), trips, network.transfers)


def pmax_for_capacity(capacity_fraction: float, *, interpolate: bool = False) -> float:
    """Maximum transmission probability for a capacity level.

    Only the tabulated levels are accepted unless ``interpolate`` is set, in
    which case values between keys are linear and values below 0.5 follow
    the 0.5-0.7 slope (an extrapolation, not a measured value).
    """
    for key, value in PMAX_TABLE.items():
        if math.isclose(capacity_fraction, key, abs_tol=1e-12):
            return value
    if not interpolate:
        keys = ", ".join(f"{k:g}->{v:g}" for k, v in sorted(PMAX_TABLE.items()))
        raise UnmappedCapacityFraction(
            f"capacity fraction {capacity_fraction:g} has no P_max entry (table: {keys}); "
            "pass --interpolate-pmax to interpolate"
        )
    _check_fraction("capacity_fraction", capacity_fraction)
    keys = sorted(PMAX_TABLE)
    i = min(max(bisect.bisect_left(keys, capacity_fraction), 1), len(keys) - 1)
    x0, x1 = keys[i - 1], keys[i]
    y0, y1 = PMAX_TABLE[x0], PMAX_TABLE[x1]
    value = y0 + (y1 - y0) * (capacity_fraction - x0) / (x1 - x0)
    logger.warning("P_max for capacity %.3f interpolated to %.5f", capacity_fraction, value)
    return min(max(value, 0.0), 1.0)


# ---------------------------------------------------------------------------
# single scenario


@dataclass
class ScenarioArtifacts:
    network: TransitNetwork
    demand: DemandSet
    assignment: AssignmentResult
    contacts: ContactNetwork
    estimates: InfectionEstimates


@dataclass(frozen=True)
class ScenarioReport:
    spec: ScenarioSpec
    stats: NetworkStats
    stranded: int
    global_rate: float
    endangered: int
    route_risks: tuple[analysis.RouteRisk, ...]
    trip_risks: tuple[analysis.TripRisk, ...]
    config: dict
    artifacts: ScenarioArtifacts | None = field(default=None, compare=False, repr=False)

    def summary(self) -> dict:
        return {
            "scenario": asdict(self.spec),
            "stats": self.stats.as_dict(),
            "stranded": self.stranded,
            "global_rate": self.global_rate,
            "endangered": self.endangered,
        }

    def write(self, out_dir: str | Path, top_routes: int = analysis.DEFAULT_TOP_ROUTES) -> list[Path]:
        """Per-scenario artifacts. Every directory carries config.json."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = [analysis.write_config_echo(self.config, out)]
        write_stats(self.stats, out / "stats.json", self.config)
        files.append(out / "stats.json")
        files.append(analysis.write_trip_risks(self.trip_risks, out / "trip_risk.csv"))
        files.append(analysis.write_route_risks(self.route_risks[:top_routes], out / "route_risk.csv"))
        art = self.artifacts
        if art is not None:
            files.append(write_trajectories(art.assignment, out / "trajectories.csv"))
            files.append(write_stranded(art.assignment, out / "stranded.csv"))
            files.append(write_edges(art.contacts, out / "contact_edges.csv"))
            for name, rows in temporal_histograms(art.contacts).items():
                files.append(write_histogram(rows, out / f"{name}.csv"))
            files.append(write_histogram(clique_histogram(art.contacts), out / "clique_hist.csv"))
            files.append(write_estimates(art.estimates, out / "infection_estimates.csv"))
            params = TransmissionParams(self.config["p_max"], self.config["epidemic"]["d_max"])
            epi_cfg = EpiConfig(**{k: v for k, v in self.config["epidemic"].items() if k != "d_max"})
            summary = epi_summary(art.estimates, epi_cfg, params)
            summary["config"] = self.config
            files.append(write_summary(summary, out / "epi_summary.json"))
        return files


def scenario_config(
    spec: ScenarioSpec,
    assign: AssignmentParams,
    epi: EpiConfig,
    d_max: float,
    p_max: float,
    extra: Mapping | None = None,
) -> dict:
    cfg = {
        "scenario": asdict(spec),
        "assignment": asdict(assign),
        "epidemic": {**asdict(epi), "d_max": d_max},
        "p_max": p_max,
    }
    if extra:
        cfg["run"] = dict(extra)
    return cfg


def run_scenario(
    spec: ScenarioSpec,
    base_network: TransitNetwork,
    base_demand: DemandSet,
    epi_config: EpiConfig,
    *,
    assign: AssignmentParams = AssignmentParams(),
    d_max: float = DEFAULT_D_MAX,
    interpolate_pmax: bool = False,
    candidates: Mapping[TripRequest, Sequence[CandidatePath]] | None = None,
    workers: int | None = None,
    keep_artifacts: bool = False,
    extra_config: Mapping | None = None,
    min_passengers: int = analysis.DEFAULT_MIN_PASSENGERS,
    top_trips: int = analysis.DEFAULT_TOP_TRIPS,
) -> ScenarioReport:
    """reduce demand -> scale capacities -> load -> contacts -> weights -> epidemic -> rankings."""
    try:
        p_max = pmax_for_capacity(spec.capacity_fraction, interpolate=interpolate_pmax)
        params = TransmissionParams(p_max, d_max)
        demand = reduce_demand(base_demand, spec.demand_keep_fraction, spec.seed)
        network = scale_capacities(base_network, spec.capacity_fraction)
        result = simulate_loading(
            network,
            demand,
            assign.theta,
            assign.k,
            assign.window,
            assign.seed,
            max_transfers=assign.max_transfers,
            candidates=candidates,
        )
        contacts = build_contact_network(result.trajectories)
        estimates = run_epidemic(weight_network(contacts, params), epi_config, workers=workers)
        routes = analysis.route_risk_ranking(
            result.trajectories, estimates, network.route_of, top_n=None, min_passengers=min_passengers
        )
        trips = analysis.trip_risk_ranking(result.trajectories, estimates, top_trips, min_passengers)
    except Exception as exc:
        raise ScenarioError(spec.scenario_id, exc) from exc

    report = ScenarioReport(
        spec=spec,
        stats=network_stats(contacts),
        stranded=stranded_count(result),
        global_rate=global_infection_rate(estimates),
        endangered=endangered_count(estimates),
        route_risks=tuple(routes),
        trip_risks=tuple(trips),
        config=scenario_config(spec, assign, epi_config, d_max, p_max, extra_config),
        artifacts=ScenarioArtifacts(network, demand, result, contacts, estimates) if keep_artifacts else None,
    )
    logger.info(
        "%s: %d nodes, %d edges, %d stranded, rate %.4f",
        spec.scenario_id,
        report.stats.n_nodes,
        report.stats.n_edges,
        report.stranded,
        report.global_rate,
    )
    return report


# ---------------------------------------------------------------------------
# grid


@dataclass
class GridResult:
    reports: list[ScenarioReport]
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def by_cell(self) -> dict[tuple[float, float], ScenarioReport]:
        return {(r.spec.demand_keep_fraction, r.spec.capacity_fraction): r for r in self.reports}


def run_grid(
    specs: Sequence[ScenarioSpec],
    base_network: TransitNetwork,
    base_demand: DemandSet,
    epi_config: EpiConfig,
    *,
    assign: AssignmentParams = AssignmentParams(),
    d_max: float = DEFAULT_D_MAX,
    interpolate_pmax: bool = False,
    workers: int | None = None,
    parallel_scenarios: int = 1,
    keep_artifacts: bool = False,
    extra_config: Mapping | None = None,
    min_passengers: int = analysis.DEFAULT_MIN_PASSENGERS,
) -> GridResult:
    """Run every spec; a failing scenario is recorded and the others still run.

    Candidate paths do not depend on capacities or on who else travels, so
    they are enumerated once for the base demand and shared by all cells.
    """
    if not specs:
        raise ValueError("empty scenario list")
    table = candidate_table(base_network, base_demand, assign.window, assign.k, max_transfers=assign.max_transfers)

    def one(spec: ScenarioSpec) -> ScenarioReport | ScenarioError:
        try:
            return run_scenario(
                spec,
                base_network,
                base_demand,
                epi_config,
                assign=assign,
                d_max=d_max,
                interpolate_pmax=interpolate_pmax,
                candidates=table,
                workers=workers,
                keep_artifacts=keep_artifacts,
                extra_config=extra_config,
                min_passengers=min_passengers,
            )
        except ScenarioError as exc:
            logger.error("%s", exc)
            return exc

    if parallel_scenarios > 1:
        with ThreadPoolExecutor(max_workers=parallel_scenarios) as pool:
            outcomes = list(pool.map(one, specs))
    else:
        outcomes = [one(s) for s in specs]
    grid = GridResult([])
    for spec, out in zip(specs, outcomes):
        if isinstance(out, ScenarioError):
            grid.failures[spec.scenario_id] = str(out.cause)
        else:
            grid.reports.append(out)
    return grid


def grid_axes(reports: Sequence[ScenarioReport]) -> tuple[list[float], list[float]]:
    demand = sorted({r.spec.demand_keep_fraction for r in reports}, reverse=True)
    capacity = sorted({r.spec.capacity_fraction for r in reports}, reverse=True)
    return demand, capacity


def grid_table(reports: Sequence[ScenarioReport], metric: str) -> tuple[list[float], list[float], list[list[float | None]]]:
    """Rows = demand levels (high to low), columns = capacity levels (high to low)."""
    demand, capacity = grid_axes(reports)
    cells = {(r.spec.demand_keep_fraction, r.spec.capacity_fraction): getattr(r, metric) for r in reports}
    return demand, capacity, [[cells.get((d, c)) for c in capacity] for d in demand]
