"""
Command line driver.

    transit-contagion synth --out city/
    transit-contagion validate --config run.yaml
    transit-contagion run --config run.yaml

Single-scenario steps (ingest, assign, build-net, simulate, report) read and
write files in the output directory so they can be chained by hand; ``grid``
runs the scenario grid and ``run`` does everything.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analysis
from .assignment import read_trajectories, simulate_loading, write_stranded, write_trajectories
from .config import RunConfig, load_config
from .contacts import (
    build_contact_network,
    clique_histogram,
    network_stats,
    temporal_histograms,
    write_edges,
    write_histogram,
    write_stats,
)
from .epidemic import (
    TransmissionParams,
    epi_summary,
    read_estimates,
    run_epidemic,
    weight_network,
    write_estimates,
    write_summary,
)
from .errors import ConfigError, TransitContagionError
from .feed import check_demand_stops, parse_demand, parse_transit_feed, validate_feed
from .scenario import ScenarioSpec, pmax_for_capacity, reduce_demand, run_grid, scale_capacities
from .synthgen import CityParams, generate_city, write_city

logger = logging.getLogger("transit_contagion")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_PARTIAL = 3


def _add_common(p: argparse.ArgumentParser, *, grid: bool = False) -> None:
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--feed", help="feed directory")
    p.add_argument("--demand-file", help="demand CSV")
    p.add_argument("--out", help="output directory")
    p.add_argument("--theta", type=float, help="logit dispersion per utility-minute")
    p.add_argument("--paths", type=int, help="candidate paths per request (K)")
    p.add_argument("--window-min", type=float, help="arrival window in minutes")
    p.add_argument("--seed", type=int, help="assignment choice seed")
    p.add_argument("--n-runs", type=int, help="Monte Carlo runs (k)")
    p.add_argument("--n-seeds", type=int, help="initially infected passengers per run")
    p.add_argument("--master-seed", type=int, help="epidemic master seed")
    p.add_argument("--d-max", type=float, help="contact duration (s) at which transmission saturates")
    p.add_argument("--workers", type=int, help="epidemic worker threads")
    p.add_argument("--interpolate-pmax", action="store_true", help="interpolate P_max between tabulated capacity levels")
    nargs = "+" if grid else None
    p.add_argument("--demand", type=float, nargs=nargs, help="demand keep fraction(s)")
    p.add_argument("--capacity", type=float, nargs=nargs, help="capacity fraction(s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transit-contagion", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, text in (
        ("validate", "check config and inputs without simulating"),
        ("ingest", "parse and validate the feed and demand"),
        ("assign", "load passengers onto vehicles for one scenario"),
        ("build-net", "build the contact network from trajectories.csv"),
        ("simulate", "run the epidemic on the contact network"),
        ("report", "rank critical trips and routes and write the manifest"),
    ):
        _add_common(sub.add_parser(name, help=text))
    for name, text in (("grid", "run the demand x capacity scenario grid"), ("run", "ingest, grid and report")):
        _add_common(sub.add_parser(name, help=text), grid=True)

    synth = sub.add_parser("synth", help="generate a synthetic city")
    synth.add_argument("--out", required=True)
    synth.add_argument("--params", help="YAML file with generator parameters")
    synth.add_argument("--stops", type=int)
    synth.add_argument("--routes", type=int)
    synth.add_argument("--trips-per-route", type=int)
    synth.add_argument("--persons", type=int)
    synth.add_argument("--capacity", type=int, dest="default_capacity")
    synth.add_argument("--seed", type=int)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {
        ("paths", "feed"): args.feed,
        ("paths", "demand"): args.demand_file,
        ("paths", "out_dir"): args.out,
        ("assignment", "theta"): args.theta,
        ("assignment", "paths"): args.paths,
        ("assignment", "window_min"): args.window_min,
        ("assignment", "seed"): args.seed,
        ("epidemic", "n_runs"): args.n_runs,
        ("epidemic", "n_seeds"): args.n_seeds,
        ("epidemic", "master_seed"): args.master_seed,
        ("epidemic", "d_max"): args.d_max,
        ("epidemic", "workers"): args.workers,
    }
    for (section, key), value in overrides.items():
        if value is not None:
            target = getattr(cfg, section)
            if section == "paths":
                # command line paths are relative to the working directory
                value = str(Path(value).resolve())
            setattr(target, key, value)
    if args.interpolate_pmax:
        cfg.scenarios.interpolate_pmax = True
    if isinstance(args.demand, list):
        cfg.scenarios.demand_levels = args.demand
    if isinstance(args.capacity, list):
        cfg.scenarios.capacity_levels = args.capacity
    return cfg.validate()


def _single_spec(args: argparse.Namespace, cfg: RunConfig) -> ScenarioSpec:
    demand = args.demand if args.demand is not None else 1.0
    capacity = args.capacity if args.capacity is not None else 1.0
    try:
        spec = ScenarioSpec(demand, capacity, seed=cfg.scenarios.sampling_seed)
    except ValueError as exc:
        raise ConfigError("--demand/--capacity", str(exc)) from None
    try:
        pmax_for_capacity(capacity, interpolate=cfg.scenarios.interpolate_pmax)
    except TransitContagionError as exc:
        raise ConfigError("--capacity", str(exc)) from None
    return spec


def _echo(cfg: RunConfig, command: str, spec: ScenarioSpec | None = None) -> dict:
    d = {"command": command, **cfg.as_dict()}
    if spec is not None:
        d["scenario"] = {
            "scenario_id": spec.scenario_id,
            "demand_keep_fraction": spec.demand_keep_fraction,
            "capacity_fraction": spec.capacity_fraction,
            "seed": spec.seed,
            "p_max": pmax_for_capacity(spec.capacity_fraction, interpolate=cfg.scenarios.interpolate_pmax),
        }
    return d


def _load_inputs(cfg: RunConfig):
    network = parse_transit_feed(cfg.resolve("feed"))
    demand = parse_demand(cfg.resolve("demand"))
    unknown = check_demand_stops(demand, network)
    if unknown:
        raise TransitContagionError(f"demand references unknown stops: {', '.join(unknown[:10])}")
    return network, demand


def _out_dir(cfg: RunConfig) -> Path:
    out = cfg.resolve("out_dir")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args, cfg: RunConfig) -> int:
    network, demand = _load_inputs(cfg)
    if args.demand is not None or args.capacity is not None:
        _single_spec(args, cfg)
    report = validate_feed(network)
    for line in report.lines():
        logger.warning("%s", line)
    print(f"ok: {len(network.trips)} trips, {len(demand)} requests from {demand.person_count} persons")
    return EXIT_OK


def cmd_ingest(args, cfg: RunConfig) -> int:
    network, demand = _load_inputs(cfg)
    report = validate_feed(network)
    for line in report.lines():
        logger.warning("%s", line)
    out = _out_dir(cfg)
    payload = {
        "counts": {**network.counts(), "requests": len(demand), "persons": demand.person_count},
        "validation": report.lines(),
        "config": _echo(cfg, "ingest"),
    }
    (out / "ingest.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_assign(args, cfg: RunConfig) -> int:
    spec = _single_spec(args, cfg)
    network, demand = _load_inputs(cfg)
    network = scale_capacities(network, spec.capacity_fraction)
    demand = reduce_demand(demand, spec.demand_keep_fraction, spec.seed)
    a = cfg.assignment.params()
    result = simulate_loading(network, demand, a.theta, a.k, a.window, a.seed, max_transfers=a.max_transfers)
    out = _out_dir(cfg)
    write_trajectories(result, out / "trajectories.csv")
    write_stranded(result, out / "stranded.csv")
    analysis.write_config_echo(_echo(cfg, "assign", spec), out)
    print(f"{len(result.trajectories)} trajectories, {len({s.person_id for s in result.stranded})} stranded")
    return EXIT_OK


def _contacts_from_out(out: Path):
    path = out / "trajectories.csv"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run `assign` first")
    return build_contact_network(read_trajectories(path))


def cmd_build_net(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    net = _contacts_from_out(out)
    echo = _echo(cfg, "build-net")
    write_edges(net, out / "contact_edges.csv")
    write_stats(network_stats(net), out / "stats.json", echo)
    for name, rows in temporal_histograms(net).items():
        write_histogram(rows, out / f"{name}.csv")
    write_histogram(clique_histogram(net), out / "clique_hist.csv")
    print(f"{net.n_nodes} nodes, {net.n_edges} edges")
    return EXIT_OK


def cmd_simulate(args, cfg: RunConfig) -> int:
    spec = _single_spec(args, cfg)
    out = _out_dir(cfg)
    net = _contacts_from_out(out)
    params = TransmissionParams(
        pmax_for_capacity(spec.capacity_fraction, interpolate=cfg.scenarios.interpolate_pmax), cfg.epidemic.d_max
    )
    epi = cfg.epidemic.config()
    est = run_epidemic(weight_network(net, params), epi, workers=cfg.epidemic.workers)
    write_estimates(est, out / "infection_estimates.csv")
    summary = epi_summary(est, epi, params)
    summary["config"] = {**_echo(cfg, "simulate", spec), **summary["config"]}
    write_summary(summary, out / "epi_summary.json")
    print(f"global rate {summary['global_rate']:.4f}, endangered {summary['endangered_count']}")
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    network = parse_transit_feed(cfg.resolve("feed"))
    est_path = out / "infection_estimates.csv"
    if not est_path.exists():
        raise FileNotFoundError(f"{est_path} not found; run `simulate` first")
    trajectories = read_trajectories(out / "trajectories.csv", network)
    prob = read_estimates(est_path)
    a = cfg.analysis
    trips = analysis.trip_risk_ranking(trajectories, prob, a.top_trips, a.min_passengers)
    routes = analysis.route_risk_ranking(
        trajectories, prob, network.route_of, a.top_routes, a.min_passengers, per_incidence=a.per_incidence
    )
    analysis.write_trip_risks(trips, out / "trip_risk.csv")
    analysis.write_route_risks(routes, out / "route_risk.csv")
    analysis.write_manifest(out, _echo(cfg, "report"))
    return EXIT_OK


def cmd_grid(args, cfg: RunConfig) -> int:
    network, demand = _load_inputs(cfg)
    specs = cfg.scenarios.specs()
    grid = run_grid(
        specs,
        network,
        demand,
        cfg.epidemic.config(),
        assign=cfg.assignment.params(),
        d_max=cfg.epidemic.d_max,
        interpolate_pmax=cfg.scenarios.interpolate_pmax,
        workers=cfg.epidemic.workers,
        keep_artifacts=True,
        extra_config={"command": args.command},
        min_passengers=cfg.analysis.min_passengers,
    )
    out = _out_dir(cfg)
    analysis.emit_reports(
        grid.reports, out, _echo(cfg, args.command), failures=grid.failures, top_routes=cfg.analysis.top_routes
    )
    for r in sorted(grid.reports, key=lambda r: (-r.spec.demand_keep_fraction, -r.spec.capacity_fraction)):
        print(
            f"{r.spec.scenario_id}: nodes={r.stats.n_nodes} edges={r.stats.n_edges} stranded={r.stranded} "
            f"rate={r.global_rate:.4f} endangered={r.endangered}"
        )
    for sid, msg in grid.failures.items():
        print(f"{sid}: FAILED {msg}", file=sys.stderr)
    return EXIT_OK if grid.ok else EXIT_PARTIAL


def cmd_run(args, cfg: RunConfig) -> int:
    network, _ = _load_inputs(cfg)
    for line in validate_feed(network).lines():
        logger.warning("%s", line)
    return cmd_grid(args, cfg)


def cmd_synth(args) -> int:
    data = {}
    if args.params:
        import yaml

        data = yaml.safe_load(Path(args.params).read_text(encoding="utf-8")) or {}
    for key, attr in (
        ("n_stops", "stops"),
        ("n_routes", "routes"),
        ("trips_per_route", "trips_per_route"),
        ("n_persons", "persons"),
        ("default_capacity", "default_capacity"),
        ("seed", "seed"),
    ):
        value = getattr(args, attr)
        if value is not None:
            data[key] = value
    try:
        params = CityParams(**data)
    except TypeError as exc:
        raise ConfigError("params", str(exc)) from None
    city = generate_city(params)
    paths = write_city(city, args.out)
    counts = city.manifest["counts"]
    print(f"{counts['trips']} trips, {counts['requests']} requests -> {paths['feed'].parent}")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "ingest": cmd_ingest,
    "assign": cmd_assign,
    "build-net": cmd_build_net,
    "simulate": cmd_simulate,
    "report": cmd_report,
    "grid": cmd_grid,
    "run": cmd_run,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "synth":
            return cmd_synth(args)
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TransitContagionError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
