"""Run configuration: one YAML file, defaults resolved, validated before any heavy work."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .analysis import DEFAULT_MIN_PASSENGERS, DEFAULT_TOP_ROUTES, DEFAULT_TOP_TRIPS
from .assignment import DEFAULT_MAX_TRANSFERS, DEFAULT_PATHS, DEFAULT_THETA, AssignmentParams
from .epidemic import DEFAULT_D_MAX, EpiConfig, TransmissionParams
from .errors import ConfigError, UnmappedCapacityFraction
from .scenario import CAPACITY_LEVELS, DEFAULT_SAMPLING_SEED, DEMAND_LEVELS, ScenarioSpec, default_grid, pmax_for_capacity


@dataclass
class PathsSection:
    feed: str = "feed"
    demand: str = "demand.csv"
    out_dir: str = "out"


@dataclass
class AssignmentSection:
    theta: float = DEFAULT_THETA
    paths: int = DEFAULT_PATHS
    window_min: float = 30.0
    seed: int = 0
    max_transfers: int = DEFAULT_MAX_TRANSFERS

    def params(self) -> AssignmentParams:
        return AssignmentParams(self.theta, self.paths, int(round(self.window_min * 60)), self.seed, self.max_transfers)


@dataclass
class EpidemicSection:
    n_seeds: int = 100
    horizon: int = 5
    infectious_period: int = 5
    n_runs: int = 100_000
    d_max: float = DEFAULT_D_MAX
    master_seed: int = 20240101
    workers: int | None = None

    def config(self) -> EpiConfig:
        return EpiConfig(self.n_seeds, self.horizon, self.infectious_period, self.n_runs, self.master_seed)


@dataclass
class ScenarioSection:
    demand_levels: list[float] = field(default_factory=lambda: list(DEMAND_LEVELS))
    capacity_levels: list[float] = field(default_factory=lambda: list(CAPACITY_LEVELS))
    sampling_seed: int = DEFAULT_SAMPLING_SEED
    interpolate_pmax: bool = False

    def specs(self) -> list[ScenarioSpec]:
        return default_grid(self.demand_levels, self.capacity_levels, self.sampling_seed)


@dataclass
class AnalysisSection:
    min_passengers: int = DEFAULT_MIN_PASSENGERS
    top_trips: int = DEFAULT_TOP_TRIPS
    top_routes: int = DEFAULT_TOP_ROUTES
    per_incidence: bool = False


@dataclass
class RunConfig:
    paths: PathsSection = field(default_factory=PathsSection)
    assignment: AssignmentSection = field(default_factory=AssignmentSection)
    epidemic: EpidemicSection = field(default_factory=EpidemicSection)
    scenarios: ScenarioSection = field(default_factory=ScenarioSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    base_dir: Path | None = field(default=None, repr=False, compare=False)

    def resolve(self, name: str) -> Path:
        """``paths.<name>`` resolved against the directory of the config file."""
        value = Path(getattr(self.paths, name))
        if self.base_dir is not None and not value.is_absolute():
            return self.base_dir / value
        return value

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        # thread count does not change results; keep it out of the echo so
        # outputs hash the same on any machine
        d["epidemic"].pop("workers")
        return d

    def validate(self) -> "RunConfig":
        """Raise ConfigError naming the first bad field."""
        checks = [
            ("assignment.theta", self.assignment.theta > 0, "must be positive"),
            ("assignment.paths", self.assignment.paths >= 1, "must be >= 1"),
            ("assignment.window_min", self.assignment.window_min > 0, "must be positive"),
            ("assignment.max_transfers", self.assignment.max_transfers >= 0, "must be >= 0"),
            ("epidemic.n_seeds", self.epidemic.n_seeds >= 1, "must be >= 1"),
            ("epidemic.horizon", self.epidemic.horizon >= 1, "must be >= 1"),
            ("epidemic.infectious_period", self.epidemic.infectious_period >= 0, "must be >= 0"),
            ("epidemic.n_runs", self.epidemic.n_runs >= 1, "must be >= 1"),
            ("epidemic.d_max", self.epidemic.d_max > 0, "must be positive"),
            ("epidemic.workers", self.epidemic.workers is None or self.epidemic.workers >= 1, "must be >= 1"),
            ("scenarios.demand_levels", len(self.scenarios.demand_levels) > 0, "must not be empty"),
            ("scenarios.capacity_levels", len(self.scenarios.capacity_levels) > 0, "must not be empty"),
            ("analysis.min_passengers", self.analysis.min_passengers >= 1, "must be >= 1"),
            ("analysis.top_trips", self.analysis.top_trips >= 1, "must be >= 1"),
            ("analysis.top_routes", self.analysis.top_routes >= 1, "must be >= 1"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(name, msg)
        for name, levels in (
            ("scenarios.demand_levels", self.scenarios.demand_levels),
            ("scenarios.capacity_levels", self.scenarios.capacity_levels),
        ):
            for x in levels:
                if not 0 < x <= 1:
                    raise ConfigError(name, f"{x} is outside (0, 1]")
        for c in self.scenarios.capacity_levels:
            try:
                pmax_for_capacity(c, interpolate=self.scenarios.interpolate_pmax)
            except UnmappedCapacityFraction as exc:
                raise ConfigError("scenarios.capacity_levels", str(exc)) from None
        TransmissionParams(pmax_for_capacity(1.0), self.epidemic.d_max)
        return self


_SECTION_TYPES = {
    "paths": PathsSection,
    "assignment": AssignmentSection,
    "epidemic": EpidemicSection,
    "scenarios": ScenarioSection,
    "analysis": AnalysisSection,
}


def _coerce(name: str, default: Any, value: Any) -> Any:
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int) or (default is None and name.endswith("workers")):
            if value is None and default is None:
                return None
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, list):
            return [float(x) for x in value]
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"bad value {value!r}") from None


def config_from_dict(data: dict[str, Any] | None) -> RunConfig:
    data = data or {}
    cfg = RunConfig()
    for section, values in data.items():
        if section not in _SECTION_TYPES:
            raise ConfigError(section, "unknown section")
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError(section, "must be a mapping")
        target = getattr(cfg, section)
        known = {f.name for f in fields(_SECTION_TYPES[section])}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"{section}.{key}", "unknown field")
            setattr(target, key, _coerce(f"{section}.{key}", getattr(target, key), value))
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"{path} is not valid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config", f"{path} must hold a mapping")
    cfg = config_from_dict(data)
    cfg.base_dir = path.parent
    return cfg


def dump_config(cfg: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    data = asdict(cfg)
    data.pop("base_dir")
    path.write_text(yaml.safe_dump(data, sort_keys=True), encoding="utf-8")
    return path
