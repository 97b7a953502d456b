"""Exception hierarchy shared by the pipeline stages."""

from __future__ import annotations


class TransitContagionError(Exception):
    pass


class FeedError(TransitContagionError):
    """A transit feed file could not be turned into a valid network."""

    def __init__(self, message: str, file: str | None = None, line: int | None = None):
        self.file = file
        self.line = line
        where = ""
        if file is not None:
            where = f"{file}:{line}: " if line is not None else f"{file}: "
        super().__init__(where + message)


class FeedMissingFile(FeedError):
    pass


class FeedReferenceError(FeedError):
    pass


class FeedOrderError(FeedError):
    pass


class FeedValueError(FeedError):
    pass


class DemandError(TransitContagionError):
    def __init__(self, message: str, line: int | None = None, file: str | None = None):
        self.line = line
        self.file = file
        where = ""
        if file is not None:
            where += f"{file}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class DemandParseError(DemandError):
    pass


class DemandDegenerateTrip(DemandError):
    pass


class UnknownStop(TransitContagionError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class EmptyChoiceSet(TransitContagionError, ValueError):
    pass


class DifferentTrips(TransitContagionError, ValueError):
    pass


class SeedCountExceedsNodes(TransitContagionError, ValueError):
    pass


class UnmappedCapacityFraction(TransitContagionError, ValueError):
    pass


class UnknownRoute(TransitContagionError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class InfeasibleParams(TransitContagionError, ValueError):
    pass


class ScenarioError(TransitContagionError):
    """Wraps a pipeline failure with the scenario it happened in."""

    def __init__(self, scenario_id: str, cause: BaseException):
        self.scenario_id = scenario_id
        self.cause = cause
        super().__init__(f"scenario {scenario_id}: {cause}")


class ConfigError(TransitContagionError, ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
