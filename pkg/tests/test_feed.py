import filecmp

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from transit_contagion.errors import (
    DemandDegenerateTrip,
    DemandParseError,
    FeedMissingFile,
    FeedOrderError,
    FeedReferenceError,
    FeedValueError,
)
from transit_contagion.feed import (
    DemandSet,
    Mode,
    TripRequest,
    format_time,
    parse_demand,
    parse_time,
    parse_transit_feed,
    validate_feed,
    write_demand,
    write_feed,
)
from transit_contagion.synthgen import CityParams, generate_city, write_city

from conftest import make_network


def _write(path, text):
    path.write_text(text.lstrip(), encoding="utf-8")


def test_minimal_feed(minimal_feed):
    net = parse_transit_feed(minimal_feed)
    assert len(net.trips) == 1
    assert net.stop_index == {"A": ("T1",), "B": ("T1",)}
    assert net.trips["T1"].capacity == 40


def test_unknown_stop_reports_file_and_line(minimal_feed):
    with open(minimal_feed / "stop_times.txt", "a") as fh:
        fh.write("T1,01:20:00,01:20:00,X,3\n")
    with pytest.raises(FeedReferenceError) as exc:
        parse_transit_feed(minimal_feed)
    assert exc.value.file == "stop_times.txt"
    assert exc.value.line == 4
    assert "'X'" in str(exc.value)


def test_missing_file(minimal_feed):
    (minimal_feed / "trips.txt").unlink()
    with pytest.raises(FeedMissingFile, match="trips.txt"):
        parse_transit_feed(minimal_feed)


def test_optional_files_fall_back_to_mode_capacity(minimal_feed):
    (minimal_feed / "vehicles.txt").unlink()
    (minimal_feed / "transfers.txt").unlink()
    net = parse_transit_feed(minimal_feed)
    assert net.trips["T1"].capacity == 48
    assert net.transfers == ()


def test_non_monotone_stop_times(minimal_feed):
    _write(
        minimal_feed / "stop_times.txt",
        """
trip_id,arrival_time,departure_time,stop_id,stop_sequence
T1,01:00:00,01:00:00,A,1
T1,00:59:00,00:59:00,B,2
""",
    )
    with pytest.raises(FeedOrderError):
        parse_transit_feed(minimal_feed)


def test_departure_before_arrival(minimal_feed):
    _write(
        minimal_feed / "stop_times.txt",
        """
trip_id,arrival_time,departure_time,stop_id,stop_sequence
T1,01:00:00,00:58:00,A,1
T1,01:10:00,01:10:00,B,2
""",
    )
    with pytest.raises(FeedOrderError):
        parse_transit_feed(minimal_feed)


def test_stop_times_sorted_by_sequence_not_file_order(minimal_feed):
    _write(
        minimal_feed / "stop_times.txt",
        """
trip_id,arrival_time,departure_time,stop_id,stop_sequence
T1,01:10:00,01:10:00,B,7
T1,01:00:00,01:00:00,A,2
""",
    )
    net = parse_transit_feed(minimal_feed)
    assert [s.stop_id for s in net.trips["T1"].stop_times] == ["A", "B"]


def test_zero_capacity_rejected(minimal_feed):
    _write(minimal_feed / "vehicles.txt", "trip_id,capacity\nT1,0\n")
    with pytest.raises(FeedValueError) as exc:
        parse_transit_feed(minimal_feed)
    assert exc.value.line == 2


def test_missing_column_fatal_unknown_column_ignored(minimal_feed):
    _write(minimal_feed / "routes.txt", "route_id,agency_id,route_type,route_color\nr_T1,a,3,FF0000\n")
    assert parse_transit_feed(minimal_feed).routes["r_T1"].mode is Mode.BUS
    _write(minimal_feed / "routes.txt", "route_id,agency_id\nr_T1,a\n")
    with pytest.raises(FeedValueError, match="route_type"):
        parse_transit_feed(minimal_feed)


def test_bad_coordinates(minimal_feed):
    _write(minimal_feed / "stops.txt", "stop_id,stop_name,stop_lat,stop_lon\nA,a,91.0,0\nB,b,0,0\n")
    with pytest.raises(FeedValueError):
        parse_transit_feed(minimal_feed)


def test_transfer_to_itself_rejected(minimal_feed):
    _write(minimal_feed / "transfers.txt", "from_stop_id,to_stop_id,min_transfer_time\nA,A,60\n")
    with pytest.raises(FeedValueError):
        parse_transit_feed(minimal_feed)


def test_synthgen_feed_round_trip(tmp_path):
    city = generate_city(CityParams(n_stops=9, n_routes=5, trips_per_route=10, n_persons=20))
    paths = write_city(city, tmp_path)
    net = parse_transit_feed(paths["feed"])
    assert len(net.trips) == 50 == city.manifest["counts"]["trips"]
    assert net == city.network
    assert validate_feed(net).is_clean


def test_canonical_serialization_is_byte_identical(tmp_path, small_city):
    write_feed(small_city.network, tmp_path / "a")
    write_feed(parse_transit_feed(tmp_path / "a"), tmp_path / "b")
    names = [p.name for p in (tmp_path / "a").iterdir()]
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert not mismatch and not errors and len(match) == 6


def test_parse_is_deterministic(minimal_feed):
    assert parse_transit_feed(minimal_feed) == parse_transit_feed(minimal_feed)


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(
    n_stops=st.integers(2, 20),
    n_routes=st.integers(1, 6),
    trips=st.integers(1, 6),
    seed=st.integers(0, 2**16),
)
def test_generated_feeds_reference_only_known_stops(tmp_path_factory, n_stops, n_routes, trips, seed):
    city = generate_city(CityParams(n_stops=n_stops, n_routes=n_routes, trips_per_route=trips, n_persons=3, seed=seed))
    out = tmp_path_factory.mktemp("feed")
    net = parse_transit_feed(write_city(city, out)["feed"])
    for trip in net.trips.values():
        for stop_time in trip.stop_times:
            assert stop_time.stop_id in net.stops
    assert len(validate_feed(net).degenerate_capacity) == 0


# ---------------------------------------------------------------------------
# demand


def test_parse_demand_counts(tmp_path):
    p = tmp_path / "demand.csv"
    _write(
        p,
        """
person_id,origin_stop,destination_stop,preferred_arrival
p2,A,B,08:00:00
p1,A,B,07:30:00
p1,B,A,25:10:00
""",
    )
    demand = parse_demand(p)
    assert len(demand) == 3
    assert demand.person_count == 2
    assert [r.preferred_arrival for r in demand] == [27000, 28800, 90600]


@pytest.mark.parametrize("text,seconds", [("25:10:00", 90600), ("7:05:09", 25509), ("00:00:00", 0)])
def test_parse_time(text, seconds):
    assert parse_time(text) == seconds
    assert parse_time(format_time(seconds)) == seconds


@pytest.mark.parametrize("text", ["8:00", "08:61:00", "ab:00:00", "", "99:00:00"])
def test_parse_time_rejects(text):
    with pytest.raises(ValueError):
        parse_time(text)


def test_demand_malformed_time_has_line(tmp_path):
    p = tmp_path / "d.csv"
    _write(p, "person_id,origin_stop,destination_stop,preferred_arrival\np,A,B,08:00:00\np,A,B,8h\n")
    with pytest.raises(DemandParseError) as exc:
        parse_demand(p)
    assert exc.value.line == 3


def test_demand_degenerate_trip(tmp_path):
    p = tmp_path / "d.csv"
    _write(p, "person_id,origin_stop,destination_stop,preferred_arrival\np,A,A,08:00:00\n")
    with pytest.raises(DemandDegenerateTrip) as exc:
        parse_demand(p)
    assert exc.value.line == 2


def test_synthgen_demand_matches_manifest(tmp_path):
    city = generate_city(CityParams(n_stops=9, n_routes=3, trips_per_route=4, n_persons=250))
    paths = write_city(city, tmp_path)
    demand = parse_demand(paths["demand"])
    assert len(demand) == 500 == city.manifest["counts"]["requests"]
    assert demand.person_count == city.manifest["counts"]["persons"]
    assert demand == city.demand


def test_demand_round_trip(tmp_path):
    d = DemandSet.from_requests([TripRequest(90600, "x", "A", "B"), TripRequest(10, "y", "B", "A")])
    assert parse_demand(write_demand(d, tmp_path / "d.csv")) == d


# ---------------------------------------------------------------------------
# validation


def test_validate_clean(minimal_feed):
    report = validate_feed(parse_transit_feed(minimal_feed))
    assert report.is_clean and len(report) == 0 and report.lines() == []


def test_validate_flags_degenerate_capacity():
    net = make_network({"T1": [("A", 0, 0), ("B", 60, 60)]}, capacity=1)
    assert validate_feed(net).degenerate_capacity == ["T1"]


def test_validate_isolated_stop():
    net = make_network({"T1": [("A", 0, 0), ("B", 60, 60)]}, transfers=[("C", "A", 30)])
    report = validate_feed(net)
    assert report.unserved_stops == ["C"]
    assert report.unreachable_transfers == [("C", "A")]
