"""
Temporal contact multigraph.

Nodes are passengers with at least one completed trajectory; every pair of
passengers on the same vehicle trip with a positive-length common ride gets
one edge tagged with that trip and the [start, end) of the shared interval.
Pairs that meet on several trips get parallel edges.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .assignment import RideSegment, Trajectory
from .errors import DifferentTrips

DAY = 24 * 3600
START_BIN = 15 * 60
DURATION_BIN = 60


def overlap(a: RideSegment, b: RideSegment) -> tuple[int, int] | None:
    """Common ride interval of two segments on the same trip, if it has positive length."""
    if a.trip_id != b.trip_id:
        raise DifferentTrips(f"{a.trip_id!r} != {b.trip_id!r}")
    start = max(a.board_time, b.board_time)
    end = min(a.alight_time, b.alight_time)
    if end > start:
        return start, end
    return None


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ContactNetwork:
    """Edge-list multigraph plus a CSR adjacency over directed edge slots.

    Edge ``e`` joins node indices ``u[e] < v[e]``; ``nodes`` is sorted, so
    the index order is the person_id order. ``indptr``/``neighbors``/``slot_edge``
    list, for each node, its neighbors and the edge id behind each slot.
    """

    nodes: tuple[str, ...]
    u: np.ndarray
    v: np.ndarray
    trip: np.ndarray  # index into trip_ids
    t_start: np.ndarray
    t_end: np.ndarray
    trip_ids: tuple[str, ...]
    clique_sizes: np.ndarray
    indptr: np.ndarray
    neighbors: np.ndarray
    slot_edge: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return int(self.u.shape[0])

    @property
    def duration(self) -> np.ndarray:
        return self.t_end - self.t_start

    @cached_property
    def index(self) -> dict[str, int]:
        return {p: i for i, p in enumerate(self.nodes)}

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def adjacency(self, node: int) -> np.ndarray:
        return self.neighbors[self.indptr[node] : self.indptr[node + 1]]

    def edges(self) -> Iterable[tuple[str, str, str, int, int]]:
        for e in range(self.n_edges):
            yield (
                self.nodes[self.u[e]],
                self.nodes[self.v[e]],
                self.trip_ids[self.trip[e]],
                int(self.t_start[e]),
                int(self.t_end[e]),
            )

    def edge_multiset(self) -> list[tuple[str, str, str, int, int]]:
        return sorted(self.edges())


def csr_adjacency(n_nodes: int, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Symmetric CSR over directed slots; slots of a node are ordered by edge id."""
    m = u.shape[0]
    src = np.concatenate([u, v])
    dst = np.concatenate([v, u])
    eid = np.concatenate([np.arange(m), np.arange(m)])
    order = np.lexsort((eid, src))
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n_nodes), out=indptr[1:])
    return indptr, dst[order].astype(np.int64), eid[order].astype(np.int64)


def _trip_segments(trajectories: Iterable[Trajectory]) -> dict[str, list[tuple[str, RideSegment]]]:
    by_trip: dict[str, list[tuple[str, RideSegment]]] = defaultdict(list)
    for traj in trajectories:
        if not traj.completed:
            continue
        for seg in traj.segments:
            by_trip[seg.trip_id].append((traj.person_id, seg))
    return by_trip


def _sweep(riders: list[tuple[str, RideSegment]]) -> list[tuple[str, str, int, int]]:
    """All positive overlaps among the riders of one trip.

    Riders are taken in boarding order; anyone who alighted at or before the
    current boarding time leaves the active set, and the newcomer overlaps
    everyone still aboard.
    """
    riders = sorted(riders, key=lambda r: (r[1].board_time, r[1].alight_time, r[0]))
    active: list[tuple[int, str]] = []  # (alight_time, person)
    out = []
    for pid, seg in riders:
        b = seg.board_time
        active = [(al, p) for al, p in active if al > b]
        if seg.alight_time > b:
            for al, p in active:
                if p == pid:
                    continue
                x, y = (p, pid) if p < pid else (pid, p)
                out.append((x, y, b, min(al, seg.alight_time)))
            active.append((seg.alight_time, pid))
    return out


def segment_clique_sizes(trajectories: Iterable[Trajectory]) -> np.ndarray:
    """Onboard head-count of every (trip, consecutive-stop segment) carrying at least two riders."""
    sizes: list[int] = []
    by_trip = _trip_segments(trajectories)
    for tid in sorted(by_trip):
        riders = by_trip[tid]
        hi = max(seg.alight_seq for _, seg in riders)
        diff = np.zeros(hi + 1, dtype=np.int64)
        for _, seg in riders:
            diff[seg.board_seq] += 1
            diff[seg.alight_seq] -= 1
        onboard = np.cumsum(diff)[:-1]
        sizes.extend(int(c) for c in onboard if c >= 2)
    return np.asarray(sizes, dtype=np.int64)


def build_contact_network(trajectories: Sequence[Trajectory]) -> ContactNetwork:
    """Build the contact multigraph with one boarding/alighting sweep per vehicle trip."""
    trajectories = [t for t in trajectories if t.completed]
    nodes = tuple(sorted({t.person_id for t in trajectories}))
    index = {p: i for i, p in enumerate(nodes)}
    by_trip = _trip_segments(trajectories)
    trip_ids = tuple(sorted(by_trip))

    rows: list[tuple[int, int, int, int, int]] = []
    for ti, tid in enumerate(trip_ids):
        for x, y, s, e in _sweep(by_trip[tid]):
            rows.append((index[x], index[y], ti, s, e))
    rows.sort()
    if rows:
        arr = np.asarray(rows, dtype=np.int64)
    else:
        arr = np.zeros((0, 5), dtype=np.int64)
    u, v, trip, t_start, t_end = (np.ascontiguousarray(arr[:, i]) for i in range(5))
    indptr, neighbors, slot_edge = csr_adjacency(len(nodes), u, v)
    return ContactNetwork(
        nodes=nodes,
        u=_frozen(u),
        v=_frozen(v),
        trip=_frozen(trip),
        t_start=_frozen(t_start),
        t_end=_frozen(t_end),
        trip_ids=trip_ids,
        clique_sizes=_frozen(segment_clique_sizes(trajectories)),
        indptr=_frozen(indptr),
        neighbors=_frozen(neighbors),
        slot_edge=_frozen(slot_edge),
    )


@dataclass(frozen=True)
class NetworkStats:
    n_nodes: int
    n_edges: int
    max_degree: int
    median_degree: float
    mean_degree: float
    max_clique: int
    median_clique: float
    mean_clique: float

    def as_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "n_edges": self.n_edges,
            "max_degree": self.max_degree,
            "median_degree": self.median_degree,
            "mean_degree": self.mean_degree,
            "max_clique": self.max_clique,
            "median_clique": self.median_clique,
            "mean_clique": self.mean_clique,
        }


def distinct_neighbor_degrees(net: ContactNetwork) -> np.ndarray:
    """Degrees with parallel edges collapsed (simple-graph view)."""
    if net.n_edges == 0:
        return np.zeros(net.n_nodes, dtype=np.int64)
    pairs = np.unique(np.stack([net.u, net.v], axis=1), axis=0)
    return np.bincount(pairs.ravel(), minlength=net.n_nodes)


def network_stats(net: ContactNetwork, *, simple: bool = False) -> NetworkStats:
    """Table-style summary. With ``simple=True`` degrees and edge count ignore
    parallel edges; the default counts every incident edge."""
    if simple:
        deg = distinct_neighbor_degrees(net)
        n_edges = int(deg.sum() // 2)
    else:
        deg = net.degrees
        n_edges = net.n_edges
    n = net.n_nodes
    cliques = net.clique_sizes
    return NetworkStats(
        n_nodes=n,
        n_edges=n_edges,
        max_degree=int(deg.max()) if n else 0,
        median_degree=float(np.median(deg)) if n else 0.0,
        mean_degree=2 * n_edges / n if n else 0.0,
        max_clique=int(cliques.max()) if cliques.size else 0,
        median_clique=float(np.median(cliques)) if cliques.size else 0.0,
        mean_clique=float(cliques.mean()) if cliques.size else 0.0,
    )


def _histogram(values: np.ndarray, width: int, n_bins: int | None = None) -> list[tuple[int, int]]:
    values = np.asarray(values, dtype=np.int64)
    if n_bins is None:
        n_bins = int(values.max() // width) + 1 if values.size else 1
    counts = np.bincount(values // width, minlength=n_bins) if values.size else np.zeros(n_bins, dtype=np.int64)
    return [(i * width, int(c)) for i, c in enumerate(counts)]


def temporal_histograms(net: ContactNetwork) -> dict[str, list[tuple[int, int]]]:
    """Fixed-bin histograms: contact start (quarter hours of the day, times
    past midnight folded back), contact duration (minutes) and degree."""
    return {
        "contact_start_hist": _histogram(net.t_start % DAY, START_BIN, DAY // START_BIN),
        "duration_hist": _histogram(net.duration, DURATION_BIN),
        "degree_hist": _histogram(net.degrees, 1),
    }


def clique_histogram(net: ContactNetwork) -> list[tuple[int, int]]:
    return _histogram(net.clique_sizes, 1)


def write_edges(net: ContactNetwork, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("u", "v", "trip_id", "t_start", "t_end", "duration_sec"))
        for a, b, tid, s, e in net.edges():
            w.writerow((a, b, tid, s, e, e - s))
    return path


def write_histogram(rows: Sequence[tuple[int, int]], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("bin_start", "count"))
        w.writerows(rows)
    return path


def write_stats(stats: NetworkStats, path: str | Path, config: dict | None = None) -> Path:
    path = Path(path)
    payload = {"stats": stats.as_dict()}
    if config is not None:
        payload["config"] = config
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
