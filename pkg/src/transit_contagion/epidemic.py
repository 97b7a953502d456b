"""
Discrete-time SIR Monte Carlo on the weighted contact network.

Every run draws a fresh random seed set, then for ``horizon`` iterations each
active node tries every incident edge once; a susceptible neighbor hit with
probability ``w_e`` becomes infected and starts spreading in the next
iteration. A node stays active while its counter is at most
``infectious_period``. Infection estimates are the fraction of runs in which
a node was ever infected (seeds included).

Randomness is counter based. The uniform for a transmission attempt in
iteration ``t`` of run ``r`` is a SplitMix64 output keyed by the master seed,
``r`` and the identity of the directed contact (both person ids, trip id and
contact interval); seed sets are the nodes with the smallest per-run hash of
their person id. Results therefore do not depend on thread count, chunking
or scan order, two weightings of one network share their random numbers,
and scenarios that keep a passenger or a contact reuse its draws.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numba as nb
import numpy as np

from .assignment import stable_hash
from .contacts import ContactNetwork
from .errors import SeedCountExceedsNodes

logger = logging.getLogger(__name__)

DEFAULT_P_MAX = 0.163
DEFAULT_D_MAX = 7200.0


@dataclass(frozen=True)
class TransmissionParams:
    p_max: float = DEFAULT_P_MAX
    d_max: float = DEFAULT_D_MAX

    def __post_init__(self):
        if not 0.0 <= self.p_max <= 1.0:
            raise ValueError(f"p_max must lie in [0, 1], got {self.p_max}")
        if not self.d_max > 0:
            raise ValueError(f"d_max must be positive, got {self.d_max}")


def edge_probability(duration: float, params: TransmissionParams) -> float:
    """Linear in contact duration, saturating at ``p_max`` once ``duration >= d_max``."""
    if duration < 0:
        raise ValueError("duration must be non-negative")
    return min(params.p_max, params.p_max / params.d_max * duration)


@dataclass(frozen=True, eq=False)
class WeightedContactNetwork:
    network: ContactNetwork
    weights: np.ndarray
    params: TransmissionParams

    @property
    def slot_weights(self) -> np.ndarray:
        """Edge weights laid out along the CSR slots."""
        return self.weights[self.network.slot_edge]


def weight_network(net: ContactNetwork, params: TransmissionParams) -> WeightedContactNetwork:
    d = net.duration.astype(np.float64)
    w = np.minimum(params.p_max, params.p_max / params.d_max * d)
    w.setflags(write=False)
    return WeightedContactNetwork(net, w, params)


@dataclass(frozen=True)
class EpiConfig:
    n_seeds: int = 100
    horizon: int = 5
    infectious_period: int = 5
    n_runs: int = 100_000
    master_seed: int = 20240101

    def __post_init__(self):
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.infectious_period < 0:
            raise ValueError("infectious_period must be >= 0")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")


@dataclass(frozen=True, eq=False)
class InfectionEstimates:
    nodes: tuple[str, ...]
    counts: np.ndarray  # runs in which each node ended infected
    n_runs: int

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.n_runs

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.nodes, self.probabilities.tolist()))

    def __len__(self) -> int:
        return len(self.nodes)


# ---------------------------------------------------------------------------
# counter-based random numbers

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SEED_STREAM = np.uint64(0xD1B54A32D192ED03)
_INV53 = 1.0 / 9007199254740992.0


@nb.njit(inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@nb.njit(inline="always")
def _uniform(key, position):
    """SplitMix64 output number ``position`` of the stream keyed by ``key``, in [0, 1)."""
    z = _mix(key + (position + np.uint64(1)) * _GAMMA)
    return np.float64(z >> np.uint64(11)) * _INV53


@nb.njit
def run_key(master_seed, run):
    return _mix(_mix(np.uint64(master_seed)) + np.uint64(run) * _GAMMA)


@nb.njit
def uniform(key, position):
    return _uniform(np.uint64(key), np.uint64(position))


@nb.njit(nogil=True)
def _draw_seeds(key, node_keys, n_seeds, counter, out, heap_score, heap_node):
    """Pick the ``n_seeds`` nodes with the smallest per-run score.

    Scores are iid uniform hashes of (run, node identity), so this is uniform
    sampling without replacement, and a node that exists in two networks gets
    the same score in both.
    """
    seed_key = key ^ _SEED_STREAM
    size = 0
    for i in range(node_keys.shape[0]):
        sc = _mix(seed_key ^ node_keys[i])
        if size < n_seeds:
            # sift up into a max-heap
            j = size
            size += 1
            while j > 0:
                parent = (j - 1) // 2
                if heap_score[parent] >= sc:
                    break
                heap_score[j] = heap_score[parent]
                heap_node[j] = heap_node[parent]
                j = parent
            heap_score[j] = sc
            heap_node[j] = i
        elif sc < heap_score[0]:
            # replace the root and sift down
            j = 0
            while True:
                c = 2 * j + 1
                if c >= size:
                    break
                if c + 1 < size and heap_score[c + 1] > heap_score[c]:
                    c += 1
                if heap_score[c] <= sc:
                    break
                heap_score[j] = heap_score[c]
                heap_node[j] = heap_node[c]
                j = c
            heap_score[j] = sc
            heap_node[j] = i
    for k in range(n_seeds):
        counter[heap_node[k]] = 0
        out[k] = heap_node[k]


@nb.njit(nogil=True)
def _slot_keys(indptr, neighbors, slot_edge, node_keys, edge_keys):
    """Stream key per directed slot, derived from (source, target, edge identity).

    Exact duplicate contacts get an occurrence counter so they stay independent.
    """
    out = np.empty(neighbors.shape[0], dtype=np.uint64)
    for a in range(indptr.shape[0] - 1):
        prev = np.uint64(0)
        occ = np.uint64(0)
        for s in range(indptr[a], indptr[a + 1]):
            base = _mix(_mix(node_keys[a] ^ _SEED_STREAM) + node_keys[neighbors[s]]) ^ edge_keys[slot_edge[s]]
            if s > indptr[a] and base == prev:
                occ += np.uint64(1)
            else:
                occ = np.uint64(0)
            prev = base
            out[s] = _mix(base + occ * _GAMMA)
    return out


@nb.njit(nogil=True)
def _edge_keys(trip_keys, trip, t_start, t_end):
    out = np.empty(trip.shape[0], dtype=np.uint64)
    for e in range(trip.shape[0]):
        z = _mix(trip_keys[trip[e]] + np.uint64(t_start[e]) * _GAMMA)
        out[e] = _mix(z ^ np.uint64(t_end[e]))
    return out


@nb.njit(nogil=True)
def _run_chunk(
    indptr, neighbors, slot_w, slot_keys, node_keys, n_seeds, horizon, period, master_seed, run_lo, run_hi, counts,
    fixed_seeds,
):
    n = indptr.shape[0] - 1
    counter = np.empty(n, dtype=np.int64)
    active = np.empty(n, dtype=np.int64)
    nxt = np.empty(n, dtype=np.int64)
    heap_score = np.empty(max(n_seeds, 1), dtype=np.uint64)
    heap_node = np.empty(max(n_seeds, 1), dtype=np.int64)
    use_fixed = fixed_seeds.shape[0] > 0
    for r in range(run_lo, run_hi):
        key = run_key(master_seed, r)
        counter[:] = -1
        if use_fixed:
            n_active = fixed_seeds.shape[0]
            for i in range(n_active):
                counter[fixed_seeds[i]] = 0
                active[i] = fixed_seeds[i]
        else:
            n_active = n_seeds
            _draw_seeds(key, node_keys, n_seeds, counter, active, heap_score, heap_node)
        t = 0
        while n_active > 0 and t < horizon:
            n_next = 0
            for a in range(n_active):
                node = active[a]
                for s in range(indptr[node], indptr[node + 1]):
                    nbr = neighbors[s]
                    if counter[nbr] < 0:
                        if _uniform(key ^ slot_keys[s], np.uint64(t)) < slot_w[s]:
                            counter[nbr] = 0
                            nxt[n_next] = nbr
                            n_next += 1
                counter[node] += 1
                if counter[node] <= period:
                    nxt[n_next] = node
                    n_next += 1
            for a in range(n_next):
                active[a] = nxt[a]
            n_active = n_next
            t += 1
        for i in range(n):
            if counter[i] >= 0:
                counts[i] += 1


def identity_keys(net: ContactNetwork) -> tuple[np.ndarray, np.ndarray]:
    """Per-node and per-slot stream keys hashed from person ids, trip ids and contact times."""
    node_keys = np.fromiter((stable_hash(p) for p in net.nodes), dtype=np.uint64, count=net.n_nodes)
    trip_keys = np.fromiter((stable_hash(t) for t in net.trip_ids), dtype=np.uint64, count=len(net.trip_ids))
    if net.n_edges:
        edge_keys = _edge_keys(trip_keys, net.trip, net.t_start, net.t_end)
    else:
        edge_keys = np.zeros(0, dtype=np.uint64)
    slot_keys = _slot_keys(
        np.asarray(net.indptr, dtype=np.int64),
        np.asarray(net.neighbors, dtype=np.int64),
        np.asarray(net.slot_edge, dtype=np.int64),
        node_keys,
        edge_keys,
    )
    return node_keys, slot_keys


def _chunks(n_runs: int, n_chunks: int) -> list[tuple[int, int]]:
    bounds = np.linspace(0, n_runs, n_chunks + 1).astype(np.int64)
    return [(int(a), int(b)) for a, b in zip(bounds, bounds[1:]) if b > a]


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def run_epidemic(
    wnet: WeightedContactNetwork,
    config: EpiConfig,
    *,
    workers: int | None = None,
    seeds: Sequence[str] | None = None,
) -> InfectionEstimates:
    """Estimate per-passenger infection probabilities over ``config.n_runs`` runs.

    ``seeds`` pins the initial infected set instead of sampling it. Runs are
    split into ``workers`` contiguous blocks, each accumulating integer
    counts privately; blocks are summed at the end.
    """
    net = wnet.network
    n = net.n_nodes
    if seeds is not None:
        idx = net.index
        fixed = np.asarray(sorted({idx[s] for s in seeds}), dtype=np.int64)
        if fixed.size > n:
            raise SeedCountExceedsNodes(f"{fixed.size} seeds for {n} nodes")
    else:
        fixed = np.zeros(0, dtype=np.int64)
        if config.n_seeds > n:
            raise SeedCountExceedsNodes(f"n_seeds={config.n_seeds} exceeds |V|={n}")
    workers = workers or default_workers()
    indptr = np.ascontiguousarray(net.indptr, dtype=np.int64)
    neighbors = np.ascontiguousarray(net.neighbors, dtype=np.int64)
    slot_w = np.ascontiguousarray(wnet.slot_weights, dtype=np.float64)
    seed = np.uint64(config.master_seed & 0xFFFFFFFFFFFFFFFF)
    node_keys, slot_keys = identity_keys(net)

    blocks = _chunks(config.n_runs, workers)
    partial = np.zeros((len(blocks), n), dtype=np.int64)

    def work(i: int) -> None:
        lo, hi = blocks[i]
        _run_chunk(
            indptr, neighbors, slot_w, slot_keys, node_keys, config.n_seeds, config.horizon, config.infectious_period,
            seed, lo, hi, partial[i], fixed,
        )

    if workers == 1 or len(blocks) == 1:
        for i in range(len(blocks)):
            work(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, range(len(blocks))))
    counts = partial.sum(axis=0)
    counts.setflags(write=False)
    logger.info("epidemic: %d runs over %d nodes, %d workers", config.n_runs, n, workers)
    return InfectionEstimates(net.nodes, counts, config.n_runs)


def global_infection_rate(est: InfectionEstimates) -> float:
    """Expected infected share of the network (mean per-node probability)."""
    if len(est) == 0:
        return 0.0
    return float(est.counts.sum() / (est.n_runs * len(est)))


def endangered_count(est: InfectionEstimates | Sequence[float] | np.ndarray, threshold: float = 0.5) -> int:
    """Number of passengers whose infection probability is strictly above ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    p = est.probabilities if isinstance(est, InfectionEstimates) else np.asarray(est, dtype=float)
    return int(np.count_nonzero(p > threshold))


def write_estimates(est: InfectionEstimates, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("person_id", "probability"))
        for pid, c in zip(est.nodes, est.counts.tolist()):
            w.writerow((pid, repr(c / est.n_runs)))
    return path


def read_estimates(path: str | Path) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["person_id"]: float(row["probability"]) for row in csv.DictReader(fh)}


def epi_summary(est: InfectionEstimates, config: EpiConfig, params: TransmissionParams, threshold: float = 0.5) -> dict:
    return {
        "global_rate": global_infection_rate(est),
        "endangered_count": endangered_count(est, threshold),
        "config": {**asdict(config), "p_max": params.p_max, "d_max": params.d_max, "threshold": threshold},
    }


def write_summary(summary: dict, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
