"""Cuts of the measurement multigraph: Stoer-Wagner, exhaustive enumeration, connectivity.

A cut is named by the node subset S on the far side from the reference
node; S never contains the reference. Crossing edges are the support of
A_H @ indicator(S).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import DisconnectedGraphError, OracleUnavailableError
from .grid import MeasurementGraph

# Infinite edge weight is replaced by SURROGATE_FACTOR * m.
SURROGATE_FACTOR = 1e6
MAX_ORACLE_NODES = 22
_CHUNK_BITS = 16

# vectorised predicate: (sizes, protected counts) -> boolean mask
Predicate = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Cut:
    partition: tuple[int, ...]
    edges: tuple[int, ...]
    size: int
    weight: float
    c_m: int  # crossing edges that are incorruptible

    @property
    def detectable_feasible(self) -> bool:
        return 2 * self.c_m < self.size

    @property
    def hidden_feasible(self) -> bool:
        return self.c_m == 0


def always(size: np.ndarray, c_m: np.ndarray) -> np.ndarray:
    return np.ones_like(size, dtype=bool)


def hidden_predicate(size: np.ndarray, c_m: np.ndarray) -> np.ndarray:
    """No incorruptible edge in the cut."""
    return c_m == 0


def detectable_predicate(size: np.ndarray, c_m: np.ndarray) -> np.ndarray:
    """Incorruptible edges strictly fewer than half the cut."""
    return 2 * c_m < size


def surrogate_infinity(graph: MeasurementGraph) -> float:
    return SURROGATE_FACTOR * max(graph.m, 1)


def _weights(graph: MeasurementGraph, weights) -> np.ndarray:
    if weights is None:
        return np.ones(graph.m)
    w = np.asarray(weights, dtype=float)
    if w.shape != (graph.m,):
        raise ValueError(f"need one weight per edge ({graph.m})")
    return w


def cut_of_partition(graph: MeasurementGraph, S: Iterable[int], weights=None) -> Cut:
    side = np.zeros(graph.n_nodes, dtype=bool)
    nodes = sorted(set(int(v) for v in S))
    if not nodes:
        raise ValueError("partition must be non-empty")
    if graph.ref in nodes or any(not 0 <= v < graph.n for v in nodes):
        raise ValueError("partition must be a subset of the non-reference nodes")
    side[nodes] = True
    crossing = side[graph.tail] != side[graph.head]
    edges = np.flatnonzero(crossing)
    w = _weights(graph, weights)
    return Cut(
        partition=tuple(nodes),
        edges=tuple(int(k) for k in edges),
        size=len(edges),
        weight=float(w[edges].sum()),
        c_m=int((~graph.corruptible[edges]).sum()),
    )


def connected_after_removal(graph: MeasurementGraph, removed: Iterable[int]) -> bool:
    """True iff the graph minus ``removed`` edges is connected (rank(DH) = n)."""
    return graph.is_connected(removed)


def stoer_wagner_min_cut(graph: MeasurementGraph, weights=None) -> Cut:
    """Global minimum-weight cut.

    Parallel edges are merged into one adjacency weight. Each phase starts
    from the lowest-numbered surviving node and breaks ties in maximum
    adjacency by lowest node number; the first phase reaching the minimum
    wins. The result is therefore a deterministic function of the input.
    """
    w = _weights(graph, weights)
    if np.any(w <= 0):
        raise ValueError("Stoer-Wagner needs positive weights")
    if not graph.is_connected():
        raise DisconnectedGraphError("graph is disconnected")
    N = graph.n_nodes
    W = np.zeros((N, N))
    np.add.at(W, (graph.tail, graph.head), w)
    W = W + W.T

    members = [[v] for v in range(N)]
    active = list(range(N))
    best_value, best_side = np.inf, None
    while len(active) > 1:
        act = np.array(active)
        sub = W[np.ix_(act, act)]
        added = np.zeros(len(act), dtype=bool)
        added[0] = True
        conn = sub[0].copy()
        prev, last = 0, 0
        value = 0.0
        for _ in range(len(act) - 1):
            masked = np.where(added, -np.inf, conn)
            nxt = int(np.argmax(masked))
            value = conn[nxt]
            added[nxt] = True
            conn += sub[nxt]
            prev, last = last, nxt
        s, t = act[prev], act[last]
        if value < best_value:
            best_value, best_side = value, list(members[t])
        W[s, :] += W[t, :]
        W[:, s] += W[:, t]
        W[s, s] = 0.0
        members[s].extend(members[t])
        active.remove(t)

    side = set(best_side)
    if graph.ref in side:
        side = set(range(N)) - side
    return cut_of_partition(graph, side, w)


def _lex_smallest(masks: np.ndarray, n: int) -> int:
    """Subset (as bitmask) whose sorted element tuple is lexicographically smallest."""
    return min((int(mk) for mk in masks), key=lambda mk: tuple(v for v in range(n) if mk >> v & 1))


def enumerate_optimal_cut(
    graph: MeasurementGraph,
    predicate: Predicate | None = None,
    weights=None,
) -> Cut | None:
    """Exhaustive search over all 2^n - 1 node subsets S.

    Returns the predicate-satisfying cut of minimum size (minimum weight
    when ``weights`` is given); ties go to the lexicographically smallest
    S. Returns None when no cut satisfies the predicate. ``predicate``
    receives arrays of sizes and protected counts and returns a mask.
    """
    n = graph.n
    if n + 1 > MAX_ORACLE_NODES:
        raise OracleUnavailableError(f"oracle unavailable: {n + 1} nodes > {MAX_ORACLE_NODES}")
    predicate = predicate or always
    w = None if weights is None else _weights(graph, weights)
    tail, head = graph.tail, graph.head
    protected = ~graph.corruptible
    bits = np.arange(n, dtype=np.int64)
    total = 1 << n

    best_value, best_masks = np.inf, []
    chunk = 1 << min(n, _CHUNK_BITS)
    for start in range(1, total, chunk):
        masks = np.arange(start, min(start + chunk, total), dtype=np.int64)
        side = np.zeros((len(masks), n + 1), dtype=bool)
        side[:, :n] = (masks[:, None] >> bits) & 1
        crossing = side[:, tail] != side[:, head]
        size = crossing.sum(axis=1)
        c_m = crossing[:, protected].sum(axis=1)
        ok = predicate(size, c_m)
        if not ok.any():
            continue
        value = (crossing[ok] @ w) if w is not None else size[ok].astype(float)
        low = value.min()
        tol = 1e-12 * max(abs(low), 1.0) if w is not None else 0.0
        if low < best_value - tol:
            best_value, best_masks = low, []
        if low <= best_value + tol:
            best_masks.extend(masks[ok][value <= best_value + tol].tolist())
            best_value = min(best_value, low)
    if not best_masks:
        return None
    winner = _lex_smallest(np.array(best_masks), n)
    return cut_of_partition(graph, [v for v in range(n) if winner >> v & 1], w)
