"""Construction and verification of minimum-cardinality data attacks.

A *hidden* attack corrupts every edge of a cut free of protected meters,
so a = H c lies in the column space of H and the residual is unchanged.

A *detectable* attack corrupts only floor(1 + |C|/2) corruptible edges
of a cut C whose protected edges are strictly fewer than half of it. The
residual test fires, but the cheapest repair available to the estimator
is to discard the remaining cut edges (the "bait"), after which the
attacked data is consistent again and the estimate is shifted by kappa on
the cut-off buses.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from . import estimator
from .errors import (
    GridAttackError,
    ObservabilityViolatedError,
    OracleUnavailableError,
    RelaxationUnsolvedError,
)
from .graphcut import (
    MAX_ORACLE_NODES,
    Cut,
    connected_after_removal,
    cut_of_partition,
    detectable_predicate,
    enumerate_optimal_cut,
    hidden_predicate,
    stoer_wagner_min_cut,
    surrogate_infinity,
)
from .grid import MeasurementGraph, MeasurementSystem
from .sdp import DEFAULT_RESTARTS, DEFAULT_TRIALS, build_laplacians, gw_round, solve_sdp

KAPPA_SIGMA_FACTOR = 20.0


class Verdict(enum.Enum):
    """Why no attack came back.

    INFEASIBLE is a proof from exact search; NOT_FOUND only means a
    heuristic gave up.
    """

    INFEASIBLE = "infeasible"
    NOT_FOUND = "not-found"


@dataclass(frozen=True, eq=False)
class AttackVector:
    a: np.ndarray
    support: tuple[int, ...]
    cut: Cut
    kappa: float
    bait: tuple[int, ...]
    kind: str  # "hidden" or "detectable"

    @property
    def size(self) -> int:
        return len(self.support)

    @property
    def partition(self) -> tuple[int, ...]:
        """Nodes with c_hat = 1 (the reference entry is always 0)."""
        return self.cut.partition

    def state_shift(self, n: int) -> np.ndarray:
        """kappa * indicator of the partition: the estimate shift the attack aims for."""
        c = np.zeros(n)
        c[list(self.partition)] = self.kappa
        return c

    def to_dict(self, bus_ids: Sequence[int] | None = None) -> dict:
        return {
            "kind": self.kind,
            "kappa": float(f"{self.kappa:.9g}"),
            "support": [{"index": k, "value": float(f"{self.a[k]:.9g}")} for k in self.support],
            "bait": list(self.bait),
            "partition": [int(bus_ids[v]) if bus_ids else v + 1 for v in self.partition],
        }


def attack_from_dict(doc: dict, graph: MeasurementGraph) -> AttackVector:
    """Rebuild an AttackVector from its JSON form against ``graph``.

    Bus ids in ``partition`` are taken as 1..n. Values are recomputed from
    kappa and the graph; the stored values must agree with them.
    """
    kappa = float(doc["kappa"])
    support = tuple(int(e["index"]) for e in doc["support"])
    cut = cut_of_partition(graph, [int(b) - 1 for b in doc["partition"]])
    values = attack_values(graph, cut.partition, kappa)
    a = np.zeros(graph.m)
    a[list(support)] = values[list(support)]
    for entry in doc["support"]:
        if not np.isclose(entry["value"], values[int(entry["index"])], rtol=1e-8, atol=1e-12):
            raise GridAttackError(f"attack value at meter {entry['index']} disagrees with the partition")
    return AttackVector(a, support, cut, kappa, tuple(int(k) for k in doc["bait"]), doc["kind"])


def default_kappa(graph: MeasurementGraph) -> float:
    return KAPPA_SIGMA_FACTOR * float(np.max(graph.sigma))


def attack_values(graph: MeasurementGraph, S: Sequence[int], kappa: float) -> np.ndarray:
    """kappa * H_hat @ c_hat for c_hat the indicator of S (reference entry 0)."""
    c_hat = np.zeros(graph.n_nodes)
    c_hat[list(S)] = 1.0
    return kappa * graph.magnitude * (c_hat[graph.tail] - c_hat[graph.head])


def validate_attack(attack: AttackVector, graph: MeasurementGraph) -> None:
    """Raise AssertionError if any AttackVector invariant fails."""
    support = set(attack.support)
    cut_edges = set(attack.cut.edges)
    assert support <= cut_edges, "support outside the cut"
    assert all(graph.corruptible[k] for k in support), "support touches a protected meter"
    assert set(attack.bait) == cut_edges - support, "bait is not the rest of the cut"
    expected = attack_values(graph, attack.partition, attack.kappa)
    assert np.allclose(attack.a[list(support)], expected[list(support)], rtol=1e-12, atol=0)
    assert np.count_nonzero(attack.a) == attack.size, "attack vector nonzero outside its support"
    if attack.kind == "hidden":
        assert support == cut_edges
        assert np.allclose(attack.a, expected, rtol=1e-12, atol=0)
    else:
        assert attack.size == 1 + attack.cut.size // 2
        assert attack.size > len(attack.bait)
        assert connected_after_removal(graph, attack.bait), "bait removal disconnects the graph"


def _resolve_kappa(graph, kappa):
    kappa = default_kappa(graph) if kappa is None else float(kappa)
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    return kappa


def hidden_attack(graph: MeasurementGraph, kappa: float | None = None,
                  cross_check: bool = True) -> AttackVector | Verdict:
    """Smallest attack a = kappa * H c that avoids every protected meter.

    A binary c suffices, so this is the minimum cut with protected edges at
    surrogate-infinite weight. With ``cross_check`` the size is compared
    against the enumeration oracle whenever the graph is small enough.
    """
    kappa = _resolve_kappa(graph, kappa)
    big = surrogate_infinity(graph)
    weights = np.where(graph.corruptible, 1.0, big)
    cut = stoer_wagner_min_cut(graph, weights)
    feasible = cut.weight < big / 2
    if cross_check and graph.n_nodes <= MAX_ORACLE_NODES:
        oracle = enumerate_optimal_cut(graph, hidden_predicate)
        oracle_size = None if oracle is None else oracle.size
        if oracle_size != (cut.size if feasible else None):
            raise AssertionError(f"min-cut hidden size {cut.size} disagrees with oracle {oracle_size}")
    if not feasible:
        return Verdict.INFEASIBLE
    return hidden_from_cut(cut, graph, kappa)


def hidden_from_cut(cut: Cut, graph: MeasurementGraph, kappa: float | None = None) -> AttackVector:
    """Attack every edge of a cut that contains no protected meter."""
    kappa = _resolve_kappa(graph, kappa)
    if cut.c_m:
        raise ValueError("a hidden attack cannot use a cut with protected meters")
    a = attack_values(graph, cut.partition, kappa)
    return AttackVector(a, cut.edges, cut, kappa, (), "hidden")


def assemble_attack(cut: Cut, graph: MeasurementGraph, kappa: float | None = None) -> AttackVector:
    """Attack floor(1 + |C|/2) corruptible cut edges; the rest of the cut is bait.

    Subsets are tried in lexicographic order and the first whose bait can
    be removed without disconnecting the graph is used.
    """
    kappa = _resolve_kappa(graph, kappa)
    if not cut.detectable_feasible:
        raise ValueError(f"cut is not feasible: {cut.c_m} protected of {cut.size}")
    want = 1 + cut.size // 2
    corruptible = [k for k in cut.edges if graph.corruptible[k]]
    values = attack_values(graph, cut.partition, kappa)
    for support in combinations(corruptible, want):
        bait = tuple(k for k in cut.edges if k not in support)
        if not connected_after_removal(graph, bait):
            continue
        assert len(support) > len(bait)
        a = np.zeros(graph.m)
        a[list(support)] = values[list(support)]
        return AttackVector(a, tuple(support), cut, kappa, bait, "detectable")
    raise ObservabilityViolatedError(
        f"observability violated: no {want}-subset of cut {cut.edges} keeps the graph connected"
    )


def detectable_oracle(graph: MeasurementGraph, kappa: float | None = None) -> AttackVector | Verdict:
    """Exact optimum by enumerating every cut."""
    cut = enumerate_optimal_cut(graph, detectable_predicate)
    if cut is None:
        return Verdict.INFEASIBLE
    return assemble_attack(cut, graph, kappa)


def detectable_sdp(
    graph: MeasurementGraph,
    kappa: float | None = None,
    trials: int = DEFAULT_TRIALS,
    seed: int | None = 0,
    restarts: int = DEFAULT_RESTARTS,
) -> AttackVector | Verdict:
    """Relaxation plus hyperplane rounding."""
    kappa = _resolve_kappa(graph, kappa)
    try:
        factor = solve_sdp(build_laplacians(graph), restarts=restarts, seed=seed)
    except RelaxationUnsolvedError:
        return Verdict.NOT_FOUND
    round_seed = None if seed is None else np.random.SeedSequence(seed).spawn(1)[0]
    cut = gw_round(factor, graph, trials, np.random.default_rng(round_seed))
    if cut is None:
        return Verdict.NOT_FOUND
    try:
        return assemble_attack(cut, graph, kappa)
    except ObservabilityViolatedError:
        return Verdict.NOT_FOUND


def detectable_mincut(
    graph: MeasurementGraph,
    kappa: float | None = None,
    epsilon: float | None = None,
    seed: int | None = 0,
) -> AttackVector | Verdict:
    """Iterative min-cuts with lowered weights on corruptible edges.

    Corruptible edges start at weight 1 - epsilon and protected ones at 1.
    While the current min cut C (c edges, c_m protected) is infeasible,
    either corruptible weights are lowered to

        beta = 1 - epsilon - b / (c_m + b - floor((c + b - 1) / 2))

    in search of a feasible cut with b more edges, or, once
    2 c_m < b + c, a random protected edge of C is pinned to
    surrogate-infinite weight. A non-positive beta or denominator, or a
    revisited (C, b) state, is routed to the pinning branch so the loop
    always terminates.
    """
    kappa = _resolve_kappa(graph, kappa)
    m = graph.m
    eps = 1.0 / (2 * m) if epsilon is None else float(epsilon)
    if not 0 < eps < 1.0 / m:
        raise ValueError("epsilon must lie in (0, 1/m)")
    protected = ~graph.corruptible
    big = surrogate_infinity(graph)
    pinned = np.zeros(m, dtype=bool)
    rng = np.random.default_rng(seed)

    def min_cut(beta):
        w = np.where(protected, 1.0, beta)
        w[pinned] = big
        return stoer_wagner_min_cut(graph, w)

    C = min_cut(1.0 - eps)
    b = 1
    seen: set = set()
    while C.weight < big / 2 and 2 * C.c_m >= C.size:
        c, c_m = C.size, C.c_m
        pin = True
        state = (C.edges, b)
        if 2 * c_m >= b + c and state not in seen:
            seen.add(state)
            denom = c_m + b - (c + b - 1) // 2
            beta = 1.0 - eps - b / denom if denom > 0 else 0.0
            if beta > 0:
                pin = False
                C1 = min_cut(beta)
                if C1.size == c:
                    b += 1
                else:
                    C, b = C1, 1
        if pin:
            choices = [k for k in C.edges if protected[k] and not pinned[k]]
            if not choices:
                return Verdict.NOT_FOUND
            pinned[choices[int(rng.integers(len(choices)))]] = True
            seen.clear()
            C, b = min_cut(1.0 - eps), 1
    if C.weight >= big / 2:
        return Verdict.NOT_FOUND
    try:
        return assemble_attack(C, graph, kappa)
    except ObservabilityViolatedError:
        return Verdict.NOT_FOUND


# ------------------------------------------------------------ verification


@dataclass(frozen=True, eq=False)
class VerificationReport:
    kind: str
    noiseless: bool
    detected: bool
    removed: tuple[int, ...] | None
    bait: tuple[int, ...]
    removal_matches_bait: bool
    removal_size_matches_bait: bool
    attacked_retained: bool
    observable: bool
    estimate: np.ndarray
    target: np.ndarray  # x_true + kappa * 1_S
    shift_error: float  # max |estimate - target|
    shift_ok: bool
    masked_by_noise: bool
    identification_error: str | None

    @property
    def deceived(self) -> bool:
        """The estimator ended at the attacker's target without discarding attacked data."""
        if self.kind == "hidden" or not self.bait:
            return not self.detected and self.shift_ok
        return self.detected and self.attacked_retained and self.observable and self.shift_ok

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "noiseless": self.noiseless,
            "detected": self.detected,
            "removed": None if self.removed is None else list(self.removed),
            "bait": list(self.bait),
            "removal_matches_bait": self.removal_matches_bait,
            "removal_size_matches_bait": self.removal_size_matches_bait,
            "attacked_retained": self.attacked_retained,
            "observable": self.observable,
            "estimate": self.estimate.tolist(),
            "target": self.target.tolist(),
            "shift_error": self.shift_error,
            "shift_ok": self.shift_ok,
            "masked_by_noise": self.masked_by_noise,
            "identification_error": self.identification_error,
            "deceived": self.deceived,
        }


def verify_end_to_end(
    system: MeasurementSystem,
    attack: AttackVector,
    x_true=None,
    noise_seed: int | None = None,
    alpha: float = estimator.DEFAULT_ALPHA,
    k_max: int = estimator.DEFAULT_K_MAX,
    tol: float = 1e-6,
) -> VerificationReport:
    """Inject the attack and run estimation, detection and identification.

    ``noise_seed=None`` gives noiseless measurements. The shift check uses
    ``tol`` when noiseless and kappa / 2 (max-norm) under noise.
    """
    n = system.n
    x_true = np.zeros(n) if x_true is None else np.asarray(x_true, dtype=float)
    z = system.H @ x_true
    noiseless = noise_seed is None
    if not noiseless:
        z = z + system.sigma * np.random.default_rng(noise_seed).standard_normal(system.m)
    z_hat = z + attack.a
    target = x_true + attack.state_shift(n)

    first = estimator.wls_estimate(system, z_hat, alpha)
    removed, error, observable = (), None, True
    estimate = first.x_star
    if first.detected:
        try:
            cleanup = estimator.identify_and_clean(system, z_hat, alpha, k_max)
            removed, estimate, observable = cleanup.removed, cleanup.estimate.x_star, cleanup.observable
        except GridAttackError as exc:
            removed, error, observable = None, str(exc), False

    shift_error = float(np.max(np.abs(estimate - target))) if n else 0.0
    shift_ok = shift_error <= (tol if noiseless else attack.kappa / 2)
    removed_set = set(removed) if removed is not None else set()
    return VerificationReport(
        kind=attack.kind,
        noiseless=noiseless,
        detected=first.detected,
        removed=removed,
        bait=attack.bait,
        removal_matches_bait=removed is not None and removed_set == set(attack.bait),
        removal_size_matches_bait=removed is not None and len(removed_set) == len(attack.bait),
        attacked_retained=removed is not None and not (removed_set & set(attack.support)),
        observable=observable,
        estimate=estimate,
        target=target,
        shift_error=shift_error,
        shift_ok=shift_ok,
        masked_by_noise=not noiseless and attack.kind == "detectable" and bool(attack.bait)
        and not first.detected,
        identification_error=error,
    )


# ------------------------------------------------------------ bounds


@dataclass(frozen=True)
class BoundReport:
    hidden_size: int | None  # None = infeasible
    detectable_size: int | None
    # detectable <= floor(1 + hidden/2); None when hidden is infeasible
    size_bound_ok: bool | None
    minority_protected: bool  # fewer than half the meters are protected
    exists_when_minority: bool | None  # a detectable attack exists; None unless minority_protected
    containment_ok: bool  # hidden feasible implies detectable feasible
    detectable_only: bool  # detectable feasible while hidden is not


def check_bounds(graph: MeasurementGraph) -> BoundReport:
    """Both exact optima and the inequalities relating them."""
    if graph.n_nodes > MAX_ORACLE_NODES:
        raise OracleUnavailableError("bounds need the enumeration oracle")
    hidden = enumerate_optimal_cut(graph, hidden_predicate)
    detect = enumerate_optimal_cut(graph, detectable_predicate)
    hidden_size = None if hidden is None else hidden.size
    detect_size = None if detect is None else 1 + detect.size // 2
    bound_ok = None
    if hidden_size is not None:
        bound_ok = detect_size is not None and detect_size <= 1 + hidden_size // 2
    applicable = 2 * len(graph.protected) < graph.m
    return BoundReport(
        hidden_size=hidden_size,
        detectable_size=detect_size,
        size_bound_ok=bound_ok,
        minority_protected=applicable,
        exists_when_minority=(detect_size is not None) if applicable else None,
        containment_ok=hidden_size is None or detect_size is not None,
        detectable_only=detect_size is not None and hidden_size is None,
    )
