"""Monte-Carlo sweeps over the protected fraction of measurements."""
from __future__ import annotations

import csv
import io
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from .attacks import (
    AttackVector,
    Verdict,
    detectable_mincut,
    detectable_oracle,
    detectable_sdp,
    hidden_attack,
)
from .estimator import DEFAULT_ALPHA
from .grid import GridTopology, MeasurementSystem, load_grid_source, place_meters, random_system
from .sdp import DEFAULT_RESTARTS, DEFAULT_TRIALS

ALGORITHMS = ("oracle", "sdp", "mincut", "hidden")
CSV_HEADER = ("fraction", "algorithm", "trial", "seed", "feasible", "attack_size", "wall_ms")


def _default_fractions() -> list[float]:
    return [round(0.1 * k, 10) for k in range(7)]


@dataclass
class SweepConfig:
    grid: str = "ieee14"
    phasor_fraction: float = 0.6
    fractions: list[float] = field(default_factory=_default_fractions)
    trials: int = 100
    seed: int = 0
    algorithms: list[str] = field(default_factory=lambda: list(ALGORITHMS))
    kappa: float | None = None
    alpha: float = DEFAULT_ALPHA
    sigma: float = 0.01
    sdp_trials: int = DEFAULT_TRIALS
    sdp_restarts: int = DEFAULT_RESTARTS
    workers: int = 1

    def __post_init__(self):
        self.fractions = [float(f) for f in self.fractions]
        self.algorithms = list(self.algorithms)
        if any(not 0.0 <= f <= 1.0 for f in self.fractions):
            raise ValueError("fractions must lie in [0, 1]")
        if not 0.0 <= self.phasor_fraction <= 1.0:
            raise ValueError("phasor_fraction must lie in [0, 1]")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithms: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, doc: dict) -> SweepConfig:
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrialRecord:
    fraction: float
    algorithm: str
    trial: int
    seed: int
    status: str  # "ok", "infeasible", "not-found" or "error: ..."
    attack_size: int | None
    wall_ms: float
    protected: tuple[int, ...]
    phasor_buses: tuple[int, ...]

    @property
    def feasible(self) -> bool:
        return self.status == "ok"


@dataclass
class SweepResult:
    config: SweepConfig
    records: list[TrialRecord]
    metadata: dict

    def points(self) -> Iterator[tuple[float, str, list[TrialRecord]]]:
        for f in self.config.fractions:
            for algo in self.config.algorithms:
                yield f, algo, [r for r in self.records if r.fraction == f and r.algorithm == algo]

    def summary(self) -> list[dict]:
        """Mean size over feasible trials and the infeasible / not-found fraction per point."""
        rows = []
        for f, algo, recs in self.points():
            sizes = [r.attack_size for r in recs if r.feasible]
            rows.append({
                "fraction": f,
                "algorithm": algo,
                "trials": len(recs),
                "feasible": len(sizes),
                "mean_size": float(np.mean(sizes)) if sizes else None,
                "infeasible_fraction": 1.0 - len(sizes) / len(recs) if recs else None,
            })
        return rows

    def mean_size(self, fraction: float, algorithm: str) -> float | None:
        return self._row(fraction, algorithm)["mean_size"]

    def infeasible_fraction(self, fraction: float, algorithm: str) -> float:
        return self._row(fraction, algorithm)["infeasible_fraction"]

    def _row(self, fraction, algorithm):
        for row in self.summary():
            if row["fraction"] == fraction and row["algorithm"] == algorithm:
                return row
        raise KeyError((fraction, algorithm))


def trial_seed(master: int, fraction_index: int, trial: int) -> int:
    """Deterministic per-trial seed derived from the master seed and both indices."""
    seq = np.random.SeedSequence(master, spawn_key=(fraction_index, trial))
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def _algorithm_seed(seed: int, algorithm: str) -> int:
    seq = np.random.SeedSequence(seed, spawn_key=(ALGORITHMS.index(algorithm),))
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def phasor_count(n: int, fraction: float) -> int:
    return math.ceil(fraction * n - 1e-9)


def protected_count(m: int, fraction: float) -> int:
    return math.floor(fraction * m + 1e-9)


def _load_topology(source: str) -> GridTopology:
    loaded = load_grid_source(source)
    return loaded.topology if isinstance(loaded, MeasurementSystem) else loaded


def _run_algorithm(algorithm: str, graph, kappa, seed: int, config: SweepConfig):
    if algorithm == "oracle":
        return detectable_oracle(graph, kappa)
    if algorithm == "hidden":
        return hidden_attack(graph, kappa, cross_check=False)
    if algorithm == "sdp":
        return detectable_sdp(graph, kappa, trials=config.sdp_trials, seed=seed,
                              restarts=config.sdp_restarts)
    return detectable_mincut(graph, kappa, seed=seed)


def layout_seed(master: int, trial: int) -> int:
    """Seed shared by every fraction of one trial: phasor placement and meter permutation."""
    seq = np.random.SeedSequence(master, spawn_key=(trial,))
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def trial_layout(topology: GridTopology, config: SweepConfig, trial: int, fraction: float):
    """Phasor buses and protected meters of one trial at one fraction.

    The protected set is a prefix of a per-trial permutation of the meters,
    so protected sets are nested as the fraction grows.
    """
    rng = np.random.default_rng(layout_seed(config.seed, trial))
    n = topology.n
    chosen = rng.choice(n, phasor_count(n, config.phasor_fraction), replace=False)
    phasors = tuple(sorted(int(b) + 1 for b in chosen))
    system = place_meters(topology, phasors, config.sigma)
    order = rng.permutation(system.m)
    protected = tuple(sorted(int(k) for k in order[:protected_count(system.m, fraction)]))
    return system, phasors, protected


def _run_trial(task) -> list[TrialRecord]:
    config, topology, fraction_index, trial = task
    fraction = config.fractions[fraction_index]
    seed = trial_seed(config.seed, fraction_index, trial)
    system, phasors, protected = trial_layout(topology, config, trial, fraction)
    graph = system.with_protection(protected).to_graph()
    records = []
    for algo in config.algorithms:
        start = time.perf_counter()
        try:
            outcome = _run_algorithm(algo, graph, config.kappa, _algorithm_seed(seed, algo), config)
            if isinstance(outcome, AttackVector):
                status, size = "ok", outcome.size
            else:
                status, size = outcome.value, None
        except Exception as exc:  # recorded per trial, never fatal for the sweep
            status, size = f"error: {type(exc).__name__}: {exc}", None
        wall = 1000.0 * (time.perf_counter() - start)
        records.append(TrialRecord(fraction, algo, trial, seed, status, size, wall, protected, phasors))
    return records


def run_sweep(config: SweepConfig) -> SweepResult:
    """Run every configured algorithm on every (fraction, trial) pair.

    Output order is (fraction, algorithm, trial) regardless of worker count.
    """
    topology = _load_topology(config.grid)
    tasks = [(config, topology, fi, t) for fi in range(len(config.fractions)) for t in range(config.trials)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            batches = list(pool.map(_run_trial, tasks, chunksize=max(1, len(tasks) // (4 * config.workers))))
    else:
        batches = [_run_trial(task) for task in tasks]
    order = {a: k for k, a in enumerate(config.algorithms)}
    records = sorted(
        (r for batch in batches for r in batch),
        key=lambda r: (config.fractions.index(r.fraction), order[r.algorithm], r.trial),
    )
    metadata = {
        "buses": topology.n,
        "lines": len(topology.lines),
        "phasor_buses": phasor_count(topology.n, config.phasor_fraction),
        "phasor_rounding": "ceil",
        "protected_rounding": "floor",
        "mean_over": "feasible trials only",
    }
    return SweepResult(config, records, metadata)


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def emit_csv(result: SweepResult | None, path, timing: bool = False) -> None:
    """Write one row per trial record.

    ``wall_ms`` is left empty unless ``timing`` is set, so that reruns with
    the same seed produce byte-identical files. ``path`` may be "-" for
    stdout or an open text stream.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in result.records if result is not None else []:
        writer.writerow([
            _fmt(r.fraction),
            r.algorithm,
            r.trial,
            r.seed,
            int(r.feasible),
            "" if r.attack_size is None else r.attack_size,
            _fmt(r.wall_ms) if timing else "",
        ])
    text = buf.getvalue()
    if path == "-":
        sys.stdout.write(text)
    elif hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def random_instances(seed: int, count: int, max_buses: int = 10, max_meters: int = 20,
                     protected_below_half: bool = False) -> Iterator[MeasurementSystem]:
    """Random observable systems with a random protected set.

    Sizes are drawn uniformly (3..max_buses buses, n+1..max_meters meters).
    The protected count is uniform on 0..m, or on 0..ceil(m/2)-1 when
    ``protected_below_half`` is set.
    """
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(3, max_buses + 1))
        m = int(rng.integers(n + 1, max_meters + 1))
        system = random_system(rng, n, m)
        top = (m - 1) // 2 if protected_below_half else m
        k = int(rng.integers(0, top + 1))
        yield system.with_protection(rng.choice(m, k, replace=False))
