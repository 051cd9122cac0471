"""Grid topology, meter placement and the DC measurement model.

Bus ids are 1..n. Inside matrices and graphs bus ``k`` lives at column /
node ``k - 1``; the measurement graph adds a synthetic reference node at
index ``n`` whose phase angle is pinned to zero.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    GridValidationError,
    InsufficientRedundancyWarning,
    MatpowerParseError,
    UnobservableSystemError,
)


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    b: float  # susceptance magnitude, per unit


@dataclass(frozen=True)
class GridTopology:
    buses: tuple[int, ...]
    lines: tuple[Line, ...]
    # original bus number of each bus when imported from a case file
    source_ids: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(int(b) for b in self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        n = len(self.buses)
        if n == 0:
            raise GridValidationError("topology has no buses")
        if self.buses != tuple(range(1, n + 1)):
            raise GridValidationError("bus ids must be unique and contiguous 1..n")
        for k, line in enumerate(self.lines):
            for end in (line.from_bus, line.to_bus):
                if not 1 <= end <= n:
                    raise GridValidationError(f"line {k} references unknown bus {end}")
            if line.from_bus == line.to_bus:
                raise GridValidationError(f"line {k} is a self-loop at bus {line.from_bus}")
            if not (line.b > 0 and math.isfinite(line.b)):
                raise GridValidationError(f"line {k} has non-positive susceptance {line.b}")
        if self.source_ids is not None and len(self.source_ids) != n:
            raise GridValidationError("source_ids must have one entry per bus")

    @property
    def n(self) -> int:
        return len(self.buses)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int, float]]) -> GridTopology:
        return cls(tuple(range(1, n + 1)), tuple(Line(int(i), int(j), float(b)) for i, j, b in edges))


@dataclass(frozen=True)
class MeasurementDescriptor:
    """One meter: a line flow (``line`` set) or a bus phase angle (``bus`` set).

    ``reverse`` flips the flow orientation to to_bus -> from_bus.
    """

    kind: str
    line: int | None = None
    bus: int | None = None
    reverse: bool = False
    corruptible: bool = True

    def __post_init__(self):
        if self.kind == "flow":
            if self.line is None or self.bus is not None:
                raise GridValidationError("flow meter needs a line index and no bus")
        elif self.kind == "angle":
            if self.bus is None or self.line is not None or self.reverse:
                raise GridValidationError("angle meter needs a bus id and no line")
        else:
            raise GridValidationError(f"unknown meter kind {self.kind!r}")

    @classmethod
    def flow(cls, line: int, *, reverse: bool = False, corruptible: bool = True):
        return cls("flow", line=int(line), reverse=bool(reverse), corruptible=bool(corruptible))

    @classmethod
    def angle(cls, bus: int, *, corruptible: bool = True):
        return cls("angle", bus=int(bus), corruptible=bool(corruptible))

    def endpoints(self, topology: GridTopology) -> tuple[int, int | None]:
        """(from bus, to bus) for flows, (bus, None) for angles."""
        if self.kind == "angle":
            return self.bus, None
        line = topology.lines[self.line]
        if self.reverse:
            return line.to_bus, line.from_bus
        return line.from_bus, line.to_bus


def _matrix_rank(a: np.ndarray) -> int:
    if a.size == 0:
        return 0
    return int(np.linalg.matrix_rank(a))


@dataclass(frozen=True, eq=False)
class MeasurementSystem:
    """Topology, ordered meters, H and per-meter noise standard deviations.

    Build through :func:`build_measurement_system`, which validates.
    """

    topology: GridTopology
    meters: tuple[MeasurementDescriptor, ...]
    H: np.ndarray
    sigma: np.ndarray  # per-meter standard deviation; covariance is diag(sigma**2)

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def Sigma(self) -> np.ndarray:
        return np.diag(self.sigma**2)

    @property
    def corruptible(self) -> np.ndarray:
        return np.array([mt.corruptible for mt in self.meters], dtype=bool)

    @property
    def protected(self) -> tuple[int, ...]:
        return tuple(k for k, mt in enumerate(self.meters) if not mt.corruptible)

    @property
    def redundant(self) -> bool:
        return self.m > self.n

    def with_protection(self, protected: Iterable[int]) -> MeasurementSystem:
        """Copy of the system whose incorruptible set is exactly ``protected``."""
        prot = set(int(k) for k in protected)
        if any(not 0 <= k < self.m for k in prot):
            raise GridValidationError("protected index out of range")
        meters = tuple(replace(mt, corruptible=k not in prot) for k, mt in enumerate(self.meters))
        return MeasurementSystem(self.topology, meters, self.H, self.sigma)

    def subset(self, keep: Sequence[bool] | Sequence[int]) -> MeasurementSystem:
        """System restricted to the kept meters (boolean mask or index list)."""
        keep = np.asarray(keep)
        idx = np.flatnonzero(keep) if keep.dtype == bool else keep.astype(int)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", InsufficientRedundancyWarning)
            return build_measurement_system(
                self.topology, [self.meters[k] for k in idx], self.sigma[idx]
            )

    def to_graph(self) -> MeasurementGraph:
        return to_graph(self)

    def __eq__(self, other):
        if not isinstance(other, MeasurementSystem):
            return NotImplemented
        return (
            self.topology == other.topology
            and self.meters == other.meters
            and np.array_equal(self.H, other.H)
            and np.array_equal(self.sigma, other.sigma)
        )

    __hash__ = None


def build_measurement_system(
    topology: GridTopology,
    meters: Sequence[MeasurementDescriptor],
    sigmas: Sequence[float] | float,
) -> MeasurementSystem:
    """Lay out H row by row and validate observability.

    Raises UnobservableSystemError when rank(H) < n; warns with
    InsufficientRedundancyWarning when m <= n.
    """
    meters = tuple(meters)
    if not meters:
        raise GridValidationError("at least one meter is required")
    m, n = len(meters), topology.n
    sigma = np.array(sigmas, dtype=float)
    if sigma.ndim == 0:
        sigma = np.full(m, float(sigma))
    if sigma.shape != (m,):
        raise GridValidationError(f"expected {m} noise standard deviations, got {sigma.shape[0]}")
    if not np.all(sigma > 0) or not np.all(np.isfinite(sigma)):
        raise GridValidationError("noise standard deviations must be positive")

    H = np.zeros((m, n))
    for k, mt in enumerate(meters):
        if mt.kind == "flow":
            if not 0 <= mt.line < len(topology.lines):
                raise GridValidationError(f"meter {k} references unknown line {mt.line}")
            b = topology.lines[mt.line].b
            i, j = mt.endpoints(topology)
            H[k, i - 1] = b
            H[k, j - 1] = -b
        else:
            if not 1 <= mt.bus <= n:
                raise GridValidationError(f"meter {k} references unknown bus {mt.bus}")
            H[k, mt.bus - 1] = 1.0

    rank = _matrix_rank(H)
    if rank < n:
        raise UnobservableSystemError(f"unobservable system: rank(H) = {rank} < n = {n}")
    if m <= n:
        warnings.warn(
            f"insufficient redundancy: m = {m} <= n = {n}; bad-data detection disabled",
            InsufficientRedundancyWarning,
            stacklevel=2,
        )
    H.setflags(write=False)
    sigma.setflags(write=False)
    return MeasurementSystem(topology, meters, H, sigma)


@dataclass(frozen=True, eq=False)
class MeasurementGraph:
    """Multigraph on n+1 nodes with one edge per measurement row.

    Edge k runs tail[k] -> head[k]; in the signed incidence A_H the tail
    carries +1 and the head -1. Angle meters end at the reference node n.
    ``magnitude`` restores the augmented matrix: H_hat = A_H * magnitude.
    """

    n_nodes: int
    tail: np.ndarray
    head: np.ndarray
    magnitude: np.ndarray
    corruptible: np.ndarray
    sigma: np.ndarray = field(default=None)

    def __post_init__(self):
        m = len(self.tail)
        arrays = {
            "tail": np.asarray(self.tail, dtype=np.int64),
            "head": np.asarray(self.head, dtype=np.int64),
            "magnitude": np.asarray(self.magnitude, dtype=float),
            "corruptible": np.asarray(self.corruptible, dtype=bool),
            "sigma": np.ones(m) if self.sigma is None else np.asarray(self.sigma, dtype=float),
        }
        for name, arr in arrays.items():
            if arr.shape != (m,):
                raise GridValidationError(f"{name} must have one entry per edge")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if m and (arrays["tail"].min() < 0 or arrays["head"].max() >= self.n_nodes
                  or arrays["head"].min() < 0 or arrays["tail"].max() >= self.n_nodes):
            raise GridValidationError("edge endpoint out of range")
        if np.any(arrays["tail"] == arrays["head"]):
            raise GridValidationError("self-loop edge")

    @classmethod
    def from_edges(
        cls,
        n: int,
        edges: Sequence[tuple[int, int]],
        protected: Iterable[int] = (),
        magnitudes: Sequence[float] | None = None,
    ) -> MeasurementGraph:
        """Graph on ``n`` physical nodes plus reference node ``n``."""
        edges = list(edges)
        prot = set(protected)
        return cls(
            n_nodes=n + 1,
            tail=[u for u, _ in edges],
            head=[v for _, v in edges],
            magnitude=np.ones(len(edges)) if magnitudes is None else magnitudes,
            corruptible=[k not in prot for k in range(len(edges))],
        )

    @property
    def n(self) -> int:
        return self.n_nodes - 1

    @property
    def ref(self) -> int:
        return self.n_nodes - 1

    @property
    def m(self) -> int:
        return len(self.tail)

    @property
    def protected(self) -> tuple[int, ...]:
        return tuple(int(k) for k in np.flatnonzero(~self.corruptible))

    @property
    def A_H(self) -> np.ndarray:
        A = np.zeros((self.m, self.n_nodes))
        rows = np.arange(self.m)
        A[rows, self.tail] = 1.0
        A[rows, self.head] = -1.0
        return A

    @property
    def H_hat(self) -> np.ndarray:
        return self.A_H * self.magnitude[:, None]

    def with_protection(self, protected: Iterable[int]) -> MeasurementGraph:
        prot = set(int(k) for k in protected)
        mask = np.array([k not in prot for k in range(self.m)], dtype=bool)
        return replace(self, corruptible=mask)

    def is_connected(self, removed: Iterable[int] = ()) -> bool:
        keep = np.ones(self.m, dtype=bool)
        keep[list(removed)] = False
        adj = coo_matrix(
            (np.ones(int(keep.sum())), (self.tail[keep], self.head[keep])),
            shape=(self.n_nodes, self.n_nodes),
        )
        count, _ = connected_components(adj, directed=False)
        return count == 1


def to_graph(system: MeasurementSystem) -> MeasurementGraph:
    """Map each row of H to an edge of the measurement multigraph."""
    n = system.n
    tail, head, mag = [], [], []
    for mt in system.meters:
        i, j = mt.endpoints(system.topology)
        tail.append(i - 1)
        if mt.kind == "flow":
            head.append(j - 1)
            mag.append(system.topology.lines[mt.line].b)
        else:
            head.append(n)
            mag.append(1.0)
    graph = MeasurementGraph(n + 1, tail, head, mag, system.corruptible, system.sigma)
    connected = graph.is_connected()
    full_rank = _matrix_rank(system.H) == n
    if connected != full_rank:
        raise AssertionError("graph connectivity disagrees with rank(H)")
    if not connected:
        raise UnobservableSystemError("unobservable system: measurement graph is disconnected")
    return graph


def place_meters(
    topology: GridTopology,
    phasor_buses: Iterable[int],
    sigma: float = 0.01,
    protected: Iterable[int] = (),
) -> MeasurementSystem:
    """Flow meters on every line (in line order), then angle meters on ``phasor_buses``."""
    meters = [MeasurementDescriptor.flow(k) for k in range(len(topology.lines))]
    meters += [MeasurementDescriptor.angle(b) for b in sorted(set(phasor_buses))]
    system = build_measurement_system(topology, meters, sigma)
    prot = tuple(protected)
    return system.with_protection(prot) if prot else system


def random_system(
    rng: np.random.Generator,
    n_buses: int,
    n_meters: int,
    *,
    extra_lines: int | None = None,
    sigma: float = 0.1,
) -> MeasurementSystem:
    """Random observable system with ``n_meters`` > ``n_buses`` meters.

    A random spanning tree of flow meters plus one angle meter guarantees a
    connected measurement graph; the remaining meters are random flows
    (duplicates allowed) and angles, and the meter order is shuffled.
    """
    if n_meters <= n_buses:
        raise ValueError("need n_meters > n_buses")
    n = n_buses
    tree = [(int(rng.integers(0, k)) + 1, k + 1) for k in range(1, n)]
    pairs = {tuple(sorted(e)) for e in tree}
    possible = [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1) if (i, j) not in pairs]
    if extra_lines is None:
        extra_lines = int(rng.integers(0, min(len(possible), n) + 1))
    extra = [possible[k] for k in rng.permutation(len(possible))[:extra_lines]]
    edges = tree + extra
    topology = GridTopology.from_edges(
        n, [(i, j, float(np.round(rng.uniform(0.5, 20.0), 4))) for i, j in edges]
    )

    meters = [MeasurementDescriptor.flow(k, reverse=bool(rng.integers(2))) for k in range(n - 1)]
    meters.append(MeasurementDescriptor.angle(int(rng.integers(1, n + 1))))
    while len(meters) < n_meters:
        if rng.random() < 0.6:
            meters.append(MeasurementDescriptor.flow(
                int(rng.integers(len(edges))), reverse=bool(rng.integers(2))))
        else:
            meters.append(MeasurementDescriptor.angle(int(rng.integers(1, n + 1))))
    meters = [meters[k] for k in rng.permutation(len(meters))]
    return build_measurement_system(topology, meters, sigma)


# ---------------------------------------------------------------- MATPOWER

_BLOCK = re.compile(r"mpc\.(bus|branch)\s*=\s*\[")


def _matpower_rows(text: str, name: str) -> list[tuple[int, list[str]]]:
    """Rows of the ``mpc.<name>`` table as (line number, fields)."""
    lines = text.splitlines()
    for start, raw in enumerate(lines):
        code = raw.split("%", 1)[0]
        match = _BLOCK.search(code)
        if match and match.group(1) == name:
            break
    else:
        raise MatpowerParseError(f"missing mpc.{name} table")

    body = [(start + 1, code[match.end():])]
    body += [(k + 1, raw.split("%", 1)[0]) for k, raw in enumerate(lines[start + 1:], start + 1)]
    rows = []
    for lineno, code in body:
        stop = code.find("]")
        for piece in (code if stop < 0 else code[:stop]).split(";"):
            fields = piece.replace(",", " ").split()
            if fields:
                rows.append((lineno, fields))
        if stop >= 0:
            return rows
    raise MatpowerParseError(f"unterminated mpc.{name} table", len(lines))


def _number(token: str, lineno: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise MatpowerParseError(f"non-numeric field {token!r}", lineno) from None


def import_matpower(text: str) -> GridTopology:
    """Read bus numbers and branch from/to/reactance from a MATPOWER case.

    Buses are renumbered 1..n in table order; ``source_ids`` keeps the
    original numbers. Susceptance magnitude is 1/|x|.
    """
    bus_rows = _matpower_rows(text, "bus")
    branch_rows = _matpower_rows(text, "branch")
    if not bus_rows:
        raise MatpowerParseError("empty mpc.bus table")

    ids: dict[int, int] = {}
    for lineno, fields in bus_rows:
        value = _number(fields[0], lineno)
        if value != int(value):
            raise MatpowerParseError(f"bus number {fields[0]!r} is not an integer", lineno)
        if int(value) in ids:
            raise MatpowerParseError(f"duplicate bus {int(value)}", lineno)
        ids[int(value)] = len(ids) + 1

    lines = []
    for lineno, fields in branch_rows:
        if len(fields) < 4:
            raise MatpowerParseError("branch row needs at least 4 columns", lineno)
        f, t, _, x = (_number(tok, lineno) for tok in fields[:4])
        for end in (f, t):
            if int(end) not in ids:
                raise MatpowerParseError(f"branch references unknown bus {int(end)}", lineno)
        if x == 0:
            raise MatpowerParseError("zero reactance", lineno)
        lines.append(Line(ids[int(f)], ids[int(t)], 1.0 / abs(x)))
    try:
        return GridTopology(tuple(range(1, len(ids) + 1)), tuple(lines), tuple(ids))
    except GridValidationError as exc:
        raise MatpowerParseError(str(exc)) from None


CASE14_SHA256 = "1d793bee79c89d1572e760741e5c0817057165b2af22d472f56d37a5a330301c"


def ieee14() -> GridTopology:
    """The vendored IEEE 14-bus case."""
    return import_matpower(ieee14_text())


def ieee14_text() -> str:
    raw = resources.files("gridattack").joinpath("data/case14.m").read_bytes()
    if hashlib.sha256(raw).hexdigest() != CASE14_SHA256:
        raise GridValidationError("vendored case14.m does not match its checksum")
    return raw.decode("utf-8")


# ---------------------------------------------------------------- native JSON


def _fmt(x: float) -> float:
    return float(f"{x:.9g}")


def dump_grid(system: MeasurementSystem | GridTopology, seed: int | None = None) -> str:
    """Serialize to the native JSON grid document.

    Keys are sorted and floats rounded to 9 significant digits, so output
    is byte-stable for identical input.
    """
    topology = system if isinstance(system, GridTopology) else system.topology
    doc: dict = {
        "buses": list(topology.buses),
        "lines": [{"from": ln.from_bus, "to": ln.to_bus, "b": _fmt(ln.b)} for ln in topology.lines],
    }
    if isinstance(system, MeasurementSystem):
        pair_count: dict[frozenset, int] = {}
        for ln in topology.lines:
            key = frozenset((ln.from_bus, ln.to_bus))
            pair_count[key] = pair_count.get(key, 0) + 1
        meters = []
        for mt, s in zip(system.meters, system.sigma):
            i, j = mt.endpoints(topology)
            entry = {"kind": mt.kind, "sigma": _fmt(s), "corruptible": mt.corruptible}
            if mt.kind == "flow":
                entry["target"] = [i, j]
                if pair_count[frozenset((i, j))] > 1:
                    entry["line"] = mt.line
            else:
                entry["target"] = i
            meters.append(entry)
        doc["meters"] = meters
    if seed is not None:
        doc["seed"] = int(seed)
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def load_grid(text: str) -> tuple[MeasurementSystem | GridTopology, int | None]:
    """Parse a native grid document.

    Returns a MeasurementSystem when ``meters`` is present, else the bare
    GridTopology, together with the optional ``seed``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GridValidationError(f"invalid grid JSON: {exc}") from None
    if not isinstance(doc, dict) or "buses" not in doc or "lines" not in doc:
        raise GridValidationError("grid document needs 'buses' and 'lines'")
    try:
        topology = GridTopology(
            tuple(doc["buses"]),
            tuple(Line(int(ln["from"]), int(ln["to"]), float(ln["b"])) for ln in doc["lines"]),
        )
    except (KeyError, TypeError) as exc:
        raise GridValidationError(f"malformed line entry: {exc}") from None
    seed = doc.get("seed")
    if "meters" not in doc:
        return topology, seed

    by_pair: dict[tuple[int, int], list[tuple[int, bool]]] = {}
    for k, ln in enumerate(topology.lines):
        by_pair.setdefault((ln.from_bus, ln.to_bus), []).append((k, False))
        by_pair.setdefault((ln.to_bus, ln.from_bus), []).append((k, True))
    meters, sigmas = [], []
    for pos, entry in enumerate(doc["meters"]):
        try:
            kind, target = entry["kind"], entry["target"]
            corruptible = bool(entry.get("corruptible", True))
            sigmas.append(float(entry["sigma"]))
        except (KeyError, TypeError) as exc:
            raise GridValidationError(f"meter {pos}: missing field {exc}") from None
        if kind == "angle":
            meters.append(MeasurementDescriptor.angle(int(target), corruptible=corruptible))
        elif kind == "flow":
            i, j = (int(t) for t in target)
            options = by_pair.get((i, j))
            if not options:
                raise GridValidationError(f"meter {pos}: no line between buses {i} and {j}")
            if "line" in entry:
                line = int(entry["line"])
                match = [o for o in options if o[0] == line]
                if not match:
                    raise GridValidationError(f"meter {pos}: line {line} does not join {i} and {j}")
                options = match
            line, reverse = options[0]
            meters.append(MeasurementDescriptor.flow(line, reverse=reverse, corruptible=corruptible))
        else:
            raise GridValidationError(f"meter {pos}: unknown kind {kind!r}")
    return build_measurement_system(topology, meters, sigmas), seed


def load_grid_source(source: str) -> MeasurementSystem | GridTopology:
    """Load ``ieee14``, a MATPOWER ``.m`` file or a native JSON document by path."""
    if source == "ieee14":
        return ieee14()
    with open(source, encoding="utf-8") as fh:
        text = fh.read()
    if source.endswith(".m"):
        return import_matpower(text)
    return load_grid(text)[0]
