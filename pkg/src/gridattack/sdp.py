"""Semidefinite relaxation of the feasible-cut problem and hyperplane rounding.

The relaxation is

    minimize <L1, X>  subject to  diag(X) = 1,  <L2, X> <= -4,  X PSD,

where L1 is the unit-weight Laplacian of the measurement graph and L2 the
signed Laplacian (+1 on protected edges, -1 on corruptible ones). It is
solved on the low-rank factorization X = V^T V, with unit columns of V
keeping diag(X) = 1 and an augmented Lagrangian handling the inequality.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import RelaxationUnsolvedError
from .graphcut import Cut, cut_of_partition
from .grid import MeasurementGraph

FEASIBILITY_TOL = 1e-4
DEFAULT_RESTARTS = 20
DEFAULT_TRIALS = 200
MAX_NODES = 500
# L1 + L2 is twice the Laplacian of the protected edges, hence PSD, so any
# feasible X has <L1, X> >= -<L2, X> >= 4: reaching 4 certifies optimality.
LOWER_BOUND = 4.0


@dataclass(frozen=True, eq=False)
class LaplacianPair:
    L1: np.ndarray
    L2: np.ndarray


@dataclass(frozen=True, eq=False)
class GramFactor:
    B: np.ndarray  # k x (n+1); column i is the vector of node i, X = B^T B
    objective: float  # <L1, X>
    constraint_value: float  # <L2, X>
    diag_residual: float
    inequality_residual: float

    @property
    def X(self) -> np.ndarray:
        return self.B.T @ self.B

    @property
    def residual(self) -> float:
        return max(self.diag_residual, self.inequality_residual)


def _laplacian(n_nodes: int, tail, head, w) -> np.ndarray:
    L = np.zeros((n_nodes, n_nodes))
    np.add.at(L, (tail, head), -w)
    np.add.at(L, (head, tail), -w)
    np.add.at(L, (tail, tail), w)
    np.add.at(L, (head, head), w)
    return L


def build_laplacians(graph: MeasurementGraph) -> LaplacianPair:
    """Unit Laplacian and signed Laplacian; parallel edges accumulate."""
    ones = np.ones(graph.m)
    signed = np.where(graph.corruptible, -1.0, 1.0)
    return LaplacianPair(
        _laplacian(graph.n_nodes, graph.tail, graph.head, ones),
        _laplacian(graph.n_nodes, graph.tail, graph.head, signed),
    )


def _normalize(U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(U, axis=0)
    norms = np.where(norms < 1e-12, 1e-12, norms)
    return U / norms, norms


def _solve_once(L1, L2, U0, max_outer=60):
    k, N = U0.shape
    mult, mu = 0.0, 10.0
    U = U0.copy()
    prev_violation = np.inf

    def fun(flat):
        Uc = flat.reshape(k, N)
        V, norms = _normalize(Uc)
        f = np.sum((V @ L1) * V)
        g = np.sum((V @ L2) * V) + 4.0
        shifted = max(0.0, g + mult / mu)
        val = f + 0.5 * mu * shifted**2 - 0.5 * mult**2 / mu
        gV = 2.0 * V @ L1 + (2.0 * mu * shifted) * (V @ L2)
        gU = (gV - V * np.sum(V * gV, axis=0)) / norms
        return val, gU.ravel()

    for _ in range(max_outer):
        res = minimize(fun, U.ravel(), jac=True, method="L-BFGS-B",
                       options={"maxiter": 500, "gtol": 1e-10, "ftol": 1e-14})
        U = res.x.reshape(k, N)
        V, _ = _normalize(U)
        g = np.sum((V @ L2) * V) + 4.0
        violation = max(g, 0.0)
        new_mult = max(0.0, mult + mu * g)
        converged = violation <= 1e-9 and abs(new_mult - mult) <= 1e-8 * max(1.0, mult)
        mult = new_mult
        if converged:
            break
        if violation > 0.25 * prev_violation:
            mu = min(mu * 2.0, 1e9)
        prev_violation = violation
        # rescale so the factor stays well conditioned across outer steps
        U = V
    return _normalize(U)[0]


def solve_sdp(
    pair: LaplacianPair,
    restarts: int = DEFAULT_RESTARTS,
    seed: int | None = 0,
    rank: int | None = None,
) -> GramFactor:
    """Best of ``restarts`` low-rank solves from random starts.

    Rank defaults to ceil(sqrt(2(n+1))). Restarts stop early once a
    feasible factor attains the certified lower bound. Raises
    RelaxationUnsolvedError when no restart reaches constraint residual
    <= FEASIBILITY_TOL; that is not a proof of infeasibility.
    """
    L1, L2 = pair.L1, pair.L2
    N = L1.shape[0]
    if N > MAX_NODES:
        raise ValueError(f"relaxation limited to {MAX_NODES} nodes")
    k = rank or math.ceil(math.sqrt(2 * N))
    rng = np.random.default_rng(seed)
    best, best_residual = None, np.inf
    for _ in range(restarts):
        V = _solve_once(L1, L2, rng.standard_normal((k, N)))
        X = V.T @ V
        factor = GramFactor(
            B=V,
            objective=float(np.sum(L1 * X)),
            constraint_value=float(np.sum(L2 * X)),
            diag_residual=float(np.max(np.abs(np.diag(X) - 1.0))),
            inequality_residual=float(max(0.0, np.sum(L2 * X) + 4.0)),
        )
        best_residual = min(best_residual, factor.residual)
        if factor.residual <= FEASIBILITY_TOL and (best is None or factor.objective < best.objective):
            best = factor
        if best is not None and best.objective <= LOWER_BOUND * (1.0 + 1e-8):
            break
    if best is None:
        raise RelaxationUnsolvedError(
            f"relaxation infeasible or unsolved (best residual {best_residual:.3g})",
            residual=best_residual,
        )
    return best


def gw_round(factor: GramFactor, graph: MeasurementGraph, trials: int = DEFAULT_TRIALS,
             seed: int | None = 0) -> Cut | None:
    """Random-hyperplane rounding; smallest cut with <L2, s s^T> < 0, or None.

    Node i gets label +1 when <B(:, i), w> >= 0 and -1 otherwise. Labelings
    that put every node on one side are skipped. Among equal-size cuts the
    earliest trial wins.
    """
    if trials <= 0:
        return None
    L2 = build_laplacians(graph).L2
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((trials, factor.B.shape[0]))
    labels = np.where(w @ factor.B >= 0.0, 1.0, -1.0)
    quad = np.einsum("ti,ij,tj->t", labels, L2, labels)
    crossing = labels[:, graph.tail] != labels[:, graph.head]
    size = crossing.sum(axis=1)
    ok = (quad < 0) & (size > 0)
    if not ok.any():
        return None
    candidates = np.flatnonzero(ok)
    t = int(candidates[np.argmin(size[candidates])])
    ref_label = labels[t, graph.ref]
    S = [v for v in range(graph.n) if labels[t, v] != ref_label]
    return cut_of_partition(graph, S)
