"""WLS state estimation, chi-square bad-data detection and optimal bad-data removal."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import NamedTuple

import numpy as np
from scipy import linalg
from scipy.stats import chi2

from .errors import (
    CriticalMeasurementsError,
    DetectionUnavailableError,
    IdentificationFailedError,
    UnobservableSystemError,
)
from .grid import MeasurementSystem

DEFAULT_ALPHA = 0.01
DEFAULT_K_MAX = 6
# residual variance below this fraction of the meter variance marks a critical meter
CRITICAL_TOL = 1e-12
_SINGULAR_TOL = 1e-10
_CHUNK = 20000


@dataclass(frozen=True, eq=False)
class EstimationResult:
    x_star: np.ndarray
    r: np.ndarray
    J: float
    detected: bool
    threshold: float  # nan when detection is unavailable (m <= n)
    dof: int

    def to_dict(self) -> dict:
        return {
            "x_star": self.x_star.tolist(),
            "r": self.r.tolist(),
            "J": self.J,
            "detected": self.detected,
            "lambda": None if np.isnan(self.threshold) else self.threshold,
            "dof": self.dof,
        }


@dataclass(frozen=True, eq=False)
class CleanupResult:
    mask: np.ndarray  # True = kept, False = removed
    removed: tuple[int, ...]
    estimate: EstimationResult  # on the reduced system
    threshold: float
    observable: bool

    @property
    def removed_count(self) -> int:
        return len(self.removed)

    def to_dict(self) -> dict:
        return {
            "removed": list(self.removed),
            "removed_count": self.removed_count,
            "lambda_d": self.threshold,
            "observable": self.observable,
            "estimate": self.estimate.to_dict(),
        }


class ResidualAnalysis(NamedTuple):
    r: np.ndarray
    R_r: np.ndarray
    normalized: np.ndarray


def _whitened_basis(system: MeasurementSystem) -> np.ndarray:
    """Orthonormal basis Q of range(Sigma^-1/2 H)."""
    q, rr = np.linalg.qr(system.H / system.sigma[:, None])
    diag = np.abs(np.diag(rr))
    if diag.size == 0 or diag.min() <= _SINGULAR_TOL * max(diag.max(), 1.0):
        raise UnobservableSystemError("unobservable system: singular gain matrix")
    return q


def detect(J: float, dof: int, alpha: float = DEFAULT_ALPHA) -> tuple[bool, float]:
    """Chi-square test on the weighted residual norm.

    The threshold is sqrt of the (1 - alpha) quantile of chi-square with
    ``dof`` degrees of freedom, since J is a norm and not its square.
    """
    if dof <= 0:
        raise DetectionUnavailableError(f"detection unavailable: dof = {dof}")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    lam = float(np.sqrt(chi2.ppf(1.0 - alpha, dof)))
    return bool(J > lam), lam


def wls_estimate(system: MeasurementSystem, z, alpha: float = DEFAULT_ALPHA) -> EstimationResult:
    """Solve the normal equations (H^T W H) x = H^T W z by Cholesky, W = Sigma^-1."""
    z = np.asarray(z, dtype=float)
    if z.shape != (system.m,):
        raise ValueError(f"z must have length {system.m}")
    w = 1.0 / system.sigma**2
    gain = system.H.T @ (system.H * w[:, None])
    try:
        factor = linalg.cho_factor(gain)
    except linalg.LinAlgError:
        raise UnobservableSystemError("unobservable system: singular gain matrix") from None
    x = linalg.cho_solve(factor, system.H.T @ (w * z))
    r = z - system.H @ x
    J = float(np.linalg.norm(r / system.sigma))
    dof = system.m - system.n
    if dof > 0:
        detected, lam = detect(J, dof, alpha)
    else:
        detected, lam = False, float("nan")
    return EstimationResult(x, r, J, detected, lam, dof)


def residual_analysis(system: MeasurementSystem, z, x_star=None) -> ResidualAnalysis:
    """Residuals, their covariance R_r = (I - K) Sigma and normalized residuals.

    Normalized residuals of critical meters (zero residual variance) are 0.
    """
    z = np.asarray(z, dtype=float)
    if x_star is None:
        x_star = wls_estimate(system, z).x_star
    r = z - system.H @ np.asarray(x_star, dtype=float)
    q = _whitened_basis(system)
    s = system.sigma
    omega = np.eye(system.m) - q @ q.T
    R_r = omega * np.outer(s, s)
    var = np.diag(R_r)
    critical = np.diag(omega) < CRITICAL_TOL
    normalized = np.zeros(system.m)
    normalized[~critical] = np.abs(r[~critical]) / np.sqrt(var[~critical])
    return ResidualAnalysis(r, R_r, normalized)


def _ordered_candidates(pool: list[int], k: int, score: np.ndarray) -> np.ndarray:
    """All k-subsets of ``pool`` by descending score sum, then lexicographically."""
    combos = np.array(list(combinations(pool, k)), dtype=np.int64).reshape(-1, k)
    if combos.size == 0:
        return combos
    totals = np.round(score[combos].sum(axis=1), 10)
    # lexsort keys are read last-to-first: primary -total, then columns left to right
    order = np.lexsort(tuple(combos[:, c] for c in reversed(range(k))) + (-totals,))
    return combos[order]


def identify_and_clean(
    system: MeasurementSystem,
    z,
    alpha: float = DEFAULT_ALPHA,
    k_max: int = DEFAULT_K_MAX,
) -> CleanupResult:
    """Remove the fewest measurements that restore a passing residual.

    Every removal set of size 1..k_max is examined, smallest size first;
    within a size, sets are visited by descending sum of normalized
    residuals with lexicographic tie-break and the first set that keeps
    rank(H_d) = n with J_d <= lambda_d wins. lambda_d uses the reduced
    degrees of freedom (m - k) - n, which must stay >= 1.

    Candidate screening uses the deletion identity
    J_d^2 = J^2 - r_R^T Omega_RR^-1 r_R in whitened coordinates, where
    Omega_RR is singular exactly when removing R loses observability. The
    winning set is re-estimated directly.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    z = np.asarray(z, dtype=float)
    est = wls_estimate(system, z, alpha)
    m, n = system.m, system.n
    if m <= n:
        raise DetectionUnavailableError("detection unavailable: m <= n")
    if not est.detected:
        return CleanupResult(np.ones(m, dtype=bool), (), est, est.threshold, True)

    q = _whitened_basis(system)
    omega = np.eye(m) - q @ q.T
    rw = est.r / system.sigma
    diag = np.diag(omega)
    critical = diag < CRITICAL_TOL
    normalized = np.zeros(m)
    normalized[~critical] = np.abs(rw[~critical]) / np.sqrt(diag[~critical])
    pool = [k for k in range(m) if not critical[k]]
    if not pool:
        raise CriticalMeasurementsError("every measurement is critical; removal breaks observability")

    J2 = est.J**2
    best = None
    for k in range(1, k_max + 1):
        dof_d = m - k - n
        if dof_d < 1 or k > len(pool):
            break
        _, lam_d = detect(0.0, dof_d, alpha)
        candidates = _ordered_candidates(pool, k, normalized)
        for start in range(0, len(candidates), _CHUNK):
            chunk = candidates[start:start + _CHUNK]
            sub = omega[chunk[:, :, None], chunk[:, None, :]]
            ok = np.linalg.eigvalsh(sub)[:, 0] > _SINGULAR_TOL
            rr = rw[chunk]
            Jd = np.full(len(chunk), np.inf)
            if ok.any():
                sol = np.linalg.solve(sub[ok], rr[ok][:, :, None])[:, :, 0]
                Jd[ok] = np.sqrt(np.maximum(J2 - np.einsum("ij,ij->i", rr[ok], sol), 0.0))
            ratio = Jd / lam_d
            pos = int(np.argmin(ratio))
            if best is None or ratio[pos] < best[0]:
                best = (float(ratio[pos]), tuple(int(i) for i in chunk[pos]))
            for idx in np.flatnonzero(ratio <= 1.0 + 1e-9):
                removed = tuple(int(i) for i in chunk[idx])
                result = _clean(system, z, removed, alpha)
                if result is not None:
                    return result
    raise IdentificationFailedError(
        f"identification failed: no removal set of size <= {k_max} passes", best=best
    )


def _clean(system: MeasurementSystem, z, removed: tuple[int, ...], alpha: float) -> CleanupResult | None:
    mask = np.ones(system.m, dtype=bool)
    mask[list(removed)] = False
    try:
        reduced = system.subset(mask)
    except UnobservableSystemError:
        return None
    est = wls_estimate(reduced, z[mask], alpha)
    if est.detected:
        return None
    return CleanupResult(mask, removed, est, est.threshold, True)
