import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import p2_system, t3_system
from gridattack.errors import (
    CriticalMeasurementsError,
    DetectionUnavailableError,
    IdentificationFailedError,
)
from gridattack.estimator import detect, identify_and_clean, residual_analysis, wls_estimate
from gridattack.grid import GridTopology, MeasurementDescriptor as MD, build_measurement_system, random_system

# Published chi-square quantiles (standard statistical tables).
CHI2_95_DOF1 = 3.841459
CHI2_99_DOF3 = 11.344867


def _lstsq(system, z):
    """Independent route: least squares on the whitened system via SVD."""
    w = 1.0 / system.sigma
    x, *_ = np.linalg.lstsq(system.H * w[:, None], np.asarray(z) * w, rcond=None)
    return x, float(np.linalg.norm((z - system.H @ x) * w))


def test_p2_consistent(p2):
    res = wls_estimate(p2, [0.5, 0.3, -0.2])
    assert np.allclose(res.x_star, [0.3, -0.2], atol=1e-12)
    assert res.J == pytest.approx(0, abs=1e-12)
    assert not res.detected and res.dof == 1


def test_p2_inconsistent_matches_hand_solution(p2):
    # H^T H = [[2,-1],[-1,2]], H^T z = [0.8,-0.4] -> x = [0.4, 0], r = [0.1,-0.1,0.1]
    z = [0.5, 0.3, 0.1]
    res = wls_estimate(p2, z)
    assert np.allclose(res.x_star, [0.4, 0.0], atol=1e-12)
    assert res.J == pytest.approx(np.sqrt(3), abs=1e-12)
    x, J = _lstsq(p2, np.array(z))
    assert np.allclose(res.x_star, x, atol=1e-9) and abs(res.J - J) < 1e-9


def test_zero_measurements(t3):
    res = wls_estimate(t3, np.zeros(6))
    assert np.all(res.x_star == 0) and res.J == 0


def test_detect_thresholds():
    assert detect(0.0, 4)[0] is False
    detected, lam = detect(1.0, 1, 0.05)
    assert lam == pytest.approx(np.sqrt(CHI2_95_DOF1), abs=1e-6)
    assert not detected
    detected, lam = detect(10.0, 3, 0.01)
    assert detected and lam == pytest.approx(np.sqrt(CHI2_99_DOF3), abs=1e-6)
    assert detect(lam + 1e-9, 3, 0.01)[0] and not detect(lam, 3, 0.01)[0]
    with pytest.raises(DetectionUnavailableError):
        detect(1.0, 0)


def test_square_system_has_zero_residual():
    topo = GridTopology.from_edges(2, [(1, 2, 1.0)])
    with pytest.warns(UserWarning):
        system = build_measurement_system(topo, [MD.flow(0), MD.angle(1)], 0.1)
    rng = np.random.default_rng(0)
    for _ in range(5):
        ra = residual_analysis(system, rng.normal(size=2))
        assert np.allclose(ra.r, 0, atol=1e-12)
        assert np.all(ra.normalized == 0)
    assert np.isnan(wls_estimate(system, [1.0, 2.0]).threshold)


def test_consistent_residual_is_zero(t3):
    ra = residual_analysis(t3, t3.H @ np.array([0.1, -0.3, 0.2]))
    assert np.allclose(ra.r, 0, atol=1e-10)


def _brute_normalized(system, z):
    Sigma = np.diag(system.sigma**2)
    W = np.linalg.inv(Sigma)
    K = system.H @ np.linalg.inv(system.H.T @ W @ system.H) @ system.H.T @ W
    r = (np.eye(system.m) - K) @ z
    Rr = (np.eye(system.m) - K) @ Sigma
    d = np.diag(Rr)
    return r, Rr, np.where(d < 1e-12, 0.0, np.abs(r) / np.sqrt(np.abs(d)))


def test_single_bad_datum_has_largest_normalized_residual(t3):
    z = t3.H @ np.array([0.1, 0.2, -0.1])
    z[5] += 1.0
    ra = residual_analysis(t3, z)
    r, Rr, norm = _brute_normalized(t3, z)
    assert np.allclose(ra.r, r, atol=1e-12) and np.allclose(ra.R_r, Rr, atol=1e-12)
    assert np.allclose(ra.normalized, norm, atol=1e-9)
    assert int(np.argmax(ra.normalized)) == 5


def test_critical_meter_has_zero_normalized_residual():
    # Bus 3 hangs off bus 2 by a single flow meter: that meter is critical.
    topo = GridTopology.from_edges(3, [(1, 2, 1.0), (2, 3, 1.0)])
    system = build_measurement_system(topo, [MD.flow(0), MD.flow(1), MD.angle(1), MD.angle(2)], 0.1)
    ra = residual_analysis(system, np.array([0.3, 0.5, -0.2, 0.4]))
    assert ra.normalized[1] == 0.0
    assert ra.R_r[1, 1] < 1e-12


def test_identify_single_bad_datum(t3):
    x = np.array([0.1, 0.2, -0.1])
    z = t3.H @ x
    z[5] += 10 * 0.1
    out = identify_and_clean(t3, z)
    assert out.removed == (5,)
    assert out.mask.tolist() == [1, 1, 1, 1, 1, 0]
    assert np.allclose(out.estimate.x_star, x, atol=1e-6)
    assert out.observable and out.estimate.J <= out.threshold


def test_identify_on_clean_data_removes_nothing(t3):
    out = identify_and_clean(t3, t3.H @ np.array([0.2, 0.0, 0.1]))
    assert out.removed_count == 0


def test_identify_prefers_removing_the_single_unattacked_meter():
    system = t3_system(protected=[3])
    x = np.array([0.05, -0.1, 0.2])
    z = system.H @ x
    z[[0, 1]] += 1.0  # kappa * H_hat e_1 on m1, m2; m4 left alone
    out = identify_and_clean(system, z)
    assert out.removed == (3,)
    assert np.allclose(out.estimate.x_star, x + [1.0, 0, 0], atol=1e-9)


def test_identification_failure_reports_best():
    system = random_system(np.random.default_rng(2), 5, 12)
    z = np.random.default_rng(3).normal(scale=5.0, size=system.m)
    with pytest.raises(IdentificationFailedError) as info:
        identify_and_clean(system, z, k_max=1)
    assert info.value.best is not None


def test_no_removal_when_reduced_system_has_no_redundancy():
    # one spare meter: any removal leaves dof 0, where no threshold exists
    topo = GridTopology.from_edges(2, [(1, 2, 1.0)])
    system = build_measurement_system(topo, [MD.flow(0), MD.angle(1), MD.angle(1)], 0.1)
    with pytest.raises(IdentificationFailedError):
        identify_and_clean(system, [0.0, 5.0, 0.0])


def test_detection_unavailable_without_redundancy():
    topo = GridTopology.from_edges(2, [(1, 2, 1.0)])
    with pytest.warns(UserWarning):
        system = build_measurement_system(topo, [MD.flow(0), MD.angle(1)], 0.1)
    with pytest.raises(DetectionUnavailableError):
        identify_and_clean(system, [1.0, 0.0])


def _random_case(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    system = random_system(rng, n, int(rng.integers(n + 1, 20)))
    return rng, system


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_equivariance_and_residual_invariance(seed):
    rng, system = _random_case(seed)
    z = rng.normal(scale=0.3, size=system.m)
    c = rng.normal(size=system.n)
    base, moved = wls_estimate(system, z), wls_estimate(system, z + system.H @ c)
    assert np.allclose(moved.x_star, base.x_star + c, atol=1e-9)
    assert abs(moved.J - base.J) < 1e-9


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matches_independent_least_squares(seed):
    rng, system = _random_case(seed)
    z = rng.normal(size=system.m)
    res = wls_estimate(system, z)
    x, J = _lstsq(system, z)
    assert np.allclose(res.x_star, x, atol=1e-9) and abs(res.J - J) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cleanup_is_idempotent_and_sound(seed):
    rng, system = _random_case(seed)
    if system.m - system.n < 3:
        return
    x = rng.normal(size=system.n)
    z = system.H @ x + system.sigma * rng.standard_normal(system.m)
    z[int(rng.integers(system.m))] += 50 * system.sigma[0]
    try:
        out = identify_and_clean(system, z, k_max=3)
    except (IdentificationFailedError, CriticalMeasurementsError):
        return
    if out.removed_count == 0:
        return
    H_d = system.H[out.mask.astype(bool)]
    assert np.linalg.matrix_rank(H_d) == system.n
    assert out.estimate.J <= out.threshold
    again = identify_and_clean(system.subset(out.mask.astype(bool)), np.asarray(z)[out.mask.astype(bool)])
    assert again.removed_count == 0
