import numpy as np
import pytest

from wavecov.worstcase import (
    max_power_over_ball,
    min_power_over_ball,
    worst_case_power_map,
)

from conftest import make_small_field, random_covariance


def test_one_dimensional_oracle():
    # M=1, R=[[r]], a scalar: extremes are r (|a| -/+ sqrt(eps))^2
    r_mat = np.array([[1.0 + 0j]])
    a = np.array([1.0 + 0j])
    w = np.array([1.0])
    lo = min_power_over_ball(r_mat, a, w, 0.25)
    hi = max_power_over_ball(r_mat, a, w, 0.25)
    assert lo.power == pytest.approx(0.25, abs=1e-12)
    assert hi.power == pytest.approx(2.25, abs=1e-12)
    assert lo.kkt_residual <= 1e-10 and hi.kkt_residual <= 1e-10
    assert lo.slackness_residual <= 1e-10


def test_min_reaches_zero_when_ball_swallows_a():
    # |a| < sqrt(eps): the perturbation can cancel a entirely
    r_mat = np.array([[2.0 + 0j]])
    a = np.array([0.3 + 0j])
    sol = min_power_over_ball(r_mat, a, np.array([1.0]), 0.25)
    assert sol.power == pytest.approx(0.0, abs=1e-12)
    assert sol.case == "interior"
    assert sol.multiplier == pytest.approx(0.0, abs=1e-12)


def test_eps_zero_degenerate():
    rng = np.random.default_rng(0)
    r_mat = random_covariance(rng, 3)
    a = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    nominal = float(np.real(a.conj() @ r_mat @ a))
    lo = min_power_over_ball(r_mat, a, np.ones(3), 0.0)
    hi = max_power_over_ball(r_mat, a, np.ones(3), 0.0)
    assert lo.power == pytest.approx(nominal, rel=1e-12)
    assert hi.power == pytest.approx(nominal, rel=1e-12)
    assert np.all(lo.perturbation == 0) and np.all(hi.perturbation == 0)


def test_hard_case_max():
    # R a = 0 with R = diag(mu1, 0): the linear term vanishes, so the max is
    # eps * mu1 along the dominant eigenvector
    mu1 = 3.0
    r_mat = np.diag([mu1, 0.0]).astype(complex)
    a = np.array([0.0, 1.0], dtype=complex)
    eps = 0.4
    sol = max_power_over_ball(r_mat, a, np.ones(2), eps)
    assert sol.case == "hard_case"
    assert sol.power == pytest.approx(eps * mu1, rel=1e-12)


def test_weighted_ball_changes_extremes():
    rng = np.random.default_rng(1)
    r_mat = random_covariance(rng, 3)
    a = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    hi_iso = max_power_over_ball(r_mat, a, np.ones(3), 0.1)
    # heavier weights shrink the ball -> smaller maximum
    hi_wt = max_power_over_ball(r_mat, a, 4.0 * np.ones(3), 0.1)
    assert hi_wt.power < hi_iso.power
    hi_half = max_power_over_ball(r_mat, a, np.ones(3), 0.1 / 4.0)
    assert hi_wt.power == pytest.approx(hi_half.power, rel=1e-10)


def test_sampling_sandwich_and_kkt():
    rng = np.random.default_rng(42)
    for _ in range(30):
        m = int(rng.integers(1, 9))
        r_mat = random_covariance(rng, m)
        a = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        w = rng.uniform(0.5, 2.0, m)
        eps = float(rng.uniform(0.01, 1.0))
        lo = min_power_over_ball(r_mat, a, w, eps)
        hi = max_power_over_ball(r_mat, a, w, eps)
        assert lo.power <= hi.power + 1e-12
        assert lo.kkt_residual <= 1e-8
        assert hi.kkt_residual <= 1e-8
        # boundary/interior feasibility of the returned extremizers
        for sol in (lo, hi):
            nrm = float(np.sum(w * np.abs(sol.perturbation) ** 2))
            assert nrm <= eps + 1e-9
        for _ in range(200):
            z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
            z *= np.sqrt(eps / np.sum(w * np.abs(z) ** 2)) * rng.uniform()
            p = float(np.real((a + z).conj() @ r_mat @ (a + z)))
            assert lo.power - 1e-9 <= p <= hi.power + 1e-9


def test_worst_case_power_map(small_field):
    rng = np.random.default_rng(9)
    r_mat = random_covariance(rng, small_field.element_count)
    pmap = worst_case_power_map(r_mat, small_field)
    assert pmap.scenario == "worst_case"
    assert pmap.values.size == 7
    assert len(pmap.solutions) == 7
    # worst-case healthy >= nominal, worst-case tumor <= nominal
    for vec, p in zip(small_field.healthy_vectors, pmap.healthy_values):
        nominal = float(np.real(vec.entries.conj() @ r_mat @ vec.entries))
        assert p >= nominal - 1e-10
    for vec, p in zip(small_field.tumor_vectors, pmap.tumor_values):
        nominal = float(np.real(vec.entries.conj() @ r_mat @ vec.entries))
        assert p <= nominal + 1e-10


def test_negative_eps_rejected():
    r_mat = np.eye(2, dtype=complex)
    a = np.ones(2, dtype=complex)
    with pytest.raises(ValueError):
        min_power_over_ball(r_mat, a, np.ones(2), -0.1)
    with pytest.raises(ValueError):
        max_power_over_ball(r_mat, a, np.ones(2), -0.1)
