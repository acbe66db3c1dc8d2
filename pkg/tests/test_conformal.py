import math

import numpy as np
import pytest

import conformal_control as cc
from conformal_control.conformal import conformal_index
from conftest import K_DIRECT_REF


class TestConformalQuantile:
    def test_order_statistic(self):
        scores = list(range(1, 20))
        assert cc.conformal_quantile(scores, 0.05) == 19.0

    def test_single_score(self):
        assert cc.conformal_quantile([5.0], 0.5) == 5.0

    def test_insufficient_scores_give_infinity(self):
        assert math.isinf(cc.conformal_quantile(list(range(1, 10)), 0.05))

    def test_empty_scores_rejected(self):
        with pytest.raises(ValueError):
            cc.conformal_quantile([], 0.1)

    def test_conformal_index_exact(self):
        assert conformal_index(20, 0.05) == 19
        assert conformal_index(100, 0.1) == 90
        assert conformal_index(101, 0.05) == 96

    def test_coverage_monte_carlo(self):
        # Monte Carlo check of the split-conformal coverage bound: a fresh
        # score is covered with frequency about 0.90 for k=99, theta=0.1
        rng = np.random.default_rng(2024)
        trials = 100_000
        draws = rng.uniform(size=(trials, 100))
        q = np.partition(draws[:, 1:], 89, axis=1)[:, 89]
        freq = float((draws[:, 0] <= q).mean())
        assert abs(freq - 0.90) <= 0.02
        # package quantile agrees with the partition-based oracle on one row
        assert cc.conformal_quantile(draws[0, 1:], 0.1) == pytest.approx(q[0])

    def test_monotone_in_theta(self):
        rng = np.random.default_rng(1)
        scores = rng.exponential(size=40)
        thetas = [0.5, 0.3, 0.2, 0.1, 0.05]
        values = [cc.conformal_quantile(scores, t) for t in thetas]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        scores = rng.uniform(size=25)
        base = cc.conformal_quantile(scores, 0.1)
        for _ in range(5):
            assert cc.conformal_quantile(rng.permutation(scores), 0.1) == base


class TestPacAdjustedLevel:
    def test_remark_formula(self):
        assert cc.pac_adjusted_level(0.1, 0.01, 1000) == pytest.approx(0.052014, abs=1e-6)

    def test_beta_near_one_limit(self):
        assert cc.pac_adjusted_level(0.1, 1 - 1e-9, 10**6) == pytest.approx(0.1, abs=1e-6)

    def test_too_small_calibration_rejected(self):
        with pytest.raises(ValueError, match="too small"):
            cc.pac_adjusted_level(0.05, 0.5, 10)


class TestScores:
    def test_error_score_is_max_norm(self):
        e = np.array([[0.1, 0.0], [0.0, 0.5], [0.3, 0.0]])
        assert cc.score_error_trajectory(e) == 0.5

    def test_zero_trajectory(self):
        assert cc.score_error_trajectory(np.zeros((4, 2))) == 0.0

    def test_three_four_five(self):
        assert cc.score_error_trajectory(np.array([[3.0, 4.0]])) == 5.0

    def test_input_score_zero_gain(self):
        e = np.random.default_rng(0).normal(size=(5, 2))
        assert cc.score_input_trajectory(np.zeros((1, 2)), e) == 0.0

    def test_input_score_identity_gain(self):
        e = np.random.default_rng(1).normal(size=(5, 2))
        assert cc.score_input_trajectory(np.eye(2), e) == cc.score_error_trajectory(e)

    def test_input_score_projection(self):
        assert cc.score_input_trajectory(np.array([[1.0, 0.0]]), np.array([[2.0, 9.0]])) == 2.0

    def test_disturbance_score_identity(self):
        w = np.random.default_rng(2).normal(size=(6, 2))
        assert cc.score_disturbance_sequence(np.eye(2), w) == cc.score_error_trajectory(w)

    def test_disturbance_score_zero(self):
        assert cc.score_disturbance_sequence(np.eye(2), np.zeros((3, 2))) == 0.0

    def test_disturbance_score_scaling(self):
        w = np.array([[1.0, 0.0]])
        assert cc.score_disturbance_sequence(np.diag([2.0, 1.0]), w) == 2.0

    def test_infinity_norm_variant(self):
        e = np.array([[3.0, 4.0]])
        assert cc.score_error_trajectory(e, norm=np.inf) == 4.0


class TestCalibrateRegions:
    def test_one_step_memory_bound(self):
        # A + BK = 0: the error is just the previous disturbance, so the
        # radius cannot exceed the disturbance norm bound
        sys = cc.LinearSystem(A=np.eye(2), B=np.eye(2), N=20)
        K = -np.eye(2)
        rng = np.random.default_rng(0)
        raw = rng.normal(size=(40, 20, 2))
        r = 0.3
        cal = r * raw / np.linalg.norm(raw, axis=2, keepdims=True)
        region_e, region_u = cc.calibrate_regions(K, sys, cal, theta=0.1)
        assert region_e.radius <= r + 1e-12
        assert region_e.horizon == (1, 20)
        assert region_u.horizon == (0, 19)

    def test_insufficient_calibration(self, di_system):
        cal = np.zeros((5, 100, 2))
        with pytest.raises(cc.InsufficientCalibrationError) as err:
            cc.calibrate_regions(K_DIRECT_REF, di_system, cal, theta=0.001)
        assert err.value.required == cc.required_calibration_size(0.001)
        assert err.value.available == 4

    def test_all_but_allowed_fraction_covered(self, di_system, di_generator):
        theta = 0.05
        rng = np.random.default_rng(14)
        cal = di_generator.sample_sequences(rng, 100, 100)
        region_e, region_u = cc.calibrate_regions(K_DIRECT_REF, di_system, cal, theta)
        E = cc.simulate_error_batch(di_system, K_DIRECT_REF, cal)
        scores = np.linalg.norm(E, axis=2).max(axis=1)
        violations = int((scores > region_e.radius).sum())
        assert violations <= math.floor((cal.shape[0]) * theta)


class TestRequiredCalibrationSize:
    @pytest.mark.parametrize("theta", [0.5, 0.2, 0.1, 0.05, 0.01, 0.003])
    def test_is_minimal(self, theta):
        k = cc.required_calibration_size(theta)
        assert conformal_index(k + 1, theta) <= k
        if k > 1:
            assert conformal_index(k, theta) > k - 1


class TestRegions:
    def test_ball_membership_and_extent(self):
        ball = cc.BallRegion(radius=2.0, dim=2, level=0.95, horizon=(1, 10))
        assert ball.contains(np.array([1.0, 1.0]))
        assert not ball.contains(np.array([2.0, 1.0]))
        assert ball.weighted_extent(np.eye(2) / 4.0) == pytest.approx(1.0)
        assert ball.enclosing_radius == 2.0

    def test_ellipsoid_region_extent(self):
        region = cc.EllipsoidRegion(
            ellipsoid=cc.Ellipsoid(np.zeros(2), np.diag([4.0, 1.0])),
            level=0.95,
            horizon=(1, 10),
        )
        # farthest point along the second axis has norm 1
        assert region.enclosing_radius == pytest.approx(1.0)
        assert region.weighted_extent(np.eye(2)) == pytest.approx(1.0)
        assert region.weighted_extent(np.diag([1.0, 0.25])) == pytest.approx(0.5)

    def test_split_dataset_partition(self):
        seq = np.zeros((10, 4, 2))
        split = cc.SplitDataset(sequences=seq, k1=3)
        assert split.calibration.shape[0] == 4
        assert split.training.shape[0] == 6
        assert split.k == 9
        with pytest.raises(ValueError):
            cc.SplitDataset(sequences=np.zeros((4, 4, 2)), k1=2)
