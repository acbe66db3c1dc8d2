import numpy as np
import pytest

import conformal_control as cc
from conftest import DI_A, DI_B, K_DIRECT_REF, PHI_REF


def error_closed_form(A, B, K, w):
    """Independent oracle: e(t) = sum_{i=1..t} (A+BK)^{i-1} w(t-i)."""
    Abar = A + B @ K
    N, n = w.shape
    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(Abar @ powers[-1])
    e = np.zeros((N, n))
    for t in range(1, N + 1):
        e[t - 1] = sum(powers[i - 1] @ w[t - i] for i in range(1, t + 1))
    return e


class TestSimulateNominal:
    def test_identity_dynamics(self):
        sys = cc.LinearSystem(A=np.eye(2), B=np.zeros((2, 1)), N=5)
        z = cc.simulate_nominal(sys, [1.0, 2.0], np.ones((5, 1)))
        assert np.array_equal(z, np.tile([1.0, 2.0], (6, 1)))

    def test_double_integrator_one_step(self):
        sys = cc.LinearSystem(A=DI_A, B=DI_B, N=1)
        z = cc.simulate_nominal(sys, [2.0, -1.0], np.zeros((1, 1)))
        assert np.allclose(z[1], [1.5, -1.0])

    def test_pure_integrator_of_input(self):
        sys = cc.LinearSystem(A=np.zeros((2, 2)), B=np.eye(2), N=4)
        c = np.array([0.3, -0.7])
        z = cc.simulate_nominal(sys, [5.0, 5.0], np.tile(c, (4, 1)))
        assert np.allclose(z[1:], np.tile(c, (4, 1)))

    def test_dimension_mismatch(self):
        sys = cc.LinearSystem(A=np.eye(2), B=np.zeros((2, 1)), N=5)
        with pytest.raises(ValueError):
            cc.simulate_nominal(sys, [1.0, 2.0, 3.0], np.zeros((5, 1)))
        with pytest.raises(ValueError):
            cc.simulate_nominal(sys, [1.0, 2.0], np.zeros((4, 1)))


class TestSimulateError:
    def test_zero_disturbance(self):
        sys = cc.LinearSystem(A=DI_A, B=DI_B, N=10)
        e = cc.simulate_error(sys, K_DIRECT_REF, np.zeros((10, 2)))
        assert np.array_equal(e, np.zeros((10, 2)))

    def test_accumulator(self):
        sys = cc.LinearSystem(A=np.eye(2), B=np.zeros((2, 1)), N=6)
        c = np.array([0.5, -1.0])
        e = cc.simulate_error(sys, np.zeros((1, 2)), np.tile(c, (6, 1)))
        expected = np.outer(np.arange(1, 7), c)
        assert np.allclose(e, expected)

    def test_matches_closed_form(self):
        sys = cc.LinearSystem(A=DI_A, B=DI_B, N=30)
        w = np.random.default_rng(7).normal(size=(30, 2))
        e = cc.simulate_error(sys, K_DIRECT_REF, w)
        ref = error_closed_form(DI_A, DI_B, K_DIRECT_REF, w)
        assert np.allclose(e, ref, rtol=1e-9, atol=1e-12)

    def test_closed_form_random_cases(self):
        rng = np.random.default_rng(123)
        for _ in range(100):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 3))
            N = int(rng.integers(1, 21))
            A = rng.normal(scale=0.6, size=(n, n))
            B = rng.normal(size=(n, m))
            K = rng.normal(scale=0.3, size=(m, n))
            w = rng.normal(size=(N, n))
            sys = cc.LinearSystem(A=A, B=B, N=N)
            e = cc.simulate_error(sys, K, w)
            ref = error_closed_form(A, B, K, w)
            scale = max(1.0, np.abs(ref).max())
            assert np.abs(e - ref).max() <= 1e-9 * scale

    def test_linearity_in_disturbance(self):
        sys = cc.LinearSystem(A=DI_A, B=DI_B, N=15)
        rng = np.random.default_rng(5)
        w1, w2 = rng.normal(size=(2, 15, 2))
        e1 = cc.simulate_error(sys, K_DIRECT_REF, w1)
        e2 = cc.simulate_error(sys, K_DIRECT_REF, w2)
        e12 = cc.simulate_error(sys, K_DIRECT_REF, w1 + w2)
        assert np.allclose(e12, e1 + e2, rtol=1e-9, atol=1e-12)


class TestClosedLoop:
    def test_no_disturbance_reduces_to_nominal(self, di_system):
        rng = np.random.default_rng(3)
        v = rng.normal(size=(100, 1))
        traj = cc.simulate_closed_loop(di_system, K_DIRECT_REF, v, [2.0, -1.0], np.zeros((100, 2)))
        z = cc.simulate_nominal(di_system, [2.0, -1.0], v)
        assert np.allclose(traj.states, z)
        assert np.allclose(traj.inputs, v)

    def test_pure_error_when_origin_start(self, di_system):
        rng = np.random.default_rng(4)
        w = rng.normal(scale=0.1, size=(100, 2))
        traj = cc.simulate_closed_loop(di_system, K_DIRECT_REF, np.zeros((100, 1)), np.zeros(2), w)
        e = cc.simulate_error(di_system, K_DIRECT_REF, w)
        assert np.allclose(traj.states[1:], e)

    def test_superposition_matches_direct_recursion(self, di_system):
        rng = np.random.default_rng(11)
        v = rng.normal(scale=0.2, size=(100, 1))
        w = rng.normal(scale=0.05, size=(100, 2))
        traj = cc.simulate_closed_loop(di_system, K_DIRECT_REF, v, [2.0, -1.0], w)
        # direct recursion x(t+1) = A x + B u + w with u = K(x - z) + v
        z = cc.simulate_nominal(di_system, [2.0, -1.0], v)
        x = np.zeros((101, 2))
        x[0] = [2.0, -1.0]
        for t in range(100):
            u = K_DIRECT_REF @ (x[t] - z[t]) + v[t]
            x[t + 1] = DI_A @ x[t] + DI_B @ u + w[t]
        assert np.allclose(traj.states, x, rtol=1e-9, atol=1e-12)

    def test_superposition_random_cases(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 3))
            N = int(rng.integers(1, 21))
            sys = cc.LinearSystem(A=rng.normal(scale=0.5, size=(n, n)), B=rng.normal(size=(n, m)), N=N)
            K = rng.normal(scale=0.3, size=(m, n))
            v = rng.normal(size=(N, m))
            x0 = rng.normal(size=n)
            w = rng.normal(size=(N, n))
            traj = cc.simulate_closed_loop(sys, K, v, x0, w)
            z = cc.simulate_nominal(sys, x0, v)
            e = cc.simulate_error(sys, K, w)
            stacked = z[1:] + e
            scale = max(1.0, np.abs(stacked).max())
            assert np.abs(traj.states[1:] - stacked).max() <= 1e-9 * scale


class TestEigenvalues:
    def test_diagonal(self):
        assert cc.max_eigenvalue(np.diag([1.0, 4.0])) == pytest.approx(4.0)
        assert cc.min_eigenvalue(np.diag([1.0, 4.0])) == pytest.approx(1.0)

    def test_scaled_identity(self):
        assert cc.max_eigenvalue(np.eye(2) / 10.0) == pytest.approx(0.1, rel=1e-10)

    def test_benchmark_shape_matrix(self):
        # characteristic-polynomial oracle for the 2x2 case
        tr = PHI_REF[0, 0] + PHI_REF[1, 1]
        det = PHI_REF[0, 0] * PHI_REF[1, 1] - PHI_REF[0, 1] * PHI_REF[1, 0]
        oracle = 0.5 * (tr + np.sqrt(tr**2 - 4.0 * det))
        assert oracle == pytest.approx(8.51746, abs=5e-6)
        assert cc.max_eigenvalue(PHI_REF) == pytest.approx(oracle, rel=1e-10)

    def test_rejects_non_symmetric(self):
        with pytest.raises(ValueError):
            cc.max_eigenvalue(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestTypes:
    def test_ellipsoid_validation(self):
        with pytest.raises(ValueError):
            cc.Ellipsoid(np.zeros(2), np.array([[1.0, 0.5], [0.4, 1.0]]))
        with pytest.raises(ValueError):
            cc.Ellipsoid(np.zeros(2), -np.eye(2))

    def test_ellipsoid_membership(self):
        e = cc.Ellipsoid(np.array([1.0, 0.0]), np.diag([1.0, 4.0]))
        assert e.contains(np.array([1.0, 0.5]))
        assert not e.contains(np.array([1.0, 0.6]))

    def test_constraint_spec_checks(self, di_system):
        with pytest.raises(ValueError):
            cc.ConstraintSpec.uniform(np.eye(2), np.zeros(2), np.eye(1), theta=1.5, N=3)
        spec = cc.ConstraintSpec.uniform(np.eye(2), np.zeros(2), np.eye(1), theta=0.1, N=3)
        with pytest.raises(ValueError):
            spec.check_horizon(di_system)

    def test_trajectory_length_check(self):
        with pytest.raises(ValueError):
            cc.Trajectory(states=np.zeros((5, 2)), inputs=np.zeros((5, 1)))

    def test_cost_spec_requires_pd_input_weight(self):
        with pytest.raises(ValueError):
            cc.CostSpec(
                state_weight=np.zeros((2, 2)),
                input_weight=np.zeros((1, 1)),
                terminal_weight=np.eye(2),
            )
