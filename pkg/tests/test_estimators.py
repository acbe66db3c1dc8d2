import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

import conformal_control as cc
from conformal_control.estimators import check_disturbance_array


def small_setup(N=25):
    sys = cc.LinearSystem(A=np.array([[1.0, 0.5], [0.0, 1.0]]), B=np.array([[0.0], [0.5]]), N=N)
    spec = cc.ConstraintSpec.uniform(np.eye(2) / 10.0, np.zeros(2), np.array([[1.0]]), 0.05, N)
    cost = cc.CostSpec(np.zeros((2, 2)), np.eye(1), 100.0 * np.eye(2))
    gen = cc.double_integrator_generator()
    W = gen.sample_sequences(np.random.default_rng(0), 70, N)
    return sys, spec, cost, W


class TestDirectController:
    def make(self, sys, spec, cost):
        return cc.DirectController(
            system=sys, constraints=spec, cost=cost, calibration_size=30,
            population=24, generations=6, seed=5,
        )

    def test_requires_fit_before_plan(self):
        sys, spec, cost, _ = small_setup()
        with pytest.raises(NotFittedError):
            self.make(sys, spec, cost).plan(np.zeros(2))

    def test_fit_then_plan(self):
        sys, spec, cost, W = small_setup()
        est = self.make(sys, spec, cost).fit(W)
        assert est.gain_.shape == (1, 2)
        assert est.region_error_.radius > 0
        assert est.region_input_.radius > 0
        sol = est.plan(np.array([2.0, -1.0]))
        assert sol.optimal
        u0 = cc.assemble_control(est.gain_, sol.v_star, sol.z_star, np.array([2.0, -1.0]), 0)
        assert abs(u0[0]) <= 1.0 + 1e-9

    def test_get_params_clone_roundtrip(self):
        sys, spec, cost, _ = small_setup()
        est = self.make(sys, spec, cost)
        params = est.get_params()
        assert params["population"] == 24
        cloned = clone(est)
        assert cloned.get_params()["seed"] == 5

    def test_calibration_poisoning_does_not_change_gain(self):
        # training must never read the calibration block
        sys, spec, cost, W = small_setup()
        est1 = self.make(sys, spec, cost).fit(W)
        poisoned = W.copy()
        poisoned[:30] = 1e6
        est2 = self.make(sys, spec, cost).fit(poisoned)
        assert np.array_equal(est1.gain_, est2.gain_)

    def test_input_validation(self):
        sys, spec, cost, W = small_setup()
        est = self.make(sys, spec, cost)
        with pytest.raises(ValueError):
            est.fit(W[:, :, :1])
        with pytest.raises(ValueError):
            check_disturbance_array(np.zeros((5, 5)), sys)


class TestIndirectController:
    def make(self, sys, spec, cost):
        return cc.IndirectController(
            system=sys, constraints=spec, cost=cost, calibration_size=30,
            grid=[(l0 / 20.0, l1 / 20.0) for l1 in range(1, 20) for l0 in range(1, 20 - l1)],
        )

    def test_fit_then_plan(self):
        sys, spec, cost, W = small_setup()
        est = self.make(sys, spec, cost).fit(W)
        assert isinstance(est.region_error_, cc.EllipsoidRegion)
        assert est.synthesis_.trace_value > 0
        report = cc.verify_invariance(sys, est.gain_, est.synthesis_.Phi, est.disturbance_region_.Y)
        assert report.passed
        sol = est.plan(np.array([2.0, -1.0]))
        assert sol.optimal

    def test_not_fitted_error(self):
        sys, spec, cost, _ = small_setup()
        with pytest.raises(NotFittedError):
            self.make(sys, spec, cost).tightening_check()

    def test_clone_preserves_grid(self):
        sys, spec, cost, _ = small_setup()
        est = self.make(sys, spec, cost)
        assert len(clone(est).get_params()["grid"]) == len(est.grid)
