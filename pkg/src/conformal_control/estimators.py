"""Scikit-learn style estimators wrapping the two synthesis pipelines.

Both controllers follow the fit/get_params convention: construct with the
problem description, `fit` on an array of disturbance sequences to learn the
feedback gain and its prediction regions, then `plan(x0)` to solve the
tightened nominal problem.  Fitted attributes carry the usual trailing
underscore and `sklearn.clone` round-trips the constructor parameters.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .conformal import EllipsoidRegion, SplitDataset, calibrate_regions
from .direct import TrainConfig, train_feedback_gain
from .errors import TighteningInfeasibleError
from .indirect import centered_mvee, disturbance_region, synthesize_invariant_region
from .ocp import RelaxedSolution, check_tightening_feasible, solve_relaxed_ocp, tighten
from .systems import ConstraintSpec, CostSpec, LinearSystem


def check_disturbance_array(W, sys: LinearSystem) -> np.ndarray:
    """Validate a (k+1, N, n) disturbance array against the system dimensions."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 3:
        raise ValueError(f"disturbance data must be 3-d (sequences, steps, coords), got shape {W.shape}")
    if W.shape[1] != sys.N or W.shape[2] != sys.n:
        raise ValueError(
            f"disturbance data must have shape (k+1, {sys.N}, {sys.n}), got {W.shape}"
        )
    if not np.all(np.isfinite(W)):
        raise ValueError("disturbance data contains non-finite entries")
    return W


class _PlannerMixin:
    """Shared tightening + relaxed-solve step for fitted controllers."""

    def _check_fitted(self):
        if not hasattr(self, "gain_"):
            raise NotFittedError(f"{type(self).__name__} must be fitted before use")

    def tightening_check(self):
        self._check_fitted()
        return check_tightening_feasible(
            self.constraints, self.region_error_, self.region_input_, K=self._tighten_gain()
        )

    def plan(self, x0) -> RelaxedSolution:
        """Tighten the constraints by the learned regions and solve the nominal SOCP."""
        self._check_fitted()
        check = self.tightening_check()
        if not check.ok:
            raise TighteningInfeasibleError(
                f"prediction regions fail the tightening conditions "
                f"(state margin {check.state_margin:.6g}, input margin {check.input_margin:.6g})"
            )
        self.tightened_ = tighten(
            self.constraints, self.region_error_, self.region_input_, K=self._tighten_gain()
        )
        return solve_relaxed_ocp(self.system, self.cost, self.tightened_, x0, solver=self.solver)

    def _tighten_gain(self):
        return None


class DirectController(BaseEstimator, _PlannerMixin):
    """Gain from quantile training on error trajectories, regions by calibration.

    fit(W) splits W into calibration sequences 0..k1 and training sequences
    k1+1..k (k1 + 1 = calibration_size), trains K with the genetic algorithm
    on the training split only, then calibrates ball prediction regions for
    the error and the feedback input on the calibration split.
    """

    def __init__(
        self,
        system: LinearSystem = None,
        constraints: ConstraintSpec = None,
        cost: CostSpec = None,
        calibration_size: int = 100,
        gamma: float | None = None,
        population: int = 150,
        generations: int = 50,
        gene_bound: float = 10.0,
        mutation_rate: float = 0.2,
        mutation_scale: float | None = None,
        blend_alpha: float = 0.5,
        tournament_size: int = 3,
        elite_count: int = 2,
        norm: float = 2,
        seed: int = 0,
        solver: str | None = None,
    ):
        self.system = system
        self.constraints = constraints
        self.cost = cost
        self.calibration_size = calibration_size
        self.gamma = gamma
        self.population = population
        self.generations = generations
        self.gene_bound = gene_bound
        self.mutation_rate = mutation_rate
        self.mutation_scale = mutation_scale
        self.blend_alpha = blend_alpha
        self.tournament_size = tournament_size
        self.elite_count = elite_count
        self.norm = norm
        self.seed = seed
        self.solver = solver

    def fit(self, W, y=None):
        W = check_disturbance_array(W, self.system)
        self.split_ = SplitDataset(sequences=W, k1=self.calibration_size - 1)
        config = TrainConfig(
            gamma=self.gamma,
            population=self.population,
            generations=self.generations,
            gene_bound=self.gene_bound,
            mutation_rate=self.mutation_rate,
            mutation_scale=self.mutation_scale,
            blend_alpha=self.blend_alpha,
            tournament_size=self.tournament_size,
            elite_count=self.elite_count,
            norm=self.norm,
            seed=self.seed,
        )
        self.train_result_ = train_feedback_gain(
            self.system, self.constraints, self.split_.training, config
        )
        self.gain_ = self.train_result_.K
        self.region_error_, self.region_input_ = calibrate_regions(
            self.gain_, self.system, self.split_.calibration, self.constraints.theta, norm=self.norm
        )
        return self


class IndirectController(BaseEstimator, _PlannerMixin):
    """Gain and invariant error ellipsoid from a conformal disturbance region.

    fit(W) fits the centered minimum-volume ellipsoid to all training
    disturbance points, calibrates the conformal disturbance ellipsoid, and
    synthesizes (K, Phi) by the multiplier grid search.  The error region is
    the invariant ellipsoid; the input region is a ball calibrated for the
    synthesized gain on the held-out split.
    """

    def __init__(
        self,
        system: LinearSystem = None,
        constraints: ConstraintSpec = None,
        cost: CostSpec = None,
        calibration_size: int = 100,
        grid=None,
        mvee_tol: float = 1e-7,
        margin: float = 1e-8,
        norm: float = 2,
        solver: str | None = None,
    ):
        self.system = system
        self.constraints = constraints
        self.cost = cost
        self.calibration_size = calibration_size
        self.grid = grid
        self.mvee_tol = mvee_tol
        self.margin = margin
        self.norm = norm
        self.solver = solver

    def fit(self, W, y=None):
        W = check_disturbance_array(W, self.system)
        self.split_ = SplitDataset(sequences=W, k1=self.calibration_size - 1)
        points = self.split_.training.reshape(-1, self.system.n)
        self.mvee_shape_ = centered_mvee(points, tol=self.mvee_tol)
        self.disturbance_region_ = disturbance_region(
            self.mvee_shape_, self.split_.calibration, self.constraints.theta, norm=self.norm
        )
        self.synthesis_ = synthesize_invariant_region(
            self.system,
            self.constraints,
            self.disturbance_region_.Y,
            grid=self.grid,
            margin=self.margin,
            solver=self.solver,
        )
        self.gain_ = self.synthesis_.K
        self.region_error_ = EllipsoidRegion(
            ellipsoid=self.synthesis_.region,
            level=1.0 - self.constraints.theta,
            horizon=(1, self.system.N),
        )
        self.error_ball_, self.region_input_ = calibrate_regions(
            self.gain_, self.system, self.split_.calibration, self.constraints.theta, norm=self.norm
        )
        return self
