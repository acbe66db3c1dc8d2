"""Seeded Monte Carlo validation of closed-loop chance constraints and
standalone conformal-coverage experiments.

Disturbances for trial i are drawn from a generator keyed by (seed, i) via
numpy SeedSequence spawning, so results do not depend on how trials are
batched or distributed across workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conformal import conformal_index
from .systems import ConstraintSpec, LinearSystem

WILSON_Z = 1.959963984540054  # 95% two-sided normal quantile


def wilson_interval(successes: int, n: int, z: float = WILSON_Z):
    """Wilson score interval; better behaved than the normal one for rates near 1."""
    if n <= 0:
        raise ValueError("n must be positive")
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True, eq=False)
class ValidationReport:
    """Joint-trajectory satisfaction rates with Wilson 95% intervals."""

    n_trials: int
    state_sat_rate: float
    input_sat_rate: float
    joint_rate: float
    pr_error_rate: float | None
    intervals: dict = field(default_factory=dict)
    sample_states: np.ndarray | None = None


def monte_carlo_validate(
    sys: LinearSystem,
    K,
    v_star: np.ndarray,
    z_star: np.ndarray,
    constraints: ConstraintSpec,
    sampler,
    n_trials: int,
    seed: int,
    region_error=None,
    keep_trajectories: int = 0,
) -> ValidationReport:
    """Closed-loop satisfaction frequencies under u(t) = K e(t) + v*(t).

    Per trial, a fresh disturbance sequence drives the error recursion; the
    state is x(t) = z*(t) + e(t) by superposition, which is exactly the
    closed loop assembled around the nominal plan.  Joint membership over the
    whole horizon is counted (state sets at t = 1..N, input set at
    t = 0..N-1, and optionally e(t) in `region_error` for all t).
    """
    constraints.check_horizon(sys)
    if n_trials < 1:
        raise ValueError("n_trials must be positive")
    K = np.asarray(K, dtype=float).reshape(sys.m, sys.n)
    v_star = np.asarray(v_star, dtype=float).reshape(sys.N, sys.m)
    z_star = np.asarray(z_star, dtype=float).reshape(sys.N + 1, sys.n)

    children = np.random.SeedSequence(seed).spawn(n_trials)
    W = np.empty((n_trials, sys.N, sys.n))
    for i, child in enumerate(children):
        W[i] = sampler.sample(np.random.default_rng(child), sys.N)

    Abar = sys.A + sys.B @ K
    Q = constraints.input_set.shape
    e = np.zeros((n_trials, sys.n))
    ok_state = np.ones(n_trials, dtype=bool)
    ok_input = np.ones(n_trials, dtype=bool)
    ok_region = np.ones(n_trials, dtype=bool)
    keep = min(keep_trajectories, n_trials)
    kept = np.empty((keep, sys.N + 1, sys.n)) if keep else None
    if keep:
        kept[:, 0] = z_star[0]
    for t in range(sys.N):
        u = e @ K.T + v_star[t]
        ok_input &= np.einsum("ki,ij,kj->k", u, Q, u) <= 1.0
        e = e @ Abar.T + W[:, t]
        x = z_star[t + 1] + e
        s = constraints.state_sets[t]
        ok_state &= s.membership(x) <= 1.0
        if region_error is not None:
            ok_region &= region_error.contains(e)
        if keep:
            kept[:, t + 1] = x[:keep]

    state_hits = int(ok_state.sum())
    input_hits = int(ok_input.sum())
    joint_hits = int((ok_state & ok_input).sum())
    intervals = {
        "state": wilson_interval(state_hits, n_trials),
        "input": wilson_interval(input_hits, n_trials),
        "joint": wilson_interval(joint_hits, n_trials),
    }
    pr_rate = None
    if region_error is not None:
        region_hits = int(ok_region.sum())
        pr_rate = region_hits / n_trials
        intervals["pr_error"] = wilson_interval(region_hits, n_trials)
    return ValidationReport(
        n_trials=n_trials,
        state_sat_rate=state_hits / n_trials,
        input_sat_rate=input_hits / n_trials,
        joint_rate=joint_hits / n_trials,
        pr_error_rate=pr_rate,
        intervals=intervals,
        sample_states=kept,
    )


@dataclass(frozen=True, eq=False)
class CoverageResult:
    """Mean containment frequency and its spread over the repeats."""

    mean: float
    std: float
    n_repeats: int

    @property
    def std_error(self) -> float:
        return self.std / math.sqrt(self.n_repeats)


def coverage_experiment(
    score_sampler, k: int, theta: float, n_repeats: int, seed: int
) -> CoverageResult:
    """Estimate the marginal coverage of the augmented conformal quantile.

    Each repeat draws k calibration scores plus one test score from
    `score_sampler(rng, size)` and records whether the test score is at most
    the quantile.  For continuous scores the exact marginal coverage is
    p / (k + 1) with p = ceil((k+1)(1-theta)).
    """
    if k < 1 or n_repeats < 1:
        raise ValueError("k and n_repeats must be positive")
    rng = np.random.default_rng(seed)
    draws = np.asarray(score_sampler(rng, (n_repeats, k + 1)), dtype=float)
    test, cal = draws[:, 0], draws[:, 1:]
    p = conformal_index(k + 1, theta)
    if p > k:
        covered = np.ones(n_repeats, dtype=bool)
    else:
        q = np.partition(cal, p - 1, axis=1)[:, p - 1]
        covered = test <= q
    mean = float(covered.mean())
    return CoverageResult(mean=mean, std=float(covered.std()), n_repeats=n_repeats)
