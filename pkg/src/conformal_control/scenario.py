"""Scenario-optimization baseline with time-invariant disturbance feedback.

Inputs are parameterized as u(t) = v(t) + sum_{j=1..t} M_j w(t-j) with one
m x n coefficient block per lag (a banded Toeplitz structure), which keeps
states and inputs affine in the decision variables.  The original ellipsoidal
constraints are imposed per sampled disturbance scenario and the objective is
the empirical mean of the quadratic cost over the scenarios.

The number of scenarios needed for an a-priori guarantee is governed by the
scenario-optimization literature and is treated as an input here; the
published point of comparison for this problem class (theta = 0.05,
beta = 1e-3) is at least 5,739 scenarios.  No bound is computed.
"""
from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from ._checks import as_vector, sqrtm_spd
from .errors import InfeasibleError, SolverFailureError
from .systems import ConstraintSpec, CostSpec, LinearSystem

REFERENCE_SCENARIO_COUNT = 5739


def scenario_requirement_note(theta: float, beta: float, n_decisions: int) -> str:
    """One-line report text echoing the user's parameters and the reference figure."""
    return (
        f"scenario requirement (literature bound, not computed here): with "
        f"theta={theta:g}, beta={beta:g} and {n_decisions} decision variables, "
        f"a-priori guarantees call for >= {REFERENCE_SCENARIO_COUNT} scenarios"
    )


@dataclass(frozen=True, eq=False)
class ScenarioProgram:
    """Assembled scenario program data; solving is a separate step."""

    sys: LinearSystem
    constraints: ConstraintSpec
    cost: CostSpec
    x0: np.ndarray
    scenarios: np.ndarray

    @property
    def n_scenarios(self) -> int:
        return self.scenarios.shape[0]

    @property
    def n_decision_vars(self) -> int:
        N, n, m = self.sys.N, self.sys.n, self.sys.m
        return m * n * (N - 1) + m * N


@dataclass(frozen=True, eq=False)
class ScenarioSolution:
    """Feedback blocks M (lag-indexed), feedforward v, and solve diagnostics."""

    M: np.ndarray
    v: np.ndarray
    objective: float
    max_violation: float


def build_scenario_program(
    sys: LinearSystem, constraints: ConstraintSpec, cost: CostSpec, x0, scenarios
) -> ScenarioProgram:
    constraints.check_horizon(sys)
    x0 = as_vector(x0, "x0", sys.n)
    W = np.asarray(scenarios, dtype=float)
    if W.ndim != 3 or W.shape[0] == 0:
        raise ValueError("need at least one scenario of shape (N, n)")
    if W.shape[1] != sys.N or W.shape[2] != sys.n:
        raise ValueError(f"scenarios must have shape (S, {sys.N}, {sys.n}), got {W.shape}")
    return ScenarioProgram(sys=sys, constraints=constraints, cost=cost, x0=x0, scenarios=W)


def feedback_inputs(M: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """u(t) = v(t) + sum_{j=1..t} M_j w(t-j); input depends on w(0..t-1) only."""
    return feedback_inputs_batch(M, v, np.asarray(w, dtype=float)[None])[0]


def feedback_inputs_batch(M: np.ndarray, v: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Disturbance-feedback inputs for a batch of sequences W of shape (S, N, n)."""
    M = np.asarray(M, dtype=float)
    v = np.asarray(v, dtype=float)
    W = np.asarray(W, dtype=float)
    N = v.shape[0]
    U = np.broadcast_to(v, (W.shape[0],) + v.shape).copy()
    for lag in range(1, min(M.shape[0], N - 1) + 1):
        U[:, lag:] += W[:, : N - lag] @ M[lag - 1].T
    return U


def simulate_with_feedback(sys: LinearSystem, x0, M, v, w) -> np.ndarray:
    """States x(0..N) under the disturbance-feedback inputs for one scenario."""
    return simulate_with_feedback_batch(sys, x0, M, v, np.asarray(w, dtype=float)[None])[0]


def simulate_with_feedback_batch(sys: LinearSystem, x0, M, v, W) -> np.ndarray:
    """States (S, N+1, n) under the feedback parameterization for each sequence."""
    U = feedback_inputs_batch(M, v, W)
    S = W.shape[0]
    X = np.empty((S, sys.N + 1, sys.n))
    X[:, 0] = as_vector(x0, "x0", sys.n)
    for t in range(sys.N):
        X[:, t + 1] = X[:, t] @ sys.A.T + U[:, t] @ sys.B.T + W[:, t]
    return X


def _lag_matrix(w: np.ndarray, N: int, n: int) -> np.ndarray:
    """((N-1) n, N) matrix whose column t stacks w(t-1), w(t-2), ..., zero-padded."""
    L = np.zeros(((N - 1) * n, N))
    for t in range(1, N):
        L[: t * n, t] = w[t - 1 :: -1].reshape(-1)[: t * n]
    return L


def solve_scenario_program(prog: ScenarioProgram, solver: str | None = None) -> ScenarioSolution:
    """Solve the convex scenario program; checks every scenario constraint on exit.

    Per-scenario state and input variables keep the constraint matrix sparse;
    they are tied to the shared decision variables (v, M) by equalities.
    """
    sys, cons_spec, cost = prog.sys, prog.constraints, prog.cost
    N, n, m = sys.N, sys.n, sys.m
    S = prog.n_scenarios
    P_sqrts = [sqrtm_spd(s.shape) for s in cons_spec.state_sets]
    shared_state_set = len({s.shape.tobytes() + s.center.tobytes() for s in cons_spec.state_sets}) == 1
    Q_sqrt = sqrtm_spd(cons_spec.input_set.shape)
    W_sqrt = sqrtm_spd(cost.state_weight)
    R_sqrt = sqrtm_spd(cost.input_weight)
    Wf_sqrt = sqrtm_spd(cost.terminal_weight)
    state_weight_zero = not np.any(cost.state_weight)

    V = cp.Variable((m, N))
    Mcat = cp.Variable((m, (N - 1) * n)) if N > 1 else None

    constraints = []
    objective_terms = []
    x0_col = np.reshape(prog.x0, (n, 1))
    for i in range(S):
        w = prog.scenarios[i]
        U = cp.Variable((m, N))
        X = cp.Variable((n, N))
        if Mcat is None:
            constraints.append(U == V)
        else:
            constraints.append(U == V + Mcat @ _lag_matrix(w, N, n))
        constraints.append(X[:, 0] == sys.A @ prog.x0 + sys.B @ U[:, 0] + w[0])
        if N > 1:
            constraints.append(X[:, 1:] == sys.A @ X[:, : N - 1] + sys.B @ U[:, 1:] + w[1:].T)
        if shared_state_set:
            constraints.append(
                cp.norm(P_sqrts[0] @ (X - np.reshape(cons_spec.state_sets[0].center, (n, 1))), axis=0) <= 1.0
            )
        else:
            for t, s in enumerate(cons_spec.state_sets):
                constraints.append(cp.norm(P_sqrts[t] @ (X[:, t] - s.center)) <= 1.0)
        constraints.append(cp.norm(Q_sqrt @ U, axis=0) <= 1.0)
        term = cp.sum_squares(R_sqrt @ U) + cp.sum_squares(Wf_sqrt @ X[:, N - 1])
        if not state_weight_zero:
            stage_states = cp.hstack([x0_col, X[:, : N - 1]]) if N > 1 else x0_col
            term = term + cp.sum_squares(W_sqrt @ stage_states)
        objective_terms.append(term)
    problem = cp.Problem(cp.Minimize(cp.sum(cp.hstack(objective_terms)) / S), constraints)
    try:
        problem.solve(solver=solver or cp.CLARABEL)
    except cp.error.SolverError as exc:
        raise SolverFailureError(f"scenario program solver failed: {exc}") from exc
    if problem.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        raise InfeasibleError("scenario program infeasible for the sampled scenarios")
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise SolverFailureError(f"scenario program solver returned status '{problem.status}'")

    v = np.asarray(V.value).T
    if Mcat is None:
        M = np.zeros((0, m, n))
    else:
        M = np.asarray(Mcat.value).reshape(m, N - 1, n).transpose(1, 0, 2)
    max_violation = scenario_violation(prog, M, v)
    if max_violation > 1e-7:
        raise SolverFailureError(
            f"scenario solution violates a training constraint by {max_violation:.3g} (> 1e-7)"
        )
    return ScenarioSolution(M=M, v=v, objective=float(problem.value), max_violation=max_violation)


def scenario_violation(prog: ScenarioProgram, M: np.ndarray, v: np.ndarray) -> float:
    """Worst constraint violation of (M, v) over the program's scenarios."""
    U = feedback_inputs_batch(M, v, prog.scenarios)
    X = simulate_with_feedback_batch(prog.sys, prog.x0, M, v, prog.scenarios)
    worst = -np.inf
    for t, s in enumerate(prog.constraints.state_sets):
        worst = max(worst, float(s.membership(X[:, t + 1]).max()) - 1.0)
    Q = prog.constraints.input_set.shape
    worst = max(worst, float(np.einsum("sti,ij,stj->st", U, Q, U).max()) - 1.0)
    return worst
