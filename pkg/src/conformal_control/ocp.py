"""Constraint tightening by prediction regions and the convex relaxed OCP.

Tightening replaces each state set {(x - p_t)' P_t (x - p_t) <= 1} by the
inner rule ||P_t^{1/2} (z - p_t)|| <= rho_t with

    rho_t = 1 - sup_{e in PR} ||P_t^{1/2} e||,

i.e. 1 - C sqrt(lmax(P_t)) for a ball of radius C and
1 - sqrt(lmax(P_t^{1/2} Phi^{-1} P_t^{1/2})) for an ellipsoid {e'Phi e <= 1};
the input set is handled the same way with Q.  The rule is a sound inner
approximation of the Pontryagin difference (triangle inequality in the
P_t^{1/2} norm), which keeps the relaxed problem a second-order-cone program
at the price of some conservatism.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from ._checks import as_vector, sqrtm_spd
from .conformal import EllipsoidRegion
from .errors import SolverFailureError, TighteningInfeasibleError
from .systems import ConstraintSpec, CostSpec, LinearSystem


def _input_extent(region, Q: np.ndarray, K=None) -> float:
    """sup over the input PR of ||Q^{1/2} u||.

    When K is given and the region is an ellipsoid, the region is read as an
    error-space set mapped through the gain:
    sup_{e'Phi e <= 1} ||Q^{1/2} K e|| = sqrt(lmax(Q^{1/2} K Phi^{-1} K' Q^{1/2})).
    """
    if isinstance(region, EllipsoidRegion) and K is not None:
        K = np.asarray(K, dtype=float)
        Q_sqrt = sqrtm_spd(Q)
        Phi_inv = np.linalg.inv(region.ellipsoid.shape)
        M = Q_sqrt @ K @ Phi_inv @ K.T @ Q_sqrt
        return math.sqrt(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])
    if isinstance(region, EllipsoidRegion) and region.ellipsoid.dim != Q.shape[0]:
        raise ValueError("error-space input region needs the gain K")
    return region.weighted_extent(Q)


@dataclass(frozen=True, eq=False)
class TighteningCheck:
    """Feasibility verdict for tightening, with radii and margins."""

    ok: bool
    ok_state: bool
    ok_input: bool
    state_effective_radius: float
    state_radius_bound: float
    input_effective_radius: float
    input_radius_bound: float
    state_margin: float
    input_margin: float


def check_tightening_feasible(
    constraints: ConstraintSpec, region_error, region_input, K=None
) -> TighteningCheck:
    """True iff every tightened radius 1 - extent stays positive (open interval).

    For ball regions this is the radius comparison C < min_t 1/sqrt(lmax(P_t))
    and C_u < 1/sqrt(lmax(Q)); for ellipsoid regions the weighted extents
    express the equivalent nesting condition (Phi > P_t for the error region).
    """
    extents = [region_error.weighted_extent(s.shape) for s in constraints.state_sets]
    max_state_extent = max(extents)
    input_extent = _input_extent(region_input, constraints.input_set.shape, K)
    lmax_state = max(np.linalg.eigvalsh(s.shape)[-1] for s in constraints.state_sets)
    lmax_input = np.linalg.eigvalsh(constraints.input_set.shape)[-1]
    state_bound = 1.0 / math.sqrt(lmax_state)
    input_bound = 1.0 / math.sqrt(lmax_input)
    ok_state = max_state_extent < 1.0
    ok_input = input_extent < 1.0
    return TighteningCheck(
        ok=ok_state and ok_input,
        ok_state=ok_state,
        ok_input=ok_input,
        state_effective_radius=max_state_extent / math.sqrt(lmax_state),
        state_radius_bound=state_bound,
        input_effective_radius=input_extent / math.sqrt(lmax_input),
        input_radius_bound=input_bound,
        state_margin=1.0 - max_state_extent,
        input_margin=1.0 - input_extent,
    )


@dataclass(frozen=True, eq=False)
class TightenedConstraints:
    """Rules ||P_t^{1/2}(z - p_t)|| <= rho_t and ||Q^{1/2} v|| <= rho_u."""

    constraints: ConstraintSpec
    rho_state: np.ndarray
    rho_input: float

    def __post_init__(self):
        rho = np.asarray(self.rho_state, dtype=float)
        if rho.min() <= 0.0 or self.rho_input <= 0.0:
            raise TighteningInfeasibleError("tightened radii must be strictly positive")
        object.__setattr__(self, "rho_state", rho)

    def state_residuals(self, z: np.ndarray) -> np.ndarray:
        """||P_t^{1/2}(z_t - p_t)|| - rho_t for states z of shape (N, n)."""
        out = np.empty(len(self.constraints.state_sets))
        for t, s in enumerate(self.constraints.state_sets):
            d = z[t] - s.center
            out[t] = math.sqrt(d @ s.shape @ d) - self.rho_state[t]
        return out

    def input_residuals(self, v: np.ndarray) -> np.ndarray:
        Q = self.constraints.input_set.shape
        return np.sqrt(np.einsum("ti,ij,tj->t", v, Q, v)) - self.rho_input


def tighten(constraints: ConstraintSpec, region_error, region_input, K=None) -> TightenedConstraints:
    """Shrink every constraint set by the corresponding prediction-region extent."""
    rho_state = np.array(
        [1.0 - region_error.weighted_extent(s.shape) for s in constraints.state_sets]
    )
    rho_input = 1.0 - _input_extent(region_input, constraints.input_set.shape, K)
    if rho_state.min() <= 0.0 or rho_input <= 0.0:
        raise TighteningInfeasibleError(
            f"prediction regions too large: min state rho {rho_state.min():.6g}, "
            f"input rho {rho_input:.6g}"
        )
    return TightenedConstraints(constraints=constraints, rho_state=rho_state, rho_input=float(rho_input))


@dataclass(frozen=True, eq=False)
class RelaxedSolution:
    """Optimal nominal plan, or the infeasibility verdict."""

    status: str
    v_star: np.ndarray | None = None
    z_star: np.ndarray | None = None
    objective_value: float | None = None
    residuals: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def solve_relaxed_ocp(
    sys: LinearSystem, cost: CostSpec, tightened: TightenedConstraints, x0, solver: str | None = None
) -> RelaxedSolution:
    """Solve the nominal SOCP over (v(0..N-1), z(1..N)).

    minimize sum_t z(t)'W z(t) + v(t)'R v(t) + z(N)'W_f z(N)
    s.t. z(t+1) = A z(t) + B v(t), tightened state and input rules.

    z_star is returned as z(0..N) with z(0) = x0.  Infeasibility is reported
    through the status (the relaxation's guarantee presumes feasibility, so
    detection is surfaced rather than raised).
    """
    tightened.constraints.check_horizon(sys)
    x0 = as_vector(x0, "x0", sys.n)
    N, n, m = sys.N, sys.n, sys.m
    Z = cp.Variable((n, N))
    V = cp.Variable((m, N))
    cons = [Z[:, 0] == sys.A @ x0 + sys.B @ V[:, 0]]
    for t in range(1, N):
        cons.append(Z[:, t] == sys.A @ Z[:, t - 1] + sys.B @ V[:, t])
    for t, s in enumerate(tightened.constraints.state_sets):
        P_sqrt = sqrtm_spd(s.shape)
        cons.append(cp.norm(P_sqrt @ (Z[:, t] - s.center)) <= tightened.rho_state[t])
    Q_sqrt = sqrtm_spd(tightened.constraints.input_set.shape)
    cons.append(cp.norm(Q_sqrt @ V, axis=0) <= tightened.rho_input)

    W_sqrt = sqrtm_spd(cost.state_weight)
    R_sqrt = sqrtm_spd(cost.input_weight)
    Wf_sqrt = sqrtm_spd(cost.terminal_weight)
    stage_states = cp.hstack([np.reshape(x0, (n, 1)), Z[:, : N - 1]]) if N > 1 else np.reshape(x0, (n, 1))
    objective = (
        cp.sum_squares(W_sqrt @ stage_states)
        + cp.sum_squares(R_sqrt @ V)
        + cp.sum_squares(Wf_sqrt @ Z[:, N - 1])
    )
    problem = cp.Problem(cp.Minimize(objective), cons)
    try:
        problem.solve(**_solver_options(solver))
    except cp.error.SolverError as exc:
        raise SolverFailureError(f"relaxed OCP solver failed: {exc}") from exc
    if problem.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return RelaxedSolution(status="infeasible")
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise SolverFailureError(f"relaxed OCP solver returned status '{problem.status}'")

    z = np.vstack([x0, np.asarray(Z.value).T])
    v = np.asarray(V.value).T
    dyn = z[1:] - (z[:-1] @ sys.A.T + v @ sys.B.T)
    residuals = {
        "dynamics": float(np.abs(dyn).max()),
        "state": float(tightened.state_residuals(z[1:]).max()),
        "input": float(tightened.input_residuals(v).max()),
    }
    return RelaxedSolution(
        status="optimal",
        v_star=v,
        z_star=z,
        objective_value=float(problem.value),
        residuals=residuals,
    )


def _solver_options(solver: str | None) -> dict:
    if solver is None or solver == cp.CLARABEL:
        return {
            "solver": cp.CLARABEL,
            "tol_feas": 1e-9,
            "tol_gap_rel": 1e-9,
            "tol_gap_abs": 1e-9,
        }
    return {"solver": solver}


def assemble_control(K, v_star: np.ndarray, z_star: np.ndarray, x_t, t: int) -> np.ndarray:
    """Feedback law u(t) = K (x(t) - z*(t)) + v*(t)."""
    v_star = np.asarray(v_star, dtype=float)
    z_star = np.asarray(z_star, dtype=float)
    if not 0 <= t < v_star.shape[0]:
        raise IndexError(f"t={t} outside the horizon 0..{v_star.shape[0] - 1}")
    K = np.asarray(K, dtype=float)
    x_t = as_vector(x_t, "x_t", z_star.shape[1])
    return K @ (x_t - z_star[t]) + v_star[t]
