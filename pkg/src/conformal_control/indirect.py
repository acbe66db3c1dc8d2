"""Indirect feedback synthesis via a disturbance ellipsoid and the S-procedure.

Pipeline: fit a centered minimum-volume ellipsoid to the training disturbance
points, shrink/inflate it to conformal coverage with a calibrated quantile,
then synthesize a robustly invariant error ellipsoid E = {e : e' Phi e <= 1}
and gain K by solving, for each multiplier pair (lambda0, lambda1) on a grid,
the SDP

    minimize trace(Phi_hat)
    s.t.  [[Phi_hat - Y^{-1}/lambda1, A Phi_hat + B Psi],
           [(A Phi_hat + B Psi)',     lambda0 Phi_hat  ]] >> 0
          [[Phi_hat, Psi' Q^{1/2}], [Q^{1/2} Psi, I]] >> margin I
          Phi_hat << P_t^{-1} - margin I   for all t

with Phi = Phi_hat^{-1} and K = Psi Phi.  Strict inequalities are realized
with a fixed margin, since numerical SDP cannot express strictness.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from ._checks import check_spd, inv_spd, sqrtm_spd
from .conformal import conformal_quantile, required_calibration_size, score_disturbance_sequence
from .errors import InsufficientCalibrationError, SolverFailureError, SynthesisInfeasibleError
from .systems import ConstraintSpec, Ellipsoid, LinearSystem

DEFAULT_MARGIN = 1e-8


def centered_mvee(points, tol: float = 1e-7, max_iter: int = 100_000) -> np.ndarray:
    """Shape factor Yhat of the minimum-volume origin-centered ellipsoid.

    Solves max log det M s.t. p' M p <= 1 for all points p (M = Yhat' Yhat)
    through its D-optimal-design dual max log det sum_j u_j p_j p_j' over the
    simplex, by Frank-Wolfe steps with Wolfe away-steps.  Terminates when the
    dual gap bound max_j p_j' M p_j - 1 <= tol; the returned Yhat is rescaled
    so every input point satisfies ||Yhat p|| <= 1 exactly.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or P.shape[0] == 0:
        raise ValueError("points must be a nonempty (count, n) array")
    n = P.shape[1]
    if np.linalg.matrix_rank(P) < n:
        raise ValueError(f"points do not span R^{n}; the centered ellipsoid is degenerate")
    X = P.T
    k = X.shape[1]
    u = np.full(k, 1.0 / k)
    converged = False
    for _ in range(max_iter):
        V = (X * u) @ X.T
        g = np.einsum("ji,jk,ki->i", X, np.linalg.inv(V), X)  # p' V^{-1} p
        j_plus = int(np.argmax(g))
        kappa_plus = g[j_plus]
        if kappa_plus / n - 1.0 <= tol:
            converged = True
            break
        masked = np.where(u > 0.0, g, np.inf)
        j_minus = int(np.argmin(masked))
        kappa_minus = masked[j_minus]
        if (kappa_plus - n) >= (n - kappa_minus):
            step = (kappa_plus - n) / (n * (kappa_plus - 1.0))
            u *= 1.0 - step
            u[j_plus] += step
        else:
            # away step: decrease u[j_minus], dropping the point when optimal
            lower = -u[j_minus] / (1.0 - u[j_minus]) if u[j_minus] < 1.0 else 0.0
            interior = -np.inf if kappa_minus <= 1.0 else (kappa_minus - n) / (n * (kappa_minus - 1.0))
            step = max(interior, lower)
            if step >= 0.0:
                step = (kappa_plus - n) / (n * (kappa_plus - 1.0))
                u *= 1.0 - step
                u[j_plus] += step
            else:
                u *= 1.0 - step
                u[j_minus] += step
                np.clip(u, 0.0, None, out=u)
    if not converged:
        raise SolverFailureError(
            f"centered ellipsoid did not reach tolerance {tol:g} within {max_iter} iterations"
        )
    M = inv_spd(float(n) * (X * u) @ X.T)
    worst = np.einsum("ji,jk,ki->i", X, M, X).max()
    M /= worst  # exact containment; at least one point sits on the boundary
    return sqrtm_spd(M)


@dataclass(frozen=True, eq=False)
class DisturbanceRegion:
    """Conformal disturbance ellipsoid W = {w : w' Y w <= 1}, Y = Yhat'Yhat / C_w^2."""

    Yhat: np.ndarray
    C_w: float
    Y: np.ndarray
    level: float
    horizon: tuple

    @property
    def ellipsoid(self) -> Ellipsoid:
        return Ellipsoid(np.zeros(self.Y.shape[0]), self.Y)

    def contains(self, w, tol: float = 0.0) -> np.ndarray:
        return self.ellipsoid.contains(w, tol=tol)


def disturbance_region(Yhat, cal_sequences, theta: float, norm: float = 2) -> DisturbanceRegion:
    """Scale the training ellipsoid by the conformal quantile of calibration scores.

    As in calibration elsewhere, sequence 0 is the held-out test slot: the
    quantile uses the k1 scores of sequences 1..k1 augmented with +inf.
    """
    Yhat = np.asarray(Yhat, dtype=float)
    cal = np.asarray(cal_sequences, dtype=float)
    if cal.ndim != 3:
        raise ValueError("cal_sequences must be a (k1+1, N, n) array")
    k1 = cal.shape[0] - 1
    required = required_calibration_size(theta)
    if k1 < 1:
        raise InsufficientCalibrationError(k1, required)
    scores = [score_disturbance_sequence(Yhat, seq, norm=norm) for seq in cal[1:]]
    C_w = conformal_quantile(scores, theta)
    if math.isinf(C_w):
        raise InsufficientCalibrationError(k1, required)
    Y = Yhat.T @ Yhat / C_w**2
    N = cal.shape[1]
    return DisturbanceRegion(Yhat=Yhat, C_w=float(C_w), Y=Y, level=1.0 - theta, horizon=(0, N - 1))


@dataclass(frozen=True, eq=False)
class InvariantSynthesis:
    """Solution of the grid-searched invariant-ellipsoid program."""

    Phi: np.ndarray
    Phi_hat: np.ndarray
    Psi: np.ndarray
    K: np.ndarray
    lambda0: float
    lambda1: float
    trace_value: float
    certificate_margins: dict = field(default_factory=dict)

    @property
    def region(self) -> Ellipsoid:
        return Ellipsoid(np.zeros(self.Phi.shape[0]), self.Phi)


def default_multiplier_grid(step: float = 0.05):
    """Triangular grid lambda1 in {step..1-step}, lambda0 in {step..1-lambda1-step}."""
    grid = []
    n_steps = int(round(1.0 / step))
    for i1 in range(1, n_steps):
        l1 = i1 * step
        for i0 in range(1, n_steps - i1):
            grid.append((i0 * step, l1))
    return grid


def _unique_state_inverses(constraints: ConstraintSpec):
    seen = {}
    for s in constraints.state_sets:
        key = s.shape.tobytes()
        if key not in seen:
            seen[key] = inv_spd(s.shape)
    return list(seen.values())


def sdp_feasible_point(
    sys: LinearSystem,
    constraints: ConstraintSpec,
    Y,
    lambda0: float,
    lambda1: float,
    margin: float = DEFAULT_MARGIN,
    solver: str | None = None,
):
    """Solve the fixed-multiplier SDP; returns (Phi_hat, Psi, trace) or None if infeasible.

    Solver numerical failures raise SolverFailureError, distinct from proven
    infeasibility.
    """
    if lambda0 < 0.0 or lambda1 < 0.0 or lambda0 + lambda1 > 1.0 + 1e-12:
        raise ValueError("need lambda0, lambda1 >= 0 with lambda0 + lambda1 <= 1")
    if lambda1 <= 0.0:
        raise ValueError("lambda1 must be positive (Y^{-1}/lambda1 appears in the LMI)")
    constraints.check_horizon(sys)
    Y = check_spd(Y, "Y")
    n, m = sys.n, sys.m
    Y_inv = inv_spd(Y)
    Q_sqrt = sqrtm_spd(constraints.input_set.shape)

    Phi_hat = cp.Variable((n, n), symmetric=True)
    Psi = cp.Variable((m, n))
    closed = sys.A @ Phi_hat + sys.B @ Psi
    lmis = [
        cp.bmat([[Phi_hat - Y_inv / lambda1, closed], [closed.T, lambda0 * Phi_hat]]) >> 0,
        cp.bmat([[Phi_hat, Psi.T @ Q_sqrt], [Q_sqrt @ Psi, np.eye(m)]]) >> margin * np.eye(n + m),
        Phi_hat >> margin * np.eye(n),
    ]
    for P_inv in _unique_state_inverses(constraints):
        lmis.append(Phi_hat << P_inv - margin * np.eye(n))
    problem = cp.Problem(cp.Minimize(cp.trace(Phi_hat)), lmis)
    try:
        problem.solve(solver=solver or cp.CLARABEL)
    except cp.error.SolverError as exc:
        raise SolverFailureError(f"SDP solver failed at (l0={lambda0:g}, l1={lambda1:g}): {exc}") from exc
    if problem.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return None
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise SolverFailureError(
            f"SDP solver returned status '{problem.status}' at (l0={lambda0:g}, l1={lambda1:g})"
        )
    return np.asarray(Phi_hat.value), np.asarray(Psi.value), float(problem.value)


def synthesize_invariant_region(
    sys: LinearSystem,
    constraints: ConstraintSpec,
    Y,
    grid=None,
    margin: float = DEFAULT_MARGIN,
    solver: str | None = None,
) -> InvariantSynthesis:
    """Grid search over multiplier pairs; keep the feasible point of least trace.

    Ties break toward smaller lambda0, then lambda1.  Raises
    SynthesisInfeasibleError listing per-point status when nothing is feasible.
    """
    pairs = default_multiplier_grid() if grid is None else list(grid)
    if not pairs:
        raise ValueError("multiplier grid must be nonempty")
    statuses = []
    candidates = []
    for l0, l1 in pairs:
        try:
            result = sdp_feasible_point(sys, constraints, Y, l0, l1, margin=margin, solver=solver)
        except SolverFailureError as exc:
            statuses.append((l0, l1, f"solver failure: {exc}"))
            continue
        if result is None:
            statuses.append((l0, l1, "infeasible"))
            continue
        Phi_hat, Psi, trace = result
        # certificate margins of the numeric solution must back the claim
        worst = min(_certificate_margins(sys, constraints, Y, Phi_hat, Psi, l0, l1, margin).values())
        if worst < -1e-7:
            statuses.append((l0, l1, f"rejected: certificate margin {worst:.3g}"))
            continue
        statuses.append((l0, l1, f"optimal trace={trace:.6g}"))
        candidates.append((trace, l0, l1, Phi_hat, Psi))
    if not candidates:
        raise SynthesisInfeasibleError(statuses)
    trace, l0, l1, Phi_hat, Psi = min(candidates, key=lambda c: (c[0], c[1], c[2]))
    Phi_hat = 0.5 * (Phi_hat + Phi_hat.T)
    Phi = inv_spd(Phi_hat)
    K = Psi @ Phi
    margins = _certificate_margins(sys, constraints, Y, Phi_hat, Psi, l0, l1, margin)
    return InvariantSynthesis(
        Phi=Phi,
        Phi_hat=Phi_hat,
        Psi=np.asarray(Psi),
        K=K,
        lambda0=float(l0),
        lambda1=float(l1),
        trace_value=float(trace),
        certificate_margins=margins,
    )


def _certificate_margins(sys, constraints, Y, Phi_hat, Psi, l0, l1, margin):
    """Smallest eigenvalues of the three LMI blocks at the numerical solution."""
    Y_inv = inv_spd(np.asarray(Y, dtype=float))
    Q_sqrt = sqrtm_spd(constraints.input_set.shape)
    closed = sys.A @ Phi_hat + sys.B @ Psi
    invariance = np.block([[Phi_hat - Y_inv / l1, closed], [closed.T, l0 * Phi_hat]])
    admissibility = np.block(
        [[Phi_hat, Psi.T @ Q_sqrt], [Q_sqrt @ Psi, np.eye(sys.m)]]
    ) - margin * np.eye(sys.n + sys.m)
    nesting = min(
        np.linalg.eigvalsh(P_inv - margin * np.eye(sys.n) - Phi_hat).min()
        for P_inv in _unique_state_inverses(constraints)
    )
    return {
        "invariance_lmi": float(np.linalg.eigvalsh(0.5 * (invariance + invariance.T)).min()),
        "input_lmi": float(np.linalg.eigvalsh(0.5 * (admissibility + admissibility.T)).min()),
        "state_nesting": float(nesting),
    }


def _sphere_points(count: int, dim: int) -> np.ndarray:
    """Deterministic low-discrepancy points on the unit sphere."""
    if dim == 1:
        signs = np.empty((count, 1))
        signs[::2] = 1.0
        signs[1::2] = -1.0
        return signs
    if dim == 2:
        ang = 2.0 * np.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    from scipy.stats import norm, qmc

    sob = qmc.Sobol(d=dim, scramble=False)
    sob.fast_forward(1)  # skip the all-0.5 first point (maps to the origin)
    x = norm.ppf(sob.random(count))
    lengths = np.linalg.norm(x, axis=1, keepdims=True)
    lengths[lengths < 1e-12] = 1.0
    return x / lengths


@dataclass(frozen=True, eq=False)
class InvarianceReport:
    """Outcome of the sampled and LMI invariance certificates."""

    passed: bool
    worst_membership: float
    max_violation: float
    witness_e: np.ndarray | None
    witness_w: np.ndarray | None
    n_samples: int
    tol: float
    bmi_margin: float
    bmi_lambdas: tuple


def verify_invariance(
    sys: LinearSystem, K, Phi, Y, n_samples: int = 1000, tol: float = 1e-6, lambdas=None
) -> InvarianceReport:
    """Check [(A+BK)e + w]' Phi [(A+BK)e + w] <= 1 for e in E, w in W.

    Deterministic sampled certificate over boundary points e' Phi e = 1 and
    w' Y w = 1 (the quadratic form is convex, so the maximum over the product
    of ellipsoids is attained on the boundaries); plus the eigenvalue margin
    of the S-procedure block at `lambdas`, or the best pair on the default
    grid when none is given.
    """
    Phi = check_spd(Phi, "Phi")
    Y = check_spd(Y, "Y")
    K = np.asarray(K, dtype=float).reshape(sys.m, sys.n)
    Abar = sys.A + sys.B @ K
    sphere = _sphere_points(n_samples, sys.n)
    vals_phi, vecs_phi = np.linalg.eigh(Phi)
    vals_y, vecs_y = np.linalg.eigh(Y)
    E = sphere @ (vecs_phi @ np.diag(1.0 / np.sqrt(vals_phi)) @ vecs_phi.T).T
    Wb = sphere @ (vecs_y @ np.diag(1.0 / np.sqrt(vals_y)) @ vecs_y.T).T
    F = E @ Abar.T
    quad_f = np.einsum("ij,jk,ik->i", F, Phi, F)
    quad_w = np.einsum("ij,jk,ik->i", Wb, Phi, Wb)
    cross = F @ Phi @ Wb.T
    membership = quad_f[:, None] + 2.0 * cross + quad_w[None, :]
    worst = float(membership.max())
    i, j = np.unravel_index(np.argmax(membership), membership.shape)

    if lambdas is not None:
        candidates = [tuple(lambdas)]
    else:
        candidates = default_multiplier_grid()
    bmi_margin, bmi_pair = -np.inf, (np.nan, np.nan)
    for l0, l1 in candidates:
        block = np.block(
            [[l0 * Phi - Abar.T @ Phi @ Abar, -Abar.T @ Phi], [-Phi @ Abar, l1 * Y - Phi]]
        )
        m = float(np.linalg.eigvalsh(0.5 * (block + block.T)).min())
        if m > bmi_margin:
            bmi_margin, bmi_pair = m, (float(l0), float(l1))

    passed = worst <= 1.0 + tol
    return InvarianceReport(
        passed=passed,
        worst_membership=worst,
        max_violation=max(0.0, worst - 1.0),
        witness_e=None if passed else E[i],
        witness_w=None if passed else Wb[j],
        n_samples=n_samples,
        tol=tol,
        bmi_margin=bmi_margin,
        bmi_lambdas=bmi_pair,
    )
