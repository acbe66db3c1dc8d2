"""Linear time-invariant system model, ellipsoidal sets, and trajectory simulation.

State evolves as x(t+1) = A x(t) + B u(t) + w(t).  Under the control law
u(t) = K e(t) + v(t) the state splits into a nominal part z(t+1) = A z(t) + B v(t)
and an error part e(t+1) = (A + B K) e(t) + w(t) with e(0) = 0, and
x(t) = z(t) + e(t) by superposition.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._checks import as_matrix, as_vector, check_psd, check_spd, check_symmetric


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Plant matrices (A, B) and horizon length N."""

    A: np.ndarray
    B: np.ndarray
    N: int

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B must have {A.shape[0]} rows, got {B.shape[0]}")
        if int(self.N) < 1:
            raise ValueError("horizon N must be >= 1")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "N", int(self.N))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """Set {x : (x - center)' shape (x - center) <= 1} with SPD shape matrix."""

    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        center = as_vector(self.center, "center")
        shape = check_spd(self.shape, "shape")
        if shape.shape[0] != center.shape[0]:
            raise ValueError("center and shape dimensions disagree")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "shape", shape)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def membership(self, x: np.ndarray) -> np.ndarray:
        """Quadratic form (x - c)' S (x - c) for points along the last axis."""
        d = np.asarray(x, dtype=float) - self.center
        return np.einsum("...i,ij,...j->...", d, self.shape, d)

    def contains(self, x: np.ndarray, tol: float = 0.0) -> np.ndarray:
        return self.membership(x) <= 1.0 + tol

    def boundary_polyline(self, count: int = 256) -> np.ndarray:
        """Boundary points of a 2-d ellipsoid, closed polyline (count+1, 2)."""
        if self.dim != 2:
            raise ValueError("boundary polyline only available for 2-d ellipsoids")
        ang = np.linspace(0.0, 2.0 * np.pi, count + 1)
        circle = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        vals, vecs = np.linalg.eigh(self.shape)
        half = vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T
        return self.center + circle @ half.T


@dataclass(frozen=True, eq=False)
class ConstraintSpec:
    """Per-step state ellipsoids X_1..X_N, input ellipsoid U (centered), and theta."""

    state_sets: tuple
    input_set: Ellipsoid
    theta: float

    def __post_init__(self):
        sets = tuple(self.state_sets)
        if not sets:
            raise ValueError("need at least one state constraint set")
        dims = {s.dim for s in sets}
        if len(dims) != 1:
            raise ValueError("state sets must share one dimension")
        if np.any(self.input_set.center != 0.0):
            raise ValueError("input set must be centered at the origin")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        object.__setattr__(self, "state_sets", sets)

    @classmethod
    def uniform(cls, P, p, Q, theta: float, N: int) -> "ConstraintSpec":
        """Same ellipsoid {x : (x-p)' P (x-p) <= 1} at every step 1..N."""
        state = Ellipsoid(p, P)
        inp = Ellipsoid(np.zeros(np.asarray(Q).shape[0]), Q)
        return cls(state_sets=(state,) * N, input_set=inp, theta=theta)

    def check_horizon(self, sys: LinearSystem) -> None:
        if len(self.state_sets) != sys.N:
            raise ValueError(
                f"expected {sys.N} state sets for horizon N={sys.N}, "
                f"got {len(self.state_sets)}"
            )
        if self.state_sets[0].dim != sys.n:
            raise ValueError("state set dimension does not match the system")
        if self.input_set.dim != sys.m:
            raise ValueError("input set dimension does not match the system")


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Quadratic stage cost x'Wx + u'Ru and terminal cost x'W_f x."""

    state_weight: np.ndarray
    input_weight: np.ndarray
    terminal_weight: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "state_weight", check_psd(self.state_weight, "state_weight", tol=1e-12))
        object.__setattr__(self, "input_weight", check_spd(self.input_weight, "input_weight"))
        object.__setattr__(self, "terminal_weight", check_psd(self.terminal_weight, "terminal_weight", tol=1e-12))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States x(0..N) and inputs u(0..N-1)."""

    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        inputs = np.asarray(self.inputs, dtype=float)
        if states.shape[0] != inputs.shape[0] + 1:
            raise ValueError("need one more state than inputs")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)


def _input_sequence(sys: LinearSystem, v, name: str = "v") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v.reshape(-1, 1) if sys.m == 1 else v.reshape(1, -1)
    if v.shape != (sys.N, sys.m):
        raise ValueError(f"{name} must have shape ({sys.N}, {sys.m}), got {v.shape}")
    return v


def _disturbance_sequence(sys: LinearSystem, w, name: str = "w") -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (sys.N, sys.n):
        raise ValueError(f"{name} must have shape ({sys.N}, {sys.n}), got {w.shape}")
    return w


def _gain(sys: LinearSystem, K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim == 1:
        K = K.reshape(sys.m, sys.n)
    if K.shape != (sys.m, sys.n):
        raise ValueError(f"K must have shape ({sys.m}, {sys.n}), got {K.shape}")
    return K


def simulate_nominal(sys: LinearSystem, x0, v) -> np.ndarray:
    """Disturbance-free rollout z(t+1) = A z(t) + B v(t); returns z(0..N)."""
    x0 = as_vector(x0, "x0", sys.n)
    v = _input_sequence(sys, v)
    z = np.empty((sys.N + 1, sys.n))
    z[0] = x0
    for t in range(sys.N):
        z[t + 1] = sys.A @ z[t] + sys.B @ v[t]
    return z


def simulate_error(sys: LinearSystem, K, w) -> np.ndarray:
    """Error rollout e(t+1) = (A + B K) e(t) + w(t) from e(0) = 0; returns e(1..N)."""
    return simulate_error_batch(sys, K, _disturbance_sequence(sys, w)[None])[0]


def simulate_error_batch(sys: LinearSystem, K, W: np.ndarray) -> np.ndarray:
    """Error rollouts for a batch of disturbance sequences W of shape (S, N, n)."""
    K = _gain(sys, K)
    W = np.asarray(W, dtype=float)
    if W.ndim != 3 or W.shape[1] != sys.N or W.shape[2] != sys.n:
        raise ValueError(f"W must have shape (S, {sys.N}, {sys.n}), got {W.shape}")
    Abar = sys.A + sys.B @ K
    E = np.empty_like(W)
    e = np.zeros((W.shape[0], sys.n))
    for t in range(sys.N):
        e = e @ Abar.T + W[:, t]
        E[:, t] = e
    return E


def simulate_closed_loop(sys: LinearSystem, K, v, x0, w) -> Trajectory:
    """Closed loop under u(t) = K e(t) + v(t); equals nominal plus error."""
    K = _gain(sys, K)
    v = _input_sequence(sys, v)
    z = simulate_nominal(sys, x0, v)
    e = simulate_error(sys, K, w)
    e_full = np.vstack([np.zeros((1, sys.n)), e])
    states = z + e_full
    inputs = e_full[:-1] @ K.T + v
    return Trajectory(states=states, inputs=inputs)


def max_eigenvalue(M) -> float:
    """Largest eigenvalue of a symmetric matrix."""
    M = check_symmetric(M, "M")
    return float(np.linalg.eigvalsh(M)[-1])


def min_eigenvalue(M) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    M = check_symmetric(M, "M")
    return float(np.linalg.eigvalsh(M)[0])
