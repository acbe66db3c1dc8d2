"""Direct feedback synthesis: train a gain K on error-trajectory score quantiles.

The training program minimizes eta_e + gamma * eta_u where eta_e, eta_u are
empirical quantiles (at an inflated level theta_hat) of the error and input
nonconformity scores over the training disturbance sequences, subject to
eta_e < eta_e_max and eta_u < eta_u_max derived from the constraint geometry.
The dependence on K is nonconvex, so a real-coded genetic algorithm searches
over the entries of K.  Calibration happens afterwards, on held-out data.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .conformal import quantile_index
from .systems import ConstraintSpec, LinearSystem

_PENALTY_WEIGHT = 1e3
_FITNESS_CAP = 1e100


@dataclass
class TrainConfig:
    """Genetic-algorithm settings for the gain training program.

    gamma defaults to eta_e_max / eta_u_max, mutation_scale to gene_bound / 10.
    theta defaults to the value carried by the constraint specification.
    """

    gamma: float | None = None
    theta: float | None = None
    population: int = 150
    generations: int = 50
    gene_bound: float = 10.0
    mutation_rate: float = 0.2
    mutation_scale: float | None = None
    blend_alpha: float = 0.5
    tournament_size: int = 3
    elite_count: int = 2
    norm: float = 2
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if not self.gene_bound > 0.0:
            raise ValueError("gene_bound must be positive")
        if self.elite_count > self.population:
            raise ValueError("elite_count cannot exceed the population size")


@dataclass
class TrainResult:
    """Best gain found by the GA and its achieved training quantiles."""

    K: np.ndarray
    eta_e: float
    eta_u: float
    feasible: bool
    fitness: float
    fitness_history: list = field(default_factory=list)


def eta_bounds(constraints: ConstraintSpec):
    """(eta_e_max, eta_u_max): smallest semi-axes of the state sets and input set."""
    eta_e_max = min(
        1.0 / math.sqrt(np.linalg.eigvalsh(s.shape)[-1]) for s in constraints.state_sets
    )
    eta_u_max = 1.0 / math.sqrt(np.linalg.eigvalsh(constraints.input_set.shape)[-1])
    return eta_e_max, eta_u_max


def training_quantile_level(k: int, k1: int, theta: float) -> float:
    """Inflated training level theta_hat = (1 + 1/(k - k1 - 1)) (1 - theta).

    Levels above 1 are clamped to 1 (the maximum training score) with a
    warning: the training set is too small for the inflated level.
    """
    n_train_minus_1 = k - k1 - 1
    if n_train_minus_1 < 1:
        raise ValueError("need k - k1 - 1 >= 1 (at least two training sequences)")
    level = (1.0 + 1.0 / n_train_minus_1) * (1.0 - theta)
    if level > 1.0:
        warnings.warn(
            f"training quantile level {level:.6g} exceeds 1; "
            "falling back to the maximum training score (too few training samples)",
            stacklevel=2,
        )
        return 1.0
    return level


def training_quantile(scores: np.ndarray, level: float) -> float:
    """Order statistic ceil(n * level) of finite training scores (no infinity)."""
    s = np.sort(np.asarray(scores, dtype=float))
    p = min(max(quantile_index(s.size, level), 1), s.size)
    return float(s[p - 1])


def _resolve(config: TrainConfig, bounds, constraints: ConstraintSpec | None = None) -> TrainConfig:
    cfg = replace(config)
    if cfg.theta is None:
        if constraints is None:
            raise ValueError("config.theta must be set when no constraint spec is given")
        cfg.theta = constraints.theta
    if cfg.gamma is None:
        cfg.gamma = bounds[0] / bounds[1]
    if cfg.mutation_scale is None:
        cfg.mutation_scale = cfg.gene_bound / 10.0
    return cfg


def _population_scores(sys: LinearSystem, Ks: np.ndarray, W: np.ndarray, norm: float):
    """Per-candidate max error/input norms over all training sequences.

    Ks has shape (pop, m, n), W has shape (S, N, n).  Returns two (pop, S)
    arrays of trajectory scores.  Non-finite values from divergent gains are
    kept; the fitness cap handles them.
    """
    pop = Ks.shape[0]
    S = W.shape[0]
    Abar = sys.A[None] + np.einsum("ij,pjk->pik", sys.B, Ks)
    e = np.zeros((pop, S, sys.n))
    max_e = np.zeros((pop, S))
    max_u = np.zeros((pop, S))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(sys.N):
            u = np.einsum("pmj,psj->psm", Ks, e)
            max_u = np.maximum(max_u, np.linalg.norm(u, ord=norm, axis=2))
            e = np.einsum("pij,psj->psi", Abar, e) + W[None, :, t]
            max_e = np.maximum(max_e, np.linalg.norm(e, ord=norm, axis=2))
    return max_e, max_u


def _evaluate(sys, Ks, W, cfg: TrainConfig, bounds):
    """Fitness, eta_e, eta_u arrays for a population of gains."""
    eta_e_max, eta_u_max = bounds
    max_e, max_u = _population_scores(sys, Ks, W, cfg.norm)
    # theta_hat depends only on the training count k - k1
    level = training_quantile_level(W.shape[0], 0, cfg.theta)
    p = min(max(quantile_index(W.shape[0], level), 1), W.shape[0])
    eta_e = np.sort(max_e, axis=1)[:, p - 1]
    eta_u = np.sort(max_u, axis=1)[:, p - 1]
    penalty = (
        _PENALTY_WEIGHT
        * (np.maximum(0.0, eta_e - eta_e_max) + np.maximum(0.0, eta_u - eta_u_max))
        / min(eta_e_max, eta_u_max)
    )
    fit = eta_e + cfg.gamma * eta_u + penalty
    fit = np.where(np.isfinite(fit), np.minimum(fit, _FITNESS_CAP), _FITNESS_CAP)
    return fit, eta_e, eta_u


def fitness(K, train_sequences, sys: LinearSystem, config: TrainConfig, bounds) -> float:
    """Training objective eta_e + gamma * eta_u plus the bound-violation penalty."""
    W = np.asarray(train_sequences, dtype=float)
    if W.ndim != 3 or W.shape[0] == 0:
        raise ValueError("train_sequences must be a nonempty (S, N, n) array")
    cfg = _resolve(config, bounds)
    Ks = np.asarray(K, dtype=float).reshape(1, sys.m, sys.n)
    fit, _, _ = _evaluate(sys, Ks, W, cfg, bounds)
    return float(fit[0])


def train_feedback_gain(
    sys: LinearSystem, constraints: ConstraintSpec, train_sequences, config: TrainConfig
) -> TrainResult:
    """Real-coded GA over the entries of K in [-gene_bound, gene_bound].

    Operators: tournament selection (size 3), blend crossover (alpha = 0.5),
    per-gene Gaussian mutation, elitism.  Deterministic for a fixed seed: the
    fitness evaluation draws no random numbers, so evaluation order cannot
    change the result.  Never reads calibration data.
    """
    constraints.check_horizon(sys)
    W = np.asarray(train_sequences, dtype=float)
    if W.ndim != 3 or W.shape[0] < 2:
        raise ValueError("need at least two training sequences of shape (N, n)")
    bounds = eta_bounds(constraints)
    cfg = _resolve(config, bounds, constraints)
    genes = sys.m * sys.n
    rng = np.random.default_rng(cfg.seed)
    pop = rng.uniform(-cfg.gene_bound, cfg.gene_bound, size=(cfg.population, genes))

    history = []
    fit = eta_e = eta_u = None
    for generation in range(cfg.generations + 1):
        Ks = pop.reshape(cfg.population, sys.m, sys.n)
        fit, eta_e, eta_u = _evaluate(sys, Ks, W, cfg, bounds)
        order = np.argsort(fit, kind="stable")
        history.append(float(fit[order[0]]))
        if generation == cfg.generations:
            pop = pop[order]
            fit, eta_e, eta_u = fit[order], eta_e[order], eta_u[order]
            break
        elites = pop[order[: cfg.elite_count]]
        n_children = cfg.population - cfg.elite_count
        # tournament: best of `tournament_size` uniform picks, twice per child
        picks = rng.integers(0, cfg.population, size=(n_children, 2, cfg.tournament_size))
        winners = np.take_along_axis(picks, np.argmin(fit[picks], axis=2)[..., None], axis=2)
        parents = pop[winners[..., 0]]
        lo = parents.min(axis=1)
        span = parents.max(axis=1) - lo
        u = rng.uniform(size=(n_children, genes))
        children = lo - cfg.blend_alpha * span + u * (1.0 + 2.0 * cfg.blend_alpha) * span
        mutate = rng.uniform(size=(n_children, genes)) < cfg.mutation_rate
        noise = rng.normal(0.0, cfg.mutation_scale, size=(n_children, genes))
        children = np.where(mutate, children + noise, children)
        children = np.clip(children, -cfg.gene_bound, cfg.gene_bound)
        pop = np.vstack([elites, children])

    best_K = pop[0].reshape(sys.m, sys.n).copy()
    feasible = bool(eta_e[0] < bounds[0] and eta_u[0] < bounds[1])
    return TrainResult(
        K=best_K,
        eta_e=float(eta_e[0]),
        eta_u=float(eta_u[0]),
        feasible=feasible,
        fitness=float(fit[0]),
        fitness_history=history,
    )
