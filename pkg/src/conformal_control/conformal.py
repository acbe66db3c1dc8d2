"""Nonconformity scores, split-conformal quantiles, and prediction regions.

A nonconformity score summarizes a whole trajectory by the maximum norm of
its samples.  Given k i.i.d. calibration scores, the empirical (1-theta)
quantile of the scores augmented with +inf — the p-th smallest score with
p = ceil((k+1)(1-theta)) — bounds a fresh score with probability at least
1 - theta.  The quantile is the exact order statistic, never interpolated:
interpolation would void the coverage guarantee.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._checks import check_spd, sqrtm_spd
from .errors import InsufficientCalibrationError
from .systems import Ellipsoid, LinearSystem, simulate_error_batch


def quantile_index(count: int, level: float) -> int:
    """ceil(count * level), evaluated in exact rational arithmetic.

    Floating products like 20 * 0.95 can land on either side of an integer;
    the exact product of the binary inputs keeps the order statistic stable.
    """
    return math.ceil(Fraction(count) * Fraction(level))


def conformal_index(count: int, theta: float) -> int:
    """p = ceil(count * (1 - theta)) with 1 - theta formed in exact rationals.

    Subtracting first in floats would amplify theta's representation error
    (e.g. 100 * (1 - 0.1) rounds above 90).
    """
    return math.ceil(count * (1 - Fraction(theta)))


def conformal_quantile(scores, theta: float) -> float:
    """Empirical (1-theta) quantile of {scores, +inf}.

    Returns the p-th smallest score, p = ceil((k+1)(1-theta)), or math.inf
    when p exceeds the number of finite scores.
    """
    s = np.asarray(scores, dtype=float).reshape(-1)
    if s.size == 0:
        raise ValueError("need at least one score")
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    p = conformal_index(s.size + 1, theta)
    if p > s.size:
        return math.inf
    return float(np.sort(s, kind="stable")[p - 1])


def required_calibration_size(theta: float) -> int:
    """Smallest k for which the augmented quantile is finite."""
    k = max(1, math.ceil((1.0 - theta) / theta) - 2)
    while conformal_index(k + 1, theta) > k:
        k += 1
    return k


def pac_adjusted_level(theta: float, beta: float, k: int) -> float:
    """Calibration-conditional failure level theta - sqrt(ln(1/beta) / (2k))."""
    if not 0.0 < theta < 1.0 or not 0.0 < beta < 1.0:
        raise ValueError("theta and beta must lie in (0, 1)")
    if k < 1:
        raise ValueError("k must be a positive count")
    adjusted = theta - math.sqrt(math.log(1.0 / beta) / (2.0 * k))
    if adjusted <= 0.0:
        raise ValueError(
            f"calibration set too small for (theta={theta:g}, beta={beta:g}): "
            f"adjusted level {adjusted:g} is not positive"
        )
    return adjusted


def _norms(x: np.ndarray, norm: float) -> np.ndarray:
    return np.linalg.norm(x, ord=norm, axis=-1)


def score_error_trajectory(e, norm: float = 2) -> float:
    """max_t ||e(t)|| over an error trajectory e(1..N)."""
    e = np.asarray(e, dtype=float)
    if e.ndim != 2 or e.shape[0] == 0:
        raise ValueError("e must be a nonempty (T, n) array")
    return float(_norms(e, norm).max())


def score_input_trajectory(K, e, norm: float = 2) -> float:
    """max_t ||K e(t)|| over e(0..N-1)."""
    e = np.asarray(e, dtype=float)
    K = np.asarray(K, dtype=float)
    if e.ndim != 2 or e.shape[0] == 0:
        raise ValueError("e must be a nonempty (T, n) array")
    return float(_norms(e @ K.T, norm).max())


def score_disturbance_sequence(Yhat, w, norm: float = 2) -> float:
    """max_t ||Yhat w(t)|| over a disturbance sequence w(0..N-1)."""
    Yhat = np.asarray(Yhat, dtype=float)
    w = np.asarray(w, dtype=float)
    if Yhat.shape[0] != Yhat.shape[1] or Yhat.shape[1] != w.shape[1]:
        raise ValueError("Yhat must be square and match the disturbance dimension")
    return float(_norms(w @ Yhat.T, norm).max())


@dataclass(frozen=True, eq=False)
class BallRegion:
    """Prediction region ||x|| <= radius at confidence `level` over `horizon`."""

    radius: float
    dim: int
    level: float
    horizon: tuple

    def __post_init__(self):
        if not self.radius > 0.0:
            raise ValueError("radius must be positive")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        return np.linalg.norm(np.asarray(x, dtype=float), axis=-1) <= self.radius + tol

    def weighted_extent(self, S) -> float:
        """sup over the region of ||S^{1/2} x|| for SPD S."""
        return self.radius * math.sqrt(np.linalg.eigvalsh(check_spd(S, "S"))[-1])

    @property
    def enclosing_radius(self) -> float:
        return self.radius


@dataclass(frozen=True, eq=False)
class EllipsoidRegion:
    """Prediction region given by a centered ellipsoid."""

    ellipsoid: Ellipsoid
    level: float
    horizon: tuple

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        return self.ellipsoid.contains(x, tol=tol)

    def weighted_extent(self, S) -> float:
        """sup over {e' Phi e <= 1} of ||S^{1/2} e|| = sqrt(lmax(S^{1/2} Phi^{-1} S^{1/2}))."""
        Ss = sqrtm_spd(check_spd(S, "S"))
        Phi_inv = np.linalg.inv(self.ellipsoid.shape)
        return math.sqrt(np.linalg.eigvalsh(Ss @ Phi_inv @ Ss)[-1])

    @property
    def enclosing_radius(self) -> float:
        return 1.0 / math.sqrt(np.linalg.eigvalsh(self.ellipsoid.shape)[0])


@dataclass(frozen=True, eq=False)
class SplitDataset:
    """Disturbance sequences 0..k with calibration indices 0..k1, training k1+1..k."""

    sequences: np.ndarray
    k1: int

    def __post_init__(self):
        seq = np.asarray(self.sequences, dtype=float)
        if seq.ndim != 3:
            raise ValueError("sequences must be a (k+1, N, n) array")
        k = seq.shape[0] - 1
        if not 0 <= self.k1:
            raise ValueError("k1 must be nonnegative")
        if not self.k1 + 1 < k:
            raise ValueError(
                f"partition needs k1+1 < k (k1={self.k1}, k={k}): "
                "at least two training sequences"
            )
        object.__setattr__(self, "sequences", seq)

    @property
    def k(self) -> int:
        return self.sequences.shape[0] - 1

    @property
    def calibration(self) -> np.ndarray:
        return self.sequences[: self.k1 + 1]

    @property
    def training(self) -> np.ndarray:
        return self.sequences[self.k1 + 1 :]


def calibrate_regions(K, sys: LinearSystem, cal, theta: float, norm: float = 2):
    """Build ball prediction regions for e(1..N) and K e(0..N-1) by conformal calibration.

    `cal` holds the k1+1 calibration disturbance sequences; index 0 is the
    held-out test slot, so the quantile uses the k1 scores of sequences 1..k1
    augmented with +inf.  K must be fixed before the calibration data are
    touched (the pipeline trains on the disjoint training split first).

    Returns (error region, input region) as balls of radius C_e and C_Ke.
    Raises InsufficientCalibrationError when either quantile is infinite.
    """
    cal = np.asarray(cal, dtype=float)
    if cal.ndim != 3 or cal.shape[1] != sys.N or cal.shape[2] != sys.n:
        raise ValueError(f"cal must have shape (k1+1, {sys.N}, {sys.n})")
    k1 = cal.shape[0] - 1
    required = required_calibration_size(theta)
    if k1 < 1:
        raise InsufficientCalibrationError(k1, required)
    E = simulate_error_batch(sys, K, cal[1:])
    K = np.asarray(K, dtype=float).reshape(sys.m, sys.n)
    err_norms = _norms(E, norm)
    scores_e = err_norms.max(axis=1)
    # input scores run over e(0..N-1); e(0) = 0 contributes nothing
    inp_norms = _norms(E[:, :-1] @ K.T, norm)
    scores_u = inp_norms.max(axis=1) if inp_norms.shape[1] else np.zeros(k1)
    C_e = conformal_quantile(scores_e, theta)
    C_u = conformal_quantile(scores_u, theta)
    if math.isinf(C_e) or math.isinf(C_u):
        raise InsufficientCalibrationError(k1, required)
    level = 1.0 - theta
    # all-zero scores (w = 0, K = 0) would give radius 0; floor keeps the region valid
    tiny = float(np.finfo(float).tiny)
    region_e = BallRegion(radius=max(C_e, tiny), dim=sys.n, level=level, horizon=(1, sys.N))
    region_u = BallRegion(radius=max(C_u, tiny), dim=sys.m, level=level, horizon=(0, sys.N - 1))
    return region_e, region_u
