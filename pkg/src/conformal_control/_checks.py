"""Input validation helpers and small SPD matrix utilities."""
from __future__ import annotations

import numpy as np

SYM_ATOL = 1e-12


def as_matrix(M, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"{name} must be a 2-d matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


def as_vector(v, name: str, dim: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"{name} must have length {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def check_symmetric(M, name: str, atol_rel: float = SYM_ATOL) -> np.ndarray:
    M = as_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    scale = max(1.0, float(np.abs(M).max()))
    if np.abs(M - M.T).max() > atol_rel * scale:
        raise ValueError(f"{name} is not symmetric within {atol_rel:g} relative")
    return 0.5 * (M + M.T)


def check_spd(M, name: str) -> np.ndarray:
    M = check_symmetric(M, name)
    if np.linalg.eigvalsh(M).min() <= 0.0:
        raise ValueError(f"{name} must be positive definite")
    return M


def check_psd(M, name: str, tol: float = 0.0) -> np.ndarray:
    M = check_symmetric(M, name)
    if np.linalg.eigvalsh(M).min() < -tol:
        raise ValueError(f"{name} must be positive semidefinite")
    return M


def sqrtm_spd(M: np.ndarray) -> np.ndarray:
    """Symmetric square root of a symmetric PSD matrix."""
    vals, vecs = np.linalg.eigh(M)
    vals = np.clip(vals, 0.0, None)
    return vecs @ np.diag(np.sqrt(vals)) @ vecs.T


def inv_spd(M: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric PD matrix, symmetrized against round-off."""
    Mi = np.linalg.inv(M)
    return 0.5 * (Mi + Mi.T)
