"""Small dense symmetric-matrix helpers used across the package."""

from __future__ import annotations

import numpy as np

SYM_TOL = 1e-10
NEG_EIG_TOL = 1e-10


def check_symmetric(matrix: np.ndarray, tol: float = SYM_TOL, name: str = "matrix") -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError(f"{name} has non-finite entries")
    gap = np.abs(m - m.T).max() if m.size else 0.0
    if gap > tol:
        raise ValueError(f"{name} is not symmetric (max asymmetry {gap:.3e} > {tol:.1e})")
    return 0.5 * (m + m.T)


def sqrt_psd_with_clamp(matrix: np.ndarray, name: str = "matrix") -> tuple[np.ndarray, float]:
    """Symmetric PSD square root, plus the total mass of clamped eigenvalues.

    Eigenvalues in [-NEG_EIG_TOL, 0) are clamped to zero; anything more
    negative means the input is not positive semidefinite and is rejected.
    """
    sym = check_symmetric(matrix, name=name)
    vals, vecs = np.linalg.eigh(sym)
    if vals.size and vals[0] < -NEG_EIG_TOL:
        raise ValueError(
            f"{name} is not positive semidefinite (min eigenvalue {vals[0]:.3e})"
        )
    clamped = float(-vals[vals < 0.0].sum())
    vals = np.clip(vals, 0.0, None)
    root = (vecs * np.sqrt(vals)) @ vecs.T
    return root, clamped


def matrix_sqrt_psd(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root B with B @ B.T == matrix (eigendecomposition)."""
    root, _ = sqrt_psd_with_clamp(matrix)
    return root


def spectral_norm(matrix: np.ndarray) -> float:
    """Spectral norm of a symmetric matrix via its eigenvalues."""
    sym = check_symmetric(matrix)
    if sym.size == 0:
        return 0.0
    return float(np.abs(np.linalg.eigvalsh(sym)).max())
