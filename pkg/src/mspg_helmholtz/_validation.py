"""Input checks shared by the estimator classes."""

from __future__ import annotations

import numpy as np

from .coefficients import CoefficientSet
from .mesh import MeshHierarchy


def check_mesh(mesh) -> MeshHierarchy:
    if not isinstance(mesh, MeshHierarchy):
        raise TypeError(f"expected a MeshHierarchy, got {type(mesh).__name__}")
    return mesh


def check_coefficients(coeffs) -> CoefficientSet:
    if not isinstance(coeffs, CoefficientSet):
        raise TypeError(f"expected a CoefficientSet, got {type(coeffs).__name__}")
    return coeffs


def check_dof_array(X, n_dofs: int, name: str = "X", dtype=None):
    """Accept one dof vector or a stack of row vectors.

    Returns the array as 2D ``(n_samples, n_dofs)`` and a flag telling whether
    the input was 1D, so callers can hand back the same shape.
    """
    X = np.asarray(X, dtype=dtype)
    squeeze = X.ndim == 1
    X2 = np.atleast_2d(X)
    if X2.ndim != 2 or X2.shape[1] != n_dofs:
        raise ValueError(f"{name} must have {n_dofs} entries per sample, got shape {X.shape}")
    if not np.all(np.isfinite(X2)):
        raise ValueError(f"{name} contains NaN or inf")
    return X2, squeeze


def check_positive(value, name: str) -> float:
    value = float(value)
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value
