"""Multiscale Petrov-Galerkin coarse system, reference FEM solves and error diagnostics."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._sparse import lu_factor
from ._validation import check_coefficients, check_mesh
from .assembly import Discretization
from .corrector import CorrectorBasis, CorrectorSolver, build_test_basis, resolution_warning
from .exceptions import SingularSystemError
from .interpolation import InterpolationOperator, build_interpolation

SOLVE_TOL = 1e-10


@dataclass(frozen=True)
class PGSystem:
    matrix: sp.csr_matrix  # B[i, j] = a(Lambda_j, tilde Lambda_i)
    rhs: np.ndarray
    nodes: np.ndarray  # coarse free node ids

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


def assemble_pg_system(disc: Discretization, basis: CorrectorBasis, load: np.ndarray | None = None) -> PGSystem:
    """Coarse Petrov-Galerkin matrix and load.

    Trial functions are the coarse hats, test functions the corrected hats;
    both are represented in the fine space and paired through the fine form.
    """
    test = basis.test_functions()
    P = basis.prolongation
    B = (test.conj().T @ disc.matrix @ P).tocsr()
    b = disc.rhs if load is None else load
    r = test.conj().T @ b
    return PGSystem(B, np.asarray(r), disc.mesh.free_node_ids("coarse"))


def _direct_solve(A, b, context):
    b = np.asarray(b, dtype=complex)
    if not np.any(b):
        return np.zeros(A.shape[1], dtype=complex)
    try:
        x = lu_factor(A).solve(b)
    except RuntimeError as exc:
        raise SingularSystemError(f"singular system: {exc}", context, _cond_estimate(A)) from exc
    res = np.linalg.norm(A @ x - b) / np.linalg.norm(b)
    if not np.isfinite(res) or res > SOLVE_TOL:
        raise SingularSystemError(f"residual {res:.3e} exceeds {SOLVE_TOL:g}", context, _cond_estimate(A))
    return x


def _cond_estimate(A):
    if A.shape[0] > 3000:
        return None
    return float(np.linalg.cond(A.toarray()))


def solve_mspgfem(system: PGSystem) -> np.ndarray:
    """Direct sparse solve of the coarse Petrov-Galerkin system."""
    return _direct_solve(system.matrix, system.rhs, {"system": "msPGFEM"})


def solve_standard_fem(disc: Discretization, level: str = "fine", prolongation=None) -> np.ndarray:
    """Galerkin FEM solution on the fine mesh or in the coarse space V_H.

    The coarse solve uses the Galerkin projection ``P^T A_h P`` of the fine
    matrix, i.e. standard Q1 FEM on the coarse mesh with the coefficients
    integrated at the fine scale.
    """
    if level == "fine":
        return _direct_solve(disc.matrix, disc.rhs, {"system": "fine FEM"})
    if level != "coarse":
        raise ValueError("level must be 'coarse' or 'fine'")
    if prolongation is None:
        from .interpolation import prolongation as build_prolongation

        prolongation = build_prolongation(disc.mesh)
    P = prolongation
    A = (P.T @ disc.matrix @ P).tocsr()
    return _direct_solve(A, P.T @ disc.rhs, {"system": "coarse FEM"})


def best_approximation(disc: Discretization, op: InterpolationOperator, u_h: np.ndarray) -> np.ndarray:
    """V-norm orthogonal projection of ``u_h`` onto V_H (coarse coefficients)."""
    G = disc.gram("V")
    P = op.prolongation
    return lu_factor((P.T @ G @ P).astype(complex)).solve(np.asarray(P.T @ (G @ u_h), dtype=complex))


@dataclass
class SolveReport:
    error_V: float
    error_L2: float
    best_V: float  # ||(1 - I_H) u_h||_V
    best_L2: float
    reference_V: float
    reference_L2: float
    quasi_optimality: float
    timings: dict = field(default_factory=dict)
    residual: float = 0.0


def diagnostics(disc: Discretization, op: InterpolationOperator, u_H: np.ndarray, u_h: np.ndarray, timings=None) -> SolveReport:
    """Errors of a coarse solution against the fine reference."""
    GV = disc.gram("V")
    GL = disc.gram("L2")

    def nrm(G, v):
        return float(np.sqrt(max(np.real(np.vdot(v, G @ v)), 0.0)))

    err = u_h - op.prolongation @ u_H
    best = u_h - op.project(u_h)
    eV, bV = nrm(GV, err), nrm(GV, best)
    q = eV / bV if bV > 0 else (0.0 if eV == 0 else float("inf"))
    return SolveReport(eV, nrm(GL, err), bV, nrm(GL, best), nrm(GV, u_h), nrm(GL, u_h), q, dict(timings or {}))


class MsPGFEM(BaseEstimator):
    """Multiscale Petrov-Galerkin solver with localized correctors.

    ``fit`` runs the offline phase: quasi-interpolation, all element corrector
    problems at oversampling ``oversampling`` and the coarse system matrix.
    ``solve`` then returns coarse solutions for the fitted data or any other
    load.

    Parameters
    ----------
    oversampling : int
        Patch order m of the corrector problems.
    """

    def __init__(self, oversampling: int = 2):
        self.oversampling = oversampling

    def fit(self, mesh, coefficients, disc: Discretization | None = None, op: InterpolationOperator | None = None):
        mesh = check_mesh(mesh)
        coefficients = check_coefficients(coefficients)
        if int(self.oversampling) < 1:
            raise ValueError("oversampling must be >= 1")
        self.timings_ = {}
        t0 = time.perf_counter()
        self.disc_ = disc or Discretization(mesh, coefficients, "fine")
        self.disc_.matrix
        self.interpolation_ = op or build_interpolation(mesh)
        t1 = time.perf_counter()
        self.basis_ = build_test_basis(
            mesh, coefficients, self.interpolation_, int(self.oversampling),
            CorrectorSolver(mesh, coefficients, self.interpolation_, self.disc_),
        )
        t2 = time.perf_counter()
        self.system_ = assemble_pg_system(self.disc_, self.basis_)
        self.timings_.update(assemble=t1 - t0, correctors=t2 - t1, pg_assembly=time.perf_counter() - t2)
        return self

    def solve(self, load: np.ndarray | None = None) -> np.ndarray:
        """Coarse free-dof solution; ``load`` is a fine free-dof load vector."""
        check_is_fitted(self, "system_")
        resolution_warning(self.disc_.mesh, self.disc_.k, int(self.oversampling))
        system = self.system_ if load is None else assemble_pg_system(self.disc_, self.basis_, load)
        t = time.perf_counter()
        u = solve_mspgfem(system)
        self.timings_["solve"] = time.perf_counter() - t
        return u

    def fine_solution(self, u_H: np.ndarray) -> np.ndarray:
        """Embed a coarse solution into the fine space."""
        check_is_fitted(self, "system_")
        return self.interpolation_.prolongation @ u_H


class StandardFEM(BaseEstimator):
    """Standard Q1 Galerkin FEM on the fine mesh or in the coarse space."""

    def __init__(self, level: str = "fine"):
        self.level = level

    def fit(self, mesh, coefficients, disc: Discretization | None = None):
        mesh = check_mesh(mesh)
        coefficients = check_coefficients(coefficients)
        if self.level not in ("coarse", "fine"):
            raise ValueError("level must be 'coarse' or 'fine'")
        self.disc_ = disc or Discretization(mesh, coefficients, "fine")
        return self

    def solve(self) -> np.ndarray:
        check_is_fitted(self, "disc_")
        return solve_standard_fem(self.disc_, self.level)
