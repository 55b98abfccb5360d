"""Fine-scale correctors and the multiscale test basis.

For a coarse element T with patch N^m(T) and a coarse hat function Lambda_z,
the element corrector lambda_{z,T} lies in the kernel of I_H within V_h(patch)
and satisfies

    a_patch(w, lambda_{z,T}) = a_T(w, Lambda_z)   for all w in W_h(patch).

The unknown sits in the conjugated slot of the form, so the discrete system
uses the conjugate transpose of the patch matrix. The kernel constraint is
imposed with Lagrange multipliers:

    [ A_P^H  C^T ] [lambda]   [ M_T^H Lambda_z ]
    [ C      0   ] [  mu  ] = [       0        ]
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._sparse import lu_factor
from .assembly import Discretization, patch_dofs
from .exceptions import SingularSystemError
from .interpolation import InterpolationOperator, constraint_set
from .mesh import ElementPatch, MeshHierarchy, patch
from .quadrature import q1_shape

RESIDUAL_TOL = 1e-10


@dataclass
class PatchProblem:
    """Factorized saddle-point system of one patch."""

    patch: ElementPatch
    dofs: np.ndarray
    n_constraints: int
    matrix: sp.csc_matrix
    lu: object

    def solve(self, rhs: np.ndarray, context=None) -> np.ndarray:
        """Solve for one or more right sides given on the patch dofs."""
        rhs = np.asarray(rhs, dtype=complex)
        squeeze = rhs.ndim == 1
        rhs = rhs.reshape(len(self.dofs), -1)
        full = np.vstack([rhs, np.zeros((self.n_constraints, rhs.shape[1]), dtype=complex)])
        x = self.lu.solve(full)
        res = np.linalg.norm(self.matrix @ x - full, axis=0)
        scale = np.maximum(np.linalg.norm(full, axis=0), np.finfo(float).tiny)
        rel = res / scale
        rel[np.linalg.norm(full, axis=0) == 0] = res[np.linalg.norm(full, axis=0) == 0]
        if not np.all(rel <= RESIDUAL_TOL) or not np.all(np.isfinite(x)):
            raise SingularSystemError("corrector solve residual too large", context, None)
        self.last_residual = float(rel.max(initial=0.0))
        out = x[: len(self.dofs)]
        return out[:, 0] if squeeze else out


class CorrectorSolver:
    """Shared data for all corrector problems of one discretization."""

    def __init__(self, mesh: MeshHierarchy, coeffs, op: InterpolationOperator, disc: Discretization | None = None):
        self.mesh = mesh
        self.coeffs = coeffs
        self.op = op
        self.disc = disc or Discretization(mesh, coeffs, "fine")
        self._coarse_free_pos = np.full(mesh.num_nodes("coarse"), -1)
        self._coarse_free_pos[mesh.free_node_ids("coarse")] = np.arange(len(mesh.free_node_ids("coarse")))
        self._ideal = None

    @property
    def n_fine(self) -> int:
        return len(self.disc.free)

    def coarse_position(self, z: int) -> int:
        return int(self._coarse_free_pos[z])

    def patch_problem(self, p: ElementPatch, dofs=None, context=None) -> PatchProblem:
        if dofs is None:
            dofs = patch_dofs(self.mesh, p, self.disc)
        cons = constraint_set(self.op, p, dofs)
        A = self.disc.matrix[dofs][:, dofs]
        K = sp.bmat([[A.conj().T, cons.matrix.T], [cons.matrix, None]], format="csc")
        try:
            lu = lu_factor(K)
        except RuntimeError as exc:
            cond = None
            if K.shape[0] <= 2000:
                cond = float(np.linalg.cond(K.toarray()))
            raise SingularSystemError(f"singular corrector saddle-point system: {exc}", context, cond) from exc
        return PatchProblem(p, np.asarray(dofs), cons.matrix.shape[0], K, lu)

    def element_rhs(self, T: int, dofs: np.ndarray, corners=None):
        """Right sides ``M_T^H Lambda_z`` on ``dofs`` for the free corners of T.

        Returns the list of coarse node ids z and an array ``(len(dofs), n_z)``.
        """
        nodes, block = self.disc.element_block(T)
        r = self.mesh.refinement_factor
        s = np.arange(r + 1) / r
        xi, eta = np.meshgrid(s, s)
        phi = q1_shape(xi.ravel(), eta.ravel())  # (n_local, 4)
        cell = self.mesh.cell_nodes("coarse")[T]
        zs = [int(z) for z in cell if self._coarse_free_pos[z] >= 0]
        if corners is not None:
            zs = [z for z in zs if z in corners]
        cols = [list(cell).index(z) for z in zs]
        local = block.conj().T @ phi[:, cols]
        where = np.full(self.n_fine, -1)
        where[dofs] = np.arange(len(dofs))
        pos = self.disc.free_positions(nodes)
        keep = pos >= 0
        target = where[pos[keep]]
        if np.any(target < 0):
            raise ValueError(f"coarse element {T} is not interior to the patch")
        rhs = np.zeros((len(dofs), len(zs)), dtype=complex)
        rhs[target] = local[keep]
        return zs, rhs

    def element_correctors(self, T: int, m: int) -> tuple[list, PatchProblem, np.ndarray]:
        """All correctors lambda_{z,T} of one coarse element, on the patch dofs."""
        p = patch(self.mesh, T, m)
        prob = self.patch_problem(p, context={"T": T, "m": m})
        zs, rhs = self.element_rhs(T, prob.dofs)
        if not zs:
            return zs, prob, np.zeros((len(prob.dofs), 0), dtype=complex)
        return zs, prob, prob.solve(rhs, context={"z": zs, "T": T, "m": m})

    def ideal_problem(self) -> PatchProblem:
        if self._ideal is None:
            everything = ElementPatch((0,), 0, frozenset(range(self.mesh.num_cells("coarse"))))
            self._ideal = self.patch_problem(everything, np.arange(self.n_fine), context={"patch": "global"})
        return self._ideal

    def ideal_corrector(self, z: int) -> np.ndarray:
        """Global corrector of Lambda_z: a(w, lambda) = a(w, Lambda_z) on W_h."""
        j = self.coarse_position(z)
        if j < 0:
            raise ValueError(f"coarse node {z} is not free")
        hat = self.op.prolongation[:, j].toarray().ravel()
        rhs = self.disc.matrix.conj().T @ hat
        prob = self.ideal_problem()
        return prob.solve(rhs, context={"z": z, "patch": "global"})


def _pad(n, dofs, values):
    out = np.zeros(n, dtype=complex)
    out[dofs] = values
    return out


def solve_element_corrector(mesh, coeffs, op, z: int, T: int, m: int, solver: CorrectorSolver | None = None) -> np.ndarray:
    """lambda_{z,T} as a fine free-dof vector, zero outside the patch."""
    solver = solver or CorrectorSolver(mesh, coeffs, op)
    if int(z) not in mesh.cell_nodes("coarse")[T] or solver.coarse_position(z) < 0:
        return np.zeros(solver.n_fine, dtype=complex)
    p = patch(mesh, T, m)
    prob = solver.patch_problem(p, context={"z": z, "T": T, "m": m})
    zs, rhs = solver.element_rhs(T, prob.dofs, corners={int(z)})
    lam = prob.solve(rhs[:, 0], context={"z": z, "T": T, "m": m})
    return _pad(solver.n_fine, prob.dofs, lam)


def solve_ideal_corrector(mesh, coeffs, op, z: int, solver: CorrectorSolver | None = None) -> np.ndarray:
    solver = solver or CorrectorSolver(mesh, coeffs, op)
    return solver.ideal_corrector(z)


@dataclass
class CorrectorBasis:
    """Correctors lambda_z of all free coarse nodes, one column per node."""

    oversampling: int
    correctors: sp.csr_matrix  # fine free x coarse free
    supports: dict  # coarse node -> frozenset of coarse elements
    n_solves: int
    max_residual: float
    prolongation: sp.csr_matrix = field(repr=False)

    @property
    def dimension(self) -> int:
        return self.correctors.shape[1]

    def test_functions(self) -> sp.csr_matrix:
        """Multiscale test functions ``Lambda_z - lambda_z`` as fine vectors."""
        return (self.prolongation.astype(complex) - self.correctors).tocsr()


def resolution_warning(mesh, k, m=None):
    kH = k * nominal_size(mesh, "coarse")
    if kH > 1.0:
        warnings.warn(f"k*H = {kH:.3g} > 1: corrector decay and localization are not guaranteed", stacklevel=3)
    if m is not None and m < math.log2(k) - 1:
        warnings.warn(f"oversampling m={m} < log2(k) - 1 = {math.log2(k) - 1:.3g}", stacklevel=3)


def nominal_size(mesh: MeshHierarchy, level: str) -> float:
    """Cell edge relative to the domain side, e.g. 2**-3 for 8 cells per axis."""
    nx, ny = mesh.cells(level)
    return 1.0 / min(nx, ny)


def build_test_basis(mesh, coeffs, op, m: int, solver: CorrectorSolver | None = None) -> CorrectorBasis:
    """Solve every element corrector problem and sum them per coarse node."""
    solver = solver or CorrectorSolver(mesh, coeffs, op)
    resolution_warning(mesh, coeffs.wavenumber_k)
    rows, cols, vals = [], [], []
    supports: dict = {}
    n_solves = 0
    max_res = 0.0
    for T in range(mesh.num_cells("coarse")):
        zs, prob, lam = solver.element_correctors(T, m)
        if not zs:
            continue
        n_solves += len(zs)
        max_res = max(max_res, prob.last_residual)
        for j, z in enumerate(zs):
            rows.append(prob.dofs)
            cols.append(np.full(len(prob.dofs), solver.coarse_position(z)))
            vals.append(lam[:, j])
            supports[z] = supports.get(z, frozenset()) | prob.patch.elements
    shape = (solver.n_fine, len(mesh.free_node_ids("coarse")))
    if rows:
        correctors = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
        ).tocsr()
    else:
        correctors = sp.csr_matrix(shape, dtype=complex)
    return CorrectorBasis(int(m), correctors, supports, n_solves, max_res, op.prolongation)


@dataclass(frozen=True)
class DecayProfile:
    node: int
    m_values: tuple
    deviations: tuple
    theta_hat: float

    @property
    def ratios(self) -> np.ndarray:
        e = np.asarray(self.deviations)
        with np.errstate(divide="ignore", invalid="ignore"):
            return e[1:] / e[:-1]


def truncated_node_corrector(solver: CorrectorSolver, z: int, m: int) -> np.ndarray:
    """lambda_z at oversampling m: sum of the element correctors of the cells at z."""
    mesh = solver.mesh
    cells = np.flatnonzero(np.any(mesh.cell_nodes("coarse") == z, axis=1))
    total = np.zeros(solver.n_fine, dtype=complex)
    for T in cells:
        total += solve_element_corrector(mesh, solver.coeffs, solver.op, z, int(T), m, solver)
    return total


def decay_profile(mesh, coeffs, op, z: int, m_list, solver: CorrectorSolver | None = None) -> DecayProfile:
    """Deviation ``||grad(lambda_z^ideal - lambda_z^(m))||`` for each m."""
    solver = solver or CorrectorSolver(mesh, coeffs, op)
    ideal = solver.ideal_corrector(z)
    G = solver.disc.gram("H1semi")
    errors = []
    for m in m_list:
        d = ideal - truncated_node_corrector(solver, z, int(m))
        errors.append(float(np.sqrt(max(np.real(np.vdot(d, G @ d)), 0.0))))
    e = np.asarray(errors)
    pos = e > 0
    ratios = e[1:][pos[1:] & pos[:-1]] / e[:-1][pos[1:] & pos[:-1]]
    theta = float(np.exp(np.mean(np.log(ratios)))) if len(ratios) else 0.0
    return DecayProfile(int(z), tuple(int(m) for m in m_list), tuple(errors), theta)


def random_kernel_vectors(C: sp.spmatrix, n: int, rng) -> np.ndarray:
    """Random complex vectors in ``ker C``, columns of a ``(C.shape[1], n)`` array."""
    C = sp.csr_matrix(C)
    V = rng.standard_normal((C.shape[1], n)) + 1j * rng.standard_normal((C.shape[1], n))
    if C.shape[0] == 0:
        return V
    CCt = (C @ C.T).toarray()
    return V - C.T @ np.linalg.solve(CCt, C @ V)


def corrector_residual(solver: CorrectorSolver, z: int, T: int, m: int, lam=None, n_test: int = 20, rng=None) -> float:
    """Largest relative residual of the corrector identity over random test functions.

    For ``w`` drawn from W_h(patch) evaluates
    ``|a_patch(w, lambda) - a_T(w, Lambda_z)| / (|a_patch(w, lambda)| + |a_T(w, Lambda_z)|)``.
    """
    rng = np.random.default_rng(rng)
    mesh = solver.mesh
    p = patch(mesh, T, m)
    dofs = patch_dofs(mesh, p, solver.disc)
    if lam is None:
        lam = solve_element_corrector(mesh, solver.coeffs, solver.op, z, T, m, solver)
    W = np.zeros((solver.n_fine, n_test), dtype=complex)
    W[dofs] = random_kernel_vectors(constraint_set(solver.op, p, dofs).matrix, n_test, rng)
    A = solver.disc.matrix
    hat = solver.op.prolongation[:, solver.coarse_position(z)].toarray().ravel()
    lhs = lam.conj() @ (A @ W)
    rhs = hat.conj() @ (solver.disc.element_form(T) @ W)
    scale = np.abs(lhs) + np.abs(rhs)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(scale > 0, np.abs(lhs - rhs) / scale, 0.0)
    return float(rel.max())
