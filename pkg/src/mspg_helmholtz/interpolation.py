"""Projective quasi-interpolation from the fine onto the coarse Q1 space.

The operator is ``I_H = E_H o Pi_H``: an elementwise L2 projection onto
discontinuous Q1 on every coarse cell followed by averaging the cell values
at every free coarse vertex. Dirichlet vertices are set to zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_dof_array, check_mesh
from .assembly import patch_dofs
from .mesh import ElementPatch, MeshHierarchy
from .quadrature import gauss_2d, q1_shape

_REF_MASS = np.array([[4, 2, 1, 2], [2, 4, 2, 1], [1, 2, 4, 2], [2, 1, 2, 4]]) / 36.0


def _prolongation_1d(n_coarse: int, r: int) -> sp.csr_matrix:
    i = np.arange(n_coarse * r + 1)
    c = np.minimum(i // r, n_coarse - 1)
    t = (i - c * r) / r
    rows = np.concatenate([i, i])
    cols = np.concatenate([c, c + 1])
    vals = np.concatenate([1 - t, t])
    keep = vals != 0
    return sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(len(i), n_coarse + 1)).tocsr()


def prolongation(mesh: MeshHierarchy, free_only: bool = True) -> sp.csr_matrix:
    """Embedding of coarse Q1 functions into the fine Q1 space."""
    nx, ny = mesh.cells("coarse")
    r = mesh.refinement_factor
    P = sp.kron(_prolongation_1d(ny, r), _prolongation_1d(nx, r), format="csr")
    if free_only:
        P = P[mesh.free_node_ids("fine")][:, mesh.free_node_ids("coarse")]
    return P.tocsr()


@lru_cache(maxsize=None)
def local_projection(r: int) -> np.ndarray:
    """Coefficients of the L2 projection onto Q1 of the fine hats of one cell.

    Shape ``(4, (r+1)**2)``; fine nodes are x-index fastest, coarse corners
    counterclockwise. The matrix is invariant under scaling of the cell.
    """
    xi, eta, w = gauss_2d(3)
    phi_fine = q1_shape(xi, eta)
    moments = np.zeros((4, (r + 1) ** 2))
    for sy in range(r):
        for sx in range(r):
            phi_coarse = q1_shape((sx + xi) / r, (sy + eta) / r)
            local = (phi_coarse * w[:, None]).T @ phi_fine / r**2
            base = sx + sy * (r + 1)
            corners = [base, base + 1, base + r + 2, base + r + 1]
            moments[:, corners] += local
    proj = np.linalg.solve(_REF_MASS, moments)
    proj[np.abs(proj) < 1e-14 * np.abs(proj).max()] = 0.0
    return proj


@dataclass(frozen=True)
class InterpolationOperator:
    mesh: MeshHierarchy
    matrix: sp.csr_matrix  # coarse free x fine free
    prolongation: sp.csr_matrix  # fine free x coarse free

    def apply(self, v):
        return self.matrix @ v

    def project(self, v):
        """``P I_H v``: the interpolant as a fine-space function."""
        return self.prolongation @ (self.matrix @ v)


def build_interpolation(mesh: MeshHierarchy) -> InterpolationOperator:
    r = mesh.refinement_factor
    proj = local_projection(r)
    cells = mesh.cell_nodes("coarse")
    n_coarse_nodes = mesh.num_nodes("coarse")
    count = np.bincount(cells.ravel(), minlength=n_coarse_nodes)
    fine_nodes = np.stack([mesh.fine_nodes_in(c) for c in range(len(cells))])
    nloc = fine_nodes.shape[1]
    rows = np.repeat(cells, nloc, axis=1).ravel()
    cols = np.tile(fine_nodes, (1, 4)).ravel()
    vals = (proj[None, :, :] / count[cells][:, :, None]).ravel()
    keep = vals != 0
    full = sp.coo_matrix(
        (vals[keep], (rows[keep], cols[keep])), shape=(n_coarse_nodes, mesh.num_nodes("fine"))
    ).tocsr()
    matrix = full[mesh.free_node_ids("coarse")][:, mesh.free_node_ids("fine")].tocsr()
    matrix.eliminate_zeros()
    return InterpolationOperator(mesh, matrix, prolongation(mesh))


@dataclass(frozen=True)
class ConstraintSet:
    matrix: sp.csr_matrix  # rows: coarse nodes touching the patch, cols: patch dofs
    rows: np.ndarray  # coarse free positions of the kept rows
    dofs: np.ndarray  # patch dofs in the free fine ordering


def constraint_set(op: InterpolationOperator, patch: ElementPatch, dofs=None) -> ConstraintSet:
    """Constraints whose kernel within the patch dofs is W_h(patch)."""
    if dofs is None:
        dofs = patch_dofs(op.mesh, patch)
    C = op.matrix[:, dofs].tocsr()
    C.eliminate_zeros()
    rows = np.flatnonzero(np.diff(C.indptr) > 0)
    return ConstraintSet(C[rows].tocsr(), rows, np.asarray(dofs))


class QuasiInterpolation(TransformerMixin, BaseEstimator):
    """Transformer mapping fine FE vectors onto coarse FE vectors.

    ``transform`` applies I_H to rows of fine free-dof coefficients;
    ``inverse_transform`` embeds coarse vectors back into the fine space.

    Examples
    --------
    >>> from mspg_helmholtz.mesh import build_hierarchy
    >>> mesh = build_hierarchy(coarse_cells=4, levels=2)
    >>> qi = QuasiInterpolation().fit(mesh)
    >>> qi.transform(qi.inverse_transform([1.0] * 25)).round(12).tolist() == [1.0] * 25
    True
    """

    def fit(self, mesh, y=None):
        mesh = check_mesh(mesh)
        self.operator_ = build_interpolation(mesh)
        self.n_fine_dofs_ = self.operator_.matrix.shape[1]
        self.n_coarse_dofs_ = self.operator_.matrix.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "operator_")
        X2, squeeze = check_dof_array(X, self.n_fine_dofs_)
        out = (self.operator_.matrix @ X2.T).T
        return out[0] if squeeze else out

    def inverse_transform(self, X):
        check_is_fitted(self, "operator_")
        X2, squeeze = check_dof_array(X, self.n_coarse_dofs_)
        out = (self.operator_.prolongation @ X2.T).T
        return out[0] if squeeze else out


def local_stability_ratios(op: InterpolationOperator, vectors) -> np.ndarray:
    """Per-cell ratios of the local approximation/stability estimate.

    For each fine vector v (rows of ``vectors``, full free-dof length) and
    coarse cell T returns

        (H^-1 ||v - I_H v||_{L2(T)} + ||grad I_H v||_{L2(T)}) / ||grad v||_{L2(N(T))}

    with N(T) the one-layer patch. Shape ``(n_vectors, n_coarse_cells)``;
    cells where ``grad v`` vanishes on N(T) give NaN.
    """
    from .assembly import _reference_tensors
    from .mesh import patch

    mesh = op.mesh
    V = np.atleast_2d(np.asarray(vectors))
    free = mesh.free_node_ids("fine")
    full = np.zeros((V.shape[0], mesh.num_nodes("fine")), dtype=V.dtype)
    full[:, free] = V
    interp = np.zeros_like(full)
    interp[:, free] = (op.prolongation @ (op.matrix @ V.T)).T
    stiff, mass = (t.sum(axis=0) for t in _reference_tensors(*mesh.cell_size("fine")))
    conn = mesh.cell_nodes("fine")
    owner = mesh.coarse_cell_of_fine(np.arange(len(conn)))
    n_coarse = mesh.num_cells("coarse")

    def per_cell(u, local):
        c = u[:, conn]  # (nv, ncells, 4)
        vals = np.einsum("vci,ij,vcj->vc", c.conj(), local, c).real
        out = np.zeros((u.shape[0], n_coarse))
        for j in range(u.shape[0]):
            out[j] = np.bincount(owner, vals[j], minlength=n_coarse)
        return out

    err = per_cell(full - interp, mass)
    grad_i = per_cell(interp, stiff)
    grad_v = per_cell(full, stiff)
    ring = np.zeros((n_coarse, n_coarse))
    for T in range(n_coarse):
        ring[T, sorted(patch(mesh, T, 1).elements)] = 1.0
    grad_patch = grad_v @ ring.T
    H = max(mesh.cell_size("coarse"))
    with np.errstate(invalid="ignore", divide="ignore"):
        return (np.sqrt(err) / H + np.sqrt(grad_i)) / np.sqrt(grad_patch)
