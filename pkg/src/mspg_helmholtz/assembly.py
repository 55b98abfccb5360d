"""Assembly of the Helmholtz sesquilinear form, load vectors and weighted norms.

Matrices are row-indexed by test functions, ``M[i, j] = a(phi_j, phi_i)``, and
the form is conjugate-linear in its second argument, so for coefficient
vectors ``a(u, v) = v^H M u``. All assembled matrices and vectors act on the
free (non-Dirichlet) nodes of a level, ordered by node id.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .mesh import ElementPatch, MeshHierarchy
from .quadrature import cell_points, face_points, gauss_2d, q1_shape, q1_shape_grad

QUAD_ORDER = 3
EDGE_ORDER = 2


def _reference_tensors(hx, hy, order=QUAD_ORDER):
    """Per-quadrature-point stiffness and mass integrands on one cell."""
    xi, eta, w = gauss_2d(order)
    phi = q1_shape(xi, eta)
    dxi, deta = q1_shape_grad(xi, eta)
    gx, gy = dxi / hx, deta / hy
    area = hx * hy
    stiff = area * w[:, None, None] * (gx[:, :, None] * gx[:, None, :] + gy[:, :, None] * gy[:, None, :])
    mass = area * w[:, None, None] * phi[:, :, None] * phi[:, None, :]
    return stiff, mass


def _scatter(conn, local, n):
    """Sum local matrices ``(n_elem, p, p)`` into a sparse ``n x n`` matrix."""
    p = conn.shape[1]
    rows = np.repeat(conn, p, axis=1).ravel()
    cols = np.tile(conn, (1, p)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


class Discretization:
    """Cell- and face-level integrals of the problem data on one mesh level.

    The form splits as ``a = K_A - k^2 M_V2 - i k R_beta``; the three real
    pieces are kept separately so that norms and k-sweeps reuse them.
    """

    def __init__(self, mesh: MeshHierarchy, coeffs, level: str = "fine"):
        self.mesh = mesh
        self.coeffs = coeffs
        self.level = level
        self.k = float(coeffs.wavenumber_k)
        self.n_nodes = mesh.num_nodes(level)
        self.free = mesh.free_node_ids(level)
        self._free_pos = np.full(self.n_nodes, -1)
        self._free_pos[self.free] = np.arange(len(self.free))

    # --- cell and face integrals ----------------------------------------

    @cached_property
    def _quad(self):
        return cell_points(self.mesh, self.level, QUAD_ORDER)

    def _weights(self, fld):
        x, y, _ = self._quad
        return fld.check(x, y)

    @cached_property
    def cell_stiffness(self) -> np.ndarray:
        """A-weighted element stiffness matrices, ``(n_cells, 4, 4)``."""
        stiff, _ = _reference_tensors(*self.mesh.cell_size(self.level))
        return np.einsum("cq,qij->cij", self._weights(self.coeffs.diffusion_A), stiff)

    @cached_property
    def cell_mass(self) -> np.ndarray:
        """V^2-weighted element mass matrices."""
        _, mass = _reference_tensors(*self.mesh.cell_size(self.level))
        return np.einsum("cq,qij->cij", self._weights(self.coeffs.refraction_V2), mass)

    @cached_property
    def robin_faces(self) -> np.ndarray:
        return self.mesh.boundary_faces(self.level).select("robin")

    @cached_property
    def face_mass(self) -> np.ndarray:
        """beta-weighted boundary mass matrices of the Robin faces, ``(n, 2, 2)``."""
        idx = self.robin_faces
        x, y, w, s = face_points(self.mesh, idx, self.level, EDGE_ORDER)
        beta = self.coeffs.impedance_beta.check(x, y)
        psi = np.stack([1 - s, s], axis=-1)
        return np.einsum("fq,qa,qb->fab", beta * w, psi, psi)

    @cached_property
    def _face_nodes(self):
        return self.mesh.boundary_faces(self.level).nodes[self.robin_faces]

    # --- global real pieces on all nodes ---------------------------------

    @cached_property
    def stiffness_A(self):
        return _scatter(self.mesh.cell_nodes(self.level), self.cell_stiffness, self.n_nodes)

    @cached_property
    def mass_V2(self):
        return _scatter(self.mesh.cell_nodes(self.level), self.cell_mass, self.n_nodes)

    @cached_property
    def robin_beta(self):
        return _scatter(self._face_nodes, self.face_mass, self.n_nodes)

    @cached_property
    def mass(self):
        _, mass = _reference_tensors(*self.mesh.cell_size(self.level))
        local = np.broadcast_to(mass.sum(axis=0), (self.mesh.num_cells(self.level), 4, 4))
        return _scatter(self.mesh.cell_nodes(self.level), local, self.n_nodes)

    @cached_property
    def stiffness(self):
        stiff, _ = _reference_tensors(*self.mesh.cell_size(self.level))
        local = np.broadcast_to(stiff.sum(axis=0), (self.mesh.num_cells(self.level), 4, 4))
        return _scatter(self.mesh.cell_nodes(self.level), local, self.n_nodes)

    def restrict(self, matrix):
        return matrix[self.free][:, self.free].tocsr()

    # --- free-dof operators ----------------------------------------------

    def system(self, k: float | None = None):
        """Complex system matrix on free dofs for wavenumber ``k``."""
        k = self.k if k is None else float(k)
        full = self.stiffness_A - k**2 * self.mass_V2 - 1j * k * self.robin_beta
        return self.restrict(full.tocsr())

    @cached_property
    def matrix(self):
        return self.system()

    def gram(self, which: str = "V", k: float | None = None):
        """Real Gram matrix of a norm on free dofs."""
        k = self.k if k is None else float(k)
        if which == "V":
            return self.restrict(k**2 * self.mass_V2 + self.stiffness_A)
        if which == "L2":
            return self.restrict(self.mass)
        if which == "H1semi":
            return self.restrict(self.stiffness)
        raise ValueError(f"unknown norm {which!r}")

    def load(self, f=None, g=None) -> np.ndarray:
        """``b[i] = (f, phi_i) + (g, phi_i)_{Gamma_R}`` on free dofs."""
        f = self.coeffs.volume_forcing_f if f is None else f
        g = self.coeffs.robin_data_g if g is None else g
        b = np.zeros(self.n_nodes, dtype=complex)
        if f is not None:
            x, y, w = self._quad
            xi, eta, _ = gauss_2d(QUAD_ORDER)
            phi = q1_shape(xi, eta)
            fq = np.asarray(f(x, y), dtype=complex)
            np.add.at(b, self.mesh.cell_nodes(self.level), (fq * w[None, :]) @ phi)
        if g is not None and len(self.robin_faces):
            x, y, w, s = face_points(self.mesh, self.robin_faces, self.level, EDGE_ORDER)
            psi = np.stack([1 - s, s], axis=-1)
            gq = np.asarray(g(x, y), dtype=complex)
            np.add.at(b, self._face_nodes, (gq * w) @ psi)
        return b[self.free]

    @cached_property
    def rhs(self) -> np.ndarray:
        return self.load()

    # --- coarse-element localisation --------------------------------------

    def free_positions(self, node_ids) -> np.ndarray:
        """Position of nodes in the free-dof ordering, -1 for Dirichlet nodes."""
        return self._free_pos[np.asarray(node_ids)]

    @cached_property
    def _robin_face_coarse_cell(self):
        mid = self.mesh.boundary_faces(self.level).midpoint[self.robin_faces]
        hx, hy = self.mesh.cell_size("coarse")
        nx, ny = self.mesh.cells("coarse")
        ix = np.clip(((mid[:, 0] - self.mesh.domain_origin[0]) // hx).astype(int), 0, nx - 1)
        iy = np.clip(((mid[:, 1] - self.mesh.domain_origin[1]) // hy).astype(int), 0, ny - 1)
        return ix + iy * nx

    def element_block(self, coarse_cell: int, k: float | None = None):
        """Dense a_T on the fine nodes of one closed coarse cell.

        Returns ``(node_ids, matrix)`` where ``matrix[i, j] = a_T(phi_j, phi_i)``
        and ``node_ids`` are all ``(r+1)**2`` fine nodes of the cell, including
        Dirichlet ones.
        """
        if self.level != "fine":
            raise ValueError("element blocks are defined on the fine level")
        k = self.k if k is None else float(k)
        nodes = self.mesh.fine_nodes_in(coarse_cell)
        cells = self.mesh.fine_cells_in(coarse_cell)
        conn = np.searchsorted(nodes, self.mesh.cell_nodes("fine")[cells])
        local = self.cell_stiffness[cells] - k**2 * self.cell_mass[cells]
        n = len(nodes)
        block = np.zeros((n, n), dtype=complex)
        np.add.at(block, (conn[:, :, None], conn[:, None, :]), local)
        sel = np.flatnonzero(self._robin_face_coarse_cell == coarse_cell)
        if len(sel):
            fconn = np.searchsorted(nodes, self._face_nodes[sel])
            np.add.at(block, (fconn[:, :, None], fconn[:, None, :]), -1j * k * self.face_mass[sel])
        return nodes, block

    def element_form(self, coarse_cell: int, k: float | None = None):
        """a_T as a sparse matrix on the global free fine dofs."""
        nodes, block = self.element_block(coarse_cell, k)
        pos = self.free_positions(nodes)
        keep = pos >= 0
        sub = sp.coo_matrix(block[np.ix_(keep, keep)])
        n = len(self.free)
        return sp.coo_matrix((sub.data, (pos[keep][sub.row], pos[keep][sub.col])), shape=(n, n)).tocsr()


def assemble_form(mesh: MeshHierarchy, level: str, coeffs):
    """Complex system matrix of the Helmholtz form on the free dofs of a level."""
    return Discretization(mesh, coeffs, level).matrix


def assemble_load(mesh: MeshHierarchy, level: str, coeffs) -> np.ndarray:
    return Discretization(mesh, coeffs, level).rhs


@dataclass(frozen=True)
class LocalizedForms:
    dofs: np.ndarray  # positions in the free fine dof ordering
    patch_form: sp.csr_matrix
    element_forms: dict


def patch_dofs(mesh: MeshHierarchy, patch: ElementPatch, disc: Discretization | None = None) -> np.ndarray:
    """Free fine dofs of V_h(patch), as positions in the free fine ordering."""
    free_mask = mesh.free_node_mask("fine")
    nodes = mesh.fine_nodes_in_patch(patch)
    nodes = nodes[free_mask[nodes]]
    if disc is not None:
        return disc.free_positions(nodes)
    return np.searchsorted(mesh.free_node_ids("fine"), nodes)


def assemble_localized(mesh: MeshHierarchy, coeffs, patch: ElementPatch, disc: Discretization | None = None) -> LocalizedForms:
    """Patch form a_{Omega_T} and the element forms a_T of the patch elements.

    Functions of V_h(Omega_T) vanish outside the patch, so the patch form is the
    global fine matrix restricted to the patch dofs; the Robin term enters only
    where the patch meets the physical Robin boundary.
    """
    disc = disc or Discretization(mesh, coeffs, "fine")
    dofs = patch_dofs(mesh, patch, disc)
    form = disc.matrix[dofs][:, dofs].tocsr()
    elements = {int(t): disc.element_form(int(t))[dofs][:, dofs].tocsr() for t in sorted(patch.elements)}
    return LocalizedForms(dofs, form, elements)


def norm(mesh: MeshHierarchy, coeffs, vec, which: str = "V", level: str = "fine", disc: Discretization | None = None) -> float:
    """V, L2 or H1-seminorm of a free-dof FE vector.

    The V-norm is ``sqrt(k^2 ||V u||^2 + ||A^(1/2) grad u||^2)``.
    """
    disc = disc or Discretization(mesh, coeffs, level)
    vec = np.asarray(vec)
    G = disc.gram(which)
    return float(np.sqrt(max(np.real(np.vdot(vec, G @ vec)), 0.0)))


def coo_dump(matrix, path: str) -> None:
    """Write a sparse matrix as ``row col re im`` lines."""
    m = sp.coo_matrix(matrix)
    order = np.lexsort((m.col, m.row))
    with open(path, "w") as fh:
        fh.write(f"% {m.shape[0]} {m.shape[1]} {m.nnz}\n")
        for i in order:
            v = complex(m.data[i])
            fh.write(f"{m.row[i]} {m.col[i]} {v.real:.17g} {v.imag:.17g}\n")
