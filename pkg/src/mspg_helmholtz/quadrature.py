"""Tensor Gauss quadrature on the cells and boundary faces of a mesh level."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def gauss_2d(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tensor points ``(xi, eta)`` and weights on the unit square, xi fastest."""
    x, w = gauss_1d(n)
    xi, eta = np.meshgrid(x, x)
    return xi.ravel(), eta.ravel(), np.outer(w, w).ravel()


def q1_shape(xi, eta) -> np.ndarray:
    """Bilinear shape functions at reference points, shape ``(npts, 4)``.

    Corners are ordered counterclockwise from (0, 0).
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=-1)


def q1_shape_grad(xi, eta) -> tuple[np.ndarray, np.ndarray]:
    """Reference derivatives d/dxi and d/deta, each ``(npts, 4)``."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    dxi = np.stack([-(1 - eta), 1 - eta, eta, -eta], axis=-1)
    deta = np.stack([-(1 - xi), -xi, xi, 1 - xi], axis=-1)
    return dxi, deta


def cell_points(mesh, level: str = "fine", order: int = 3):
    """Physical quadrature points of every cell.

    Returns ``x, y`` of shape ``(n_cells, n_q)`` and weights ``(n_q,)`` that
    already include the cell area.
    """
    xi, eta, w = gauss_2d(order)
    hx, hy = mesh.cell_size(level)
    origins = mesh.cell_origins(level)
    x = origins[:, :1] + hx * xi[None, :]
    y = origins[:, 1:] + hy * eta[None, :]
    return x, y, w * hx * hy


def face_points(mesh, faces_idx, level: str = "fine", order: int = 2):
    """Quadrature points on selected boundary faces.

    Returns ``x, y`` of shape ``(n_faces, n_q)``, weights ``(n_faces, n_q)``
    and the 1D reference coordinate ``s`` of the points along each face.
    """
    faces = mesh.boundary_faces(level)
    coords = mesh.node_coordinates(level)
    s, w = gauss_1d(order)
    a = coords[faces.nodes[faces_idx, 0]]
    b = coords[faces.nodes[faces_idx, 1]]
    x = a[:, :1] + (b[:, :1] - a[:, :1]) * s[None, :]
    y = a[:, 1:] + (b[:, 1:] - a[:, 1:]) * s[None, :]
    weights = faces.length[faces_idx][:, None] * w[None, :]
    return x, y, weights, s
