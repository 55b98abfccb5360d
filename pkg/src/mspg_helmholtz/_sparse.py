"""Sparse direct factorization shared by all solves."""

import scipy.sparse as sp
import scipy.sparse.linalg as spla


def lu_factor(A):
    """SuperLU with a minimum-degree ordering on ``A^T + A``.

    All systems here are structurally symmetric (Helmholtz matrices and their
    saddle-point extensions); this ordering keeps fill far below COLAMD.
    """
    return spla.splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A")
