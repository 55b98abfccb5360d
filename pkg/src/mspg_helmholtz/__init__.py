"""Multiscale Petrov-Galerkin FEM for the heterogeneous Helmholtz equation."""
