import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from sklearn.exceptions import NotFittedError

from mspg_helmholtz.assembly import Discretization
from mspg_helmholtz.coefficients import builtin_example
from mspg_helmholtz.corrector import CorrectorBasis, CorrectorSolver
from mspg_helmholtz.exceptions import SingularSystemError
from mspg_helmholtz.interpolation import build_interpolation
from mspg_helmholtz.mesh import build_hierarchy
from mspg_helmholtz.pgsolve import (
    MsPGFEM,
    PGSystem,
    StandardFEM,
    assemble_pg_system,
    best_approximation,
    diagnostics,
    solve_mspgfem,
    solve_standard_fem,
)
from mspg_helmholtz.stability import discrete_inf_sup


@pytest.fixture(autouse=True)
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def relV(disc, a, b):
    G = disc.gram("V")
    d = a - b
    return np.sqrt(np.vdot(d, G @ d).real / np.vdot(b, G @ b).real)


@pytest.mark.parametrize("name", ["constant", "example1", "example2", "example3"])
def test_no_refinement_matches_coarse_fem(name):
    mesh = build_hierarchy(coarse_cells=8, levels=0)
    c = builtin_example(name, {"k": 8.0})
    est = MsPGFEM(2).fit(mesh, c)
    disc = est.disc_
    A_H = Discretization(mesh, c, "coarse").matrix
    assert abs(est.system_.matrix - A_H).max() <= 1e-12 * abs(A_H).max()
    u_ms = est.solve()
    u_fem = solve_standard_fem(disc, "coarse", est.interpolation_.prolongation)
    assert relV(disc, est.fine_solution(u_ms), est.fine_solution(u_fem)) <= 1e-10
    rep = diagnostics(disc, est.interpolation_, u_ms, solve_standard_fem(disc))
    assert rep.error_V == pytest.approx(0, abs=1e-10 * rep.reference_V)


def test_row_locality_and_asymmetry():
    mesh = build_hierarchy(coarse_cells=12, levels=1)
    c = builtin_example("example1", {"k": 6.0})
    m = 1
    est = MsPGFEM(m).fit(mesh, c)
    B = est.system_.matrix.tocoo()
    xy = mesh.node_coordinates("coarse")[est.system_.nodes]
    H = mesh.cell_size("coarse")[0]
    layers = np.max(np.abs(xy[B.row] - xy[B.col]), axis=1) / H
    assert layers[np.abs(B.data) > 0].max() <= 2 * m + 3 + 1e-9
    Bd = est.system_.matrix.toarray()
    assert np.linalg.norm(Bd - Bd.conj().T) > 0


def test_zero_data_gives_zero():
    mesh = build_hierarchy(coarse_cells=4, levels=1)
    c = builtin_example("constant", {"k": 4.0}).with_data(None, None)
    est = MsPGFEM(1).fit(mesh, c)
    assert not np.any(est.solve())
    assert not np.any(StandardFEM("fine").fit(mesh, c).solve())


def test_full_patch_equals_ideal_method():
    mesh = build_hierarchy(coarse_cells=16, levels=2)
    c = builtin_example("constant", {"k": 16.0})
    est = MsPGFEM(15).fit(mesh, c)
    solver = CorrectorSolver(mesh, c, est.interpolation_, est.disc_)
    cols = np.array([solver.ideal_corrector(z) for z in mesh.free_node_ids("coarse")]).T
    ideal = CorrectorBasis(0, sp.csr_matrix(cols), {}, 0, 0.0, est.interpolation_.prolongation)
    u_ideal = solve_mspgfem(assemble_pg_system(est.disc_, ideal))
    u = est.solve()
    assert np.linalg.norm(u - u_ideal) <= 1e-10 * np.linalg.norm(u_ideal)


def test_truncation_error_decreases_in_m():
    mesh = build_hierarchy(coarse_cells=8, levels=2)
    c = builtin_example("example2", {"k": 8.0})
    disc = Discretization(mesh, c)
    op = build_interpolation(mesh)
    ref = MsPGFEM(8).fit(mesh, c, disc, op).solve()
    errs = [np.linalg.norm(MsPGFEM(m).fit(mesh, c, disc, op).solve() - ref) for m in (1, 2, 3)]
    assert errs[1] < errs[0] and errs[2] < errs[1]


def test_fem_pollution_grows_with_k():
    ratios = {}
    for k in (4.0, 32.0):
        mesh = build_hierarchy(coarse_cells=64, levels=2)
        disc = Discretization(mesh, builtin_example("constant", {"k": k}))
        op = build_interpolation(mesh)
        rep = diagnostics(disc, op, solve_standard_fem(disc, "coarse", op.prolongation), solve_standard_fem(disc))
        ratios[k] = rep
    assert ratios[32.0].error_V / ratios[32.0].reference_V > 3 * ratios[4.0].error_V / ratios[4.0].reference_V
    assert ratios[32.0].quasi_optimality > 2 * ratios[4.0].quasi_optimality


def test_best_approximation_is_v_orthogonal(crandn):
    mesh = build_hierarchy(coarse_cells=4, levels=2)
    disc = Discretization(mesh, builtin_example("example1", {"k": 4.0}))
    op = build_interpolation(mesh)
    u = crandn(disc.matrix.shape[0])
    b = best_approximation(disc, op, u)
    r = u - op.prolongation @ b
    G = disc.gram("V")
    np.testing.assert_allclose(op.prolongation.T @ (G @ r), 0, atol=1e-10 * np.abs(G @ u).max())
    rep = diagnostics(disc, op, b, u)
    # the true minimizer is no worse than the interpolation surrogate
    assert rep.error_V <= rep.best_V * (1 + 1e-12)


def test_inf_sup_surrogate_positive():
    mesh = build_hierarchy(coarse_cells=8, levels=2)
    gamma, c_a = discrete_inf_sup(Discretization(mesh, builtin_example("example2", {"k": 8.0})))
    assert 0 < gamma < c_a


def test_singular_system_raises():
    system = PGSystem(sp.csr_matrix(np.zeros((2, 2), dtype=complex)), np.ones(2, dtype=complex), np.arange(2))
    with pytest.raises(SingularSystemError):
        solve_mspgfem(system)


def test_estimator_api():
    est = MsPGFEM(oversampling=3)
    assert est.get_params() == {"oversampling": 3}
    with pytest.raises(NotFittedError):
        est.solve()
    with pytest.raises(ValueError):
        MsPGFEM(0).fit(build_hierarchy(coarse_cells=2, levels=1), builtin_example("constant"))
    with pytest.raises(ValueError):
        StandardFEM("medium").fit(build_hierarchy(coarse_cells=2), builtin_example("constant"))


def test_solve_with_other_load_and_warning():
    mesh = build_hierarchy(coarse_cells=4, levels=1)
    c = builtin_example("constant", {"k": 16.0})
    est = MsPGFEM(1).fit(mesh, c)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        u2 = est.solve(2 * est.disc_.rhs)
    assert any("oversampling" in str(w.message) for w in caught)
    np.testing.assert_allclose(u2, 2 * est.solve(), rtol=1e-12)
