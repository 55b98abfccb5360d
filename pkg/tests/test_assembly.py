import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mspg_helmholtz.assembly import (
    Discretization,
    assemble_form,
    assemble_load,
    assemble_localized,
    coo_dump,
    norm,
)
from mspg_helmholtz.coefficients import CoefficientSet, builtin_example, constant_field, zero_field
from mspg_helmholtz.mesh import build_hierarchy, patch

STIFF_REF = np.array([[4, -1, -2, -1], [-1, 4, -1, -2], [-2, -1, 4, -1], [-1, -2, -1, 4]]) / 6
MASS_REF = np.array([[4, 2, 1, 2], [2, 4, 2, 1], [1, 2, 4, 2], [2, 1, 2, 4]]) / 36


def unit_cell():
    return build_hierarchy((0, 0), (1, 1), 1, 0, "robin")


def coeffs(k=1.0, beta=1.0, f=None, g=None, A=1.0, V2=1.0):
    return CoefficientSet(
        constant_field(A, "A"), constant_field(V2, "V2"), constant_field(beta, "beta"), f or zero_field, g, k
    )


def test_unit_cell_stiffness_and_mass():
    disc = Discretization(unit_cell(), coeffs())
    np.testing.assert_allclose(disc.cell_stiffness[0], STIFF_REF, atol=1e-15)
    np.testing.assert_allclose(disc.cell_mass[0], MASS_REF, atol=1e-15)


def test_laplacian_kernel_is_constants():
    mesh = build_hierarchy(coarse_cells=3, levels=1)
    disc = Discretization(mesh, coeffs())
    K = disc.restrict(disc.stiffness_A).toarray()
    np.testing.assert_allclose(K, K.T, atol=1e-14)
    w = np.linalg.eigvalsh(K)
    assert w[0] == pytest.approx(0, abs=1e-12)
    assert w[1] > 1e-3
    np.testing.assert_allclose(K @ np.ones(len(K)), 0, atol=1e-12)


def test_load_interior_node_with_unit_forcing():
    mesh = build_hierarchy((0, 0), (1, 1), 4, 0)
    b = assemble_load(mesh, "coarse", coeffs(f=lambda x, y: np.ones_like(x)))
    centre = 2 + 2 * 5
    assert b[centre] == pytest.approx(0.25**2, rel=1e-14)


def test_zero_data_gives_zero_load():
    assert not np.any(assemble_load(build_hierarchy(coarse_cells=4), "coarse", coeffs()))


def test_bump_load_is_local():
    mesh = build_hierarchy(coarse_cells=8, levels=0)
    b = assemble_load(mesh, "coarse", builtin_example("constant"))
    nz = np.flatnonzero(b)
    xy = mesh.node_coordinates("coarse")[nz]
    # only the four cells at the centre meet the support of radius 1/20
    assert np.all(np.abs(xy) <= 0.25 + 1e-12)


def test_robin_data_enters_load():
    mesh = build_hierarchy((0, 0), (1, 1), 2, 0)
    b = assemble_load(mesh, "coarse", coeffs(g=lambda x, y: np.ones_like(x, dtype=complex)))
    # total boundary mass of g = 1 is the perimeter
    assert b.sum() == pytest.approx(4.0)


def test_complex_symmetric_and_robin_sign():
    mesh = build_hierarchy(coarse_cells=4, levels=1)
    M = assemble_form(mesh, "fine", builtin_example("example1", {"k": 3.0}))
    assert abs(M - M.T).max() < 1e-14
    disc = Discretization(mesh, builtin_example("example1", {"k": 3.0}))
    np.testing.assert_allclose((M + 1j * 3.0 * disc.restrict(disc.robin_beta)).imag.toarray(), 0, atol=1e-14)


def form(M, u, v):
    return np.vdot(v, M @ u)


@settings(max_examples=25, deadline=None)
@given(re=st.floats(-3, 3), im=st.floats(-3, 3), seed=st.integers(0, 2**16))
def test_sesquilinearity(re, im, seed):
    r = np.random.default_rng(seed)
    M = assemble_form(build_hierarchy(coarse_cells=3, levels=1), "fine", builtin_example("example2", {"k": 5.0}))
    n = M.shape[0]
    u, v = r.standard_normal((2, n)) + 1j * r.standard_normal((2, n))
    a = complex(re, im)
    ref = form(M, u, v)
    scale = abs(ref) + 1e-300
    assert abs(form(M, a * u, v) - a * ref) <= 1e-12 * max(1, abs(a)) * scale
    assert abs(form(M, u, a * v) - np.conj(a) * ref) <= 1e-12 * max(1, abs(a)) * scale


def test_imaginary_part_identity(crandn):
    mesh = build_hierarchy(coarse_cells=4, levels=1)
    c = builtin_example("example1", {"k": 7.0})
    disc = Discretization(mesh, c)
    u = crandn(disc.matrix.shape[0])
    im = form(disc.matrix, u, u).imag
    boundary = np.vdot(u, disc.restrict(disc.robin_beta) @ u).real
    assert im == pytest.approx(-7.0 * boundary, rel=1e-10)


def test_boundedness_constant_uniform_in_k(rng):
    # C_a(k) is the largest singular value of the V-norm-normalized matrix
    from mspg_helmholtz.stability import discrete_inf_sup

    mesh = build_hierarchy(coarse_cells=8, levels=2)
    c = builtin_example("constant")
    consts = []
    for k in (4, 8, 16, 32):
        disc = Discretization(mesh, c.with_k(k))
        _, c_a = discrete_inf_sup(disc)
        G = disc.gram("V")
        n = G.shape[0]
        for _ in range(100):
            u, v = rng.standard_normal((2, n)) + 1j * rng.standard_normal((2, n))
            nu = np.sqrt(np.vdot(u, G @ u).real)
            nv = np.sqrt(np.vdot(v, G @ v).real)
            assert abs(form(disc.matrix, u, v)) / (nu * nv) <= c_a * (1 + 1e-10)
        consts.append(c_a)
    assert max(consts) / min(consts) <= 1.2


def test_localized_full_patch_equals_global():
    mesh = build_hierarchy(coarse_cells=4, levels=1)
    c = builtin_example("example1")
    disc = Discretization(mesh, c)
    loc = assemble_localized(mesh, c, patch(mesh, 5, 4), disc)
    assert len(loc.dofs) == disc.matrix.shape[0]
    assert abs(loc.patch_form - disc.matrix).max() == 0


def test_element_forms_sum_to_global(crandn):
    mesh = build_hierarchy(coarse_cells=4, levels=2)
    c = builtin_example("example2", {"k": 6.0})
    disc = Discretization(mesh, c)
    total = sum(disc.element_form(t) for t in range(mesh.num_cells("coarse")))
    u, v = crandn(2, disc.matrix.shape[0])
    assert form(total, u, v) == pytest.approx(form(disc.matrix, u, v), rel=1e-12)


def test_interior_patch_has_no_robin_term():
    mesh = build_hierarchy(coarse_cells=8, levels=1)
    c = builtin_example("constant", {"k": 5.0})
    disc = Discretization(mesh, c)
    loc = assemble_localized(mesh, c, patch(mesh, 3 + 3 * 8, 1), disc)
    assert not np.any(loc.patch_form.imag.toarray())
    edge = assemble_localized(mesh, c, patch(mesh, 0, 1), disc)
    assert np.any(edge.patch_form.imag.toarray())


def test_norm_of_constant():
    mesh = build_hierarchy(coarse_cells=4, levels=1)
    c = builtin_example("constant", {"k": 2.0})
    n = len(mesh.free_node_ids("fine"))
    assert norm(mesh, c, np.ones(n), "V") == pytest.approx(4.0, rel=1e-13)


def test_norm_parts_add_up(crandn):
    mesh = build_hierarchy(coarse_cells=4, levels=1)
    c = builtin_example("example2", {"k": 3.0})
    disc = Discretization(mesh, c)
    u = crandn(disc.matrix.shape[0])
    GM, GK = disc.restrict(disc.mass_V2), disc.restrict(disc.stiffness_A)
    lhs = norm(mesh, c, u, "V", disc=disc) ** 2
    assert lhs == pytest.approx(9 * np.vdot(u, GM @ u).real + np.vdot(u, GK @ u).real, rel=1e-12)
    L2 = norm(mesh, c, u, "L2", disc=disc)
    assert L2 > 0 and norm(mesh, c, u, "H1semi", disc=disc) > 0


def _dense_quadrature_norms(mesh, u_full, n_sub=6):
    """L2 and H1-seminorm of a Q1 function by midpoint sums on a refined grid."""
    nx, ny = mesh.cells("fine")
    hx, hy = mesh.cell_size("fine")
    U = u_full.reshape(ny + 1, nx + 1)
    s = (np.arange(n_sub) + 0.5) / n_sub
    xi, eta = np.meshgrid(s, s)
    l2 = h1 = 0.0
    for j in range(ny):
        for i in range(nx):
            c = U[j, i], U[j, i + 1], U[j + 1, i + 1], U[j + 1, i]
            val = c[0] * (1 - xi) * (1 - eta) + c[1] * xi * (1 - eta) + c[2] * xi * eta + c[3] * (1 - xi) * eta
            dx = ((c[1] - c[0]) * (1 - eta) + (c[2] - c[3]) * eta) / hx
            dy = ((c[3] - c[0]) * (1 - xi) + (c[2] - c[1]) * xi) / hy
            w = hx * hy / n_sub**2
            l2 += w * np.sum(np.abs(val) ** 2)
            h1 += w * np.sum(np.abs(dx) ** 2 + np.abs(dy) ** 2)
    return np.sqrt(l2), np.sqrt(h1)


def test_norm_against_refined_quadrature(crandn):
    # midpoint rule is not exact, so compare the bilinear parts at two resolutions
    mesh = build_hierarchy(coarse_cells=2, levels=1)
    c = builtin_example("constant", {"k": 1.0})
    u = crandn(mesh.num_nodes("fine"))
    l2_fine, h1_fine = _dense_quadrature_norms(mesh, u, 64)
    assert norm(mesh, c, u, "L2") == pytest.approx(l2_fine, rel=1e-3)
    # the gradient is piecewise linear in one variable per component: midpoint rule converges at O(n^-2)
    assert norm(mesh, c, u, "H1semi") == pytest.approx(h1_fine, rel=1e-3)


def test_coo_dump(tmp_path):
    M = assemble_form(build_hierarchy(coarse_cells=2), "coarse", builtin_example("constant"))
    path = tmp_path / "m.txt"
    coo_dump(M, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == f"% 9 9 {M.nnz}"
    r, c, re, im = lines[1].split()
    assert complex(float(re), float(im)) == M[int(r), int(c)]


def test_fine_fem_converges_first_order_in_h1():
    # -Lap u = f on the unit square, homogeneous Dirichlet on the left side, Robin elsewhere, k small
    from mspg_helmholtz.pgsolve import solve_standard_fem

    pi = np.pi
    tags = {"left": "dirichlet", "right": "dirichlet", "bottom": "dirichlet", "top": "robin"}
    kk = 1e-3
    # manufactured u = sin(pi x) sin(pi y / 2) on (0,1)^2; top: du/dy - i k u = g
    u = lambda x, y: np.sin(pi * x) * np.sin(pi * y / 2)
    ux = lambda x, y: pi * np.cos(pi * x) * np.sin(pi * y / 2)
    uy = lambda x, y: pi / 2 * np.sin(pi * x) * np.cos(pi * y / 2)
    f = lambda x, y: (pi**2 * 1.25 - kk**2) * u(x, y) + 0j
    g = lambda x, y: uy(x, y) - 1j * kk * u(x, y)
    errs = []
    for lv in (3, 4, 5):
        mesh = build_hierarchy((0, 0), (1, 1), 2, lv, tags)
        disc = Discretization(mesh, coeffs(k=kk, f=f, g=g))
        uh = np.zeros(mesh.num_nodes("fine"), dtype=complex)
        uh[disc.free] = solve_standard_fem(disc)
        # H1 seminorm error by 3x3 Gauss on each fine cell
        from mspg_helmholtz.quadrature import cell_points, gauss_2d, q1_shape_grad

        x, y, w = cell_points(mesh, "fine", 3)
        xi, eta, _ = gauss_2d(3)
        dxi, deta = q1_shape_grad(xi, eta)
        hx, hy = mesh.cell_size("fine")
        cvals = uh[mesh.cell_nodes("fine")]
        gx = cvals @ dxi.T / hx
        gy = cvals @ deta.T / hy
        errs.append(np.sqrt(np.sum(w * (np.abs(gx - ux(x, y)) ** 2 + np.abs(gy - uy(x, y)) ** 2))))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    np.testing.assert_allclose(rates, 1.0, atol=0.1)
