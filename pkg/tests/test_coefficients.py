import numpy as np
import pytest

from mspg_helmholtz.coefficients import (
    ScalarField,
    builtin_example,
    bump_forcing,
    example1_field,
    field_bounds,
)
from mspg_helmholtz.exceptions import BoundViolationError
from mspg_helmholtz.mesh import build_hierarchy


def test_example2_bound_ratio():
    c = builtin_example("example2", {"alpha": 0.08, "delta": 1.0, "epsilon": 0.1})
    A = c.diffusion_A
    assert A.declared_max / A.declared_min == pytest.approx(np.exp(0.16), rel=1e-14)


def test_constant_is_one_everywhere(rng):
    c = builtin_example("constant")
    x, y = rng.uniform(-1, 1, (2, 100))
    for fld in (c.diffusion_A, c.refraction_V2, c.impedance_beta):
        np.testing.assert_array_equal(fld(x, y), 1.0)


def test_example1_closed_form():
    V2 = builtin_example("example1", {"epsilon": 1.0}).refraction_V2
    assert V2(0.25, 0.0) == pytest.approx(5.5, abs=1e-14)


@pytest.mark.parametrize("name,params", [("example1", {"epsilon": 0}), ("example2", {"alpha": -1}), ("example2", {"delta": 0})])
def test_nonpositive_parameters_rejected(name, params):
    with pytest.raises(ValueError):
        builtin_example(name, params)


def test_bump_forcing_values():
    f = bump_forcing((0, 0), 1 / 20)
    assert f(0.0, 0.0) == pytest.approx(np.exp(-1))
    assert f(1 / 20, 0.0) == 0
    assert f(0.0, 1 / 40) == pytest.approx(np.exp(-4 / 3))
    with pytest.raises(ValueError):
        bump_forcing((0, 0), 0.0)


def test_field_bounds():
    mesh = build_hierarchy(coarse_cells=8, levels=3)
    assert field_bounds(builtin_example("constant").diffusion_A, mesh) == (1.0, 1.0)
    assert field_bounds(builtin_example("example3").refraction_V2, mesh) == (1.0, 2.0)
    lo, hi = field_bounds(example1_field(1.0), mesh)
    # dense sampling oracle
    x, y = np.meshgrid(np.linspace(-1, 1, 1000), np.linspace(-1, 1, 1000))
    v = example1_field(1.0)(x, y)
    assert lo == pytest.approx(v.min(), abs=1e-3) and hi == pytest.approx(v.max(), abs=1e-3)
    assert 4.5 <= lo and hi <= 5.5


def test_bound_violation_names_point():
    bad = ScalarField(lambda x, y: 1.0 + x, 0.5, 1.5, name="A")
    with pytest.raises(BoundViolationError) as info:
        field_bounds(bad, build_hierarchy(coarse_cells=2))
    assert info.value.name == "A"
    assert info.value.point[0] > 0.5 or info.value.point[0] < -0.5


@pytest.mark.parametrize("name", ["example1", "example2"])
def test_radial_symmetry(name, rng):
    fld = builtin_example(name).refraction_V2
    r = rng.uniform(0, 1, 50)
    t1, t2 = rng.uniform(0, 2 * np.pi, (2, 50))
    a = fld(r * np.cos(t1), r * np.sin(t1))
    b = fld(r * np.cos(t2), r * np.sin(t2))
    np.testing.assert_allclose(a, b, rtol=1e-14)


def test_example3_blocks_cover_a_quarter():
    V2 = builtin_example("example3").refraction_V2
    x, y = np.meshgrid(np.linspace(-1, 1, 801)[:-1] + 1 / 800, np.linspace(-1, 1, 801)[:-1] + 1 / 800)
    assert np.mean(V2(x, y) == 1.0) == pytest.approx(0.25, abs=1e-12)


def test_analytic_gradient_matches_finite_difference(rng):
    for name in ("example1", "example2"):
        fld = builtin_example(name).refraction_V2
        x, y = rng.uniform(-1, 1, (2, 20))
        gx, gy = fld.gradient(x, y)
        s = 1e-6
        np.testing.assert_allclose(gx, (fld(x + s, y) - fld(x - s, y)) / (2 * s), atol=1e-6)
        np.testing.assert_allclose(gy, (fld(x, y + s) - fld(x, y - s)) / (2 * s), atol=1e-6)


def test_with_k_and_with_data():
    c = builtin_example("constant")
    assert c.with_k(8).wavenumber_k == 8
    z = c.with_data(None, None)
    assert not np.any(z.volume_forcing_f(np.zeros(3), np.zeros(3)))
    with pytest.raises(ValueError):
        c.with_k(0)
