"""Problem data: diffusion, refraction index, impedance, forcing and Robin data.

Fields are plain callables of ``(x, y)`` coordinate arrays. The built-in
families reproduce the radial oscillatory coefficients and the periodic block
medium used in the experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .exceptions import BoundViolationError
from .quadrature import cell_points

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]
Gradient = Callable[[np.ndarray, np.ndarray], tuple]


@dataclass(frozen=True)
class ScalarField:
    """Real scalar field with declared lower and upper bounds."""

    evaluator: Evaluator
    declared_min: float
    declared_max: float
    smoothness_note: str = "smooth"
    gradient: Optional[Gradient] = field(default=None, compare=False)
    name: str = "field"

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(self.evaluator(x, y), np.broadcast_shapes(x.shape, y.shape)).astype(float)

    def check(self, x, y, values=None):
        """Raise :class:`BoundViolationError` if any evaluation leaves the bounds."""
        if values is None:
            values = self(x, y)
        tol = 1e-12 * abs(self.declared_max)
        bad = (values < self.declared_min - tol) | (values > self.declared_max + tol)
        if np.any(bad):
            i = np.flatnonzero(bad.ravel())[0]
            pt = (np.broadcast_to(x, values.shape).ravel()[i], np.broadcast_to(y, values.shape).ravel()[i])
            raise BoundViolationError(self.name, pt, values.ravel()[i], (self.declared_min, self.declared_max))
        return values


def constant_field(value: float, name: str = "field") -> ScalarField:
    value = float(value)
    return ScalarField(
        lambda x, y: np.full(np.broadcast_shapes(np.shape(x), np.shape(y)), value),
        value,
        value,
        "smooth",
        lambda x, y: (np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y))),) * 2,
        name,
    )


def _radial_field(profile, dprofile, center, bounds, name):
    cx, cy = center

    def evaluate(x, y):
        return profile(np.hypot(x - cx, y - cy))

    def gradient(x, y):
        dx, dy = x - cx, y - cy
        r = np.hypot(dx, dy)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(r > 0, dprofile(r) / r, 0.0)
        return scale * dx, scale * dy

    return ScalarField(evaluate, bounds[0], bounds[1], "smooth", gradient, name)


@dataclass(frozen=True)
class CoefficientSet:
    diffusion_A: ScalarField
    refraction_V2: ScalarField
    impedance_beta: ScalarField
    volume_forcing_f: Evaluator
    robin_data_g: Optional[Evaluator]
    wavenumber_k: float
    name: str = "custom"
    # shortest length scale of coefficient oscillation, None if not oscillatory
    oscillation_length: Optional[float] = None

    def __post_init__(self):
        if not self.wavenumber_k > 0:
            raise ValueError("wavenumber k must be positive")
        for fld in (self.diffusion_A, self.refraction_V2, self.impedance_beta):
            if not fld.declared_min > 0:
                raise ValueError(f"declared lower bound of {fld.name} must be positive")

    def with_k(self, k: float) -> "CoefficientSet":
        return replace(self, wavenumber_k=float(k))

    def with_data(self, f=None, g=None) -> "CoefficientSet":
        return replace(self, volume_forcing_f=f if f is not None else zero_field, robin_data_g=g)

    @property
    def is_smooth(self) -> bool:
        return all(
            fld.smoothness_note == "smooth" and fld.gradient is not None
            for fld in (self.diffusion_A, self.refraction_V2)
        )


def zero_field(x, y):
    return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y)), dtype=complex)


def bump_forcing(center=(0.0, 0.0), radius: float = 1.0 / 20.0) -> Evaluator:
    """Smooth compactly supported bump ``exp(-1 / (1 - (|x - c| / R)^2))``."""
    if not radius > 0:
        raise ValueError("bump radius must be positive")
    cx, cy = (float(c) for c in center)
    radius = float(radius)

    def f(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        rho2 = ((x - cx) ** 2 + (y - cy) ** 2) / radius**2
        out = np.zeros(np.broadcast_shapes(x.shape, y.shape), dtype=complex)
        inside = rho2 < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - rho2[inside]))
        return out

    return f


def example1_field(epsilon: float, center=(0.0, 0.0)) -> ScalarField:
    """``0.5 sin(2 pi r / eps) + 5``."""
    w = 2.0 * np.pi / epsilon
    return _radial_field(
        lambda r: 0.5 * np.sin(w * r) + 5.0,
        lambda r: 0.5 * w * np.cos(w * r),
        center,
        (4.5, 5.5),
        "V2",
    )


def example2_field(alpha: float, delta: float, epsilon: float, center=(0.0, 0.0), name="A") -> ScalarField:
    """``exp(alpha (sin(r / eps) + delta))``."""
    return _radial_field(
        lambda r: np.exp(alpha * (np.sin(r / epsilon) + delta)),
        lambda r: np.exp(alpha * (np.sin(r / epsilon) + delta)) * alpha / epsilon * np.cos(r / epsilon),
        center,
        (np.exp(alpha * (delta - 1.0)), np.exp(alpha * (delta + 1.0))),
        name,
    )


def block_field(origin, extent, blocks: int, block_fraction: float, background=2.0, inclusion=1.0) -> ScalarField:
    """Piecewise constant field with a ``blocks x blocks`` lattice of square inclusions.

    Each lattice cell carries one centred inclusion covering ``block_fraction``
    of its area.
    """
    if blocks < 1 or not 0 < block_fraction < 1:
        raise ValueError("need blocks >= 1 and 0 < block_fraction < 1")
    x0, y0 = origin
    px, py = extent[0] / blocks, extent[1] / blocks
    half = 0.5 * np.sqrt(block_fraction)

    def evaluate(x, y):
        fx = np.mod((x - x0) / px, 1.0)
        fy = np.mod((y - y0) / py, 1.0)
        inside = (np.abs(fx - 0.5) < half) & (np.abs(fy - 0.5) < half)
        return np.where(inside, inclusion, background)

    return ScalarField(evaluate, min(background, inclusion), max(background, inclusion), "piecewise-constant", None, "V2")


EXAMPLE_DEFAULTS = {
    "example1": {"epsilon": 1.0},
    "example2": {"alpha": 0.08, "delta": 1.0, "epsilon": 0.1},
    "example3": {"blocks": 8, "block_fraction": 0.25},
    "constant": {},
}


def builtin_example(name: str, params: Optional[dict] = None) -> CoefficientSet:
    """Build one of the named coefficient families.

    ``params`` may carry the family parameters (``epsilon``, ``alpha``,
    ``delta``, ``blocks``, ``block_fraction``), the wavenumber ``k``, the
    domain ``origin``/``extent`` and the forcing ``forcing_center`` /
    ``forcing_radius``. The radial centre defaults to the domain centre.
    """
    if name not in EXAMPLE_DEFAULTS:
        raise ValueError(f"unknown example {name!r}; choose from {sorted(EXAMPLE_DEFAULTS)}")
    p = dict(EXAMPLE_DEFAULTS[name])
    p.update(params or {})
    origin = tuple(p.get("origin", (-1.0, -1.0)))
    extent = tuple(p.get("extent", (2.0, 2.0)))
    domain_center = (origin[0] + 0.5 * extent[0], origin[1] + 0.5 * extent[1])
    center = tuple(p.get("center", domain_center))
    k = float(p.get("k", 16.0))
    forcing = bump_forcing(p.get("forcing_center", domain_center), p.get("forcing_radius", 1.0 / 20.0))
    one = constant_field(1.0, "A")
    beta = constant_field(1.0, "beta")
    oscillation = None

    if name == "example1":
        eps = float(p["epsilon"])
        if eps <= 0:
            raise ValueError("epsilon must be positive")
        A, V2 = one, example1_field(eps, center)
        oscillation = eps
    elif name == "example2":
        alpha, delta, eps = (float(p[key]) for key in ("alpha", "delta", "epsilon"))
        if min(alpha, delta, eps) <= 0:
            raise ValueError("alpha, delta and epsilon must be positive")
        A = example2_field(alpha, delta, eps, center, "A")
        V2 = example2_field(alpha, delta, eps, center, "V2")
        oscillation = 2.0 * np.pi * eps
    elif name == "example3":
        A = one
        V2 = block_field(origin, extent, int(p["blocks"]), float(p["block_fraction"]))
        oscillation = min(extent) / int(p["blocks"])
    else:
        A, V2 = one, constant_field(1.0, "V2")

    return CoefficientSet(A, V2, beta, forcing, None, k, name, oscillation)


def field_bounds(field: ScalarField, mesh, quadrature_order: int = 3) -> tuple[float, float]:
    """Min and max of a field over all fine-level quadrature points."""
    x, y, _ = cell_points(mesh, "fine", quadrature_order)
    values = field.check(x, y)
    return float(values.min()), float(values.max())
