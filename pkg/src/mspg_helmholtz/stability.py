"""Checks of the coefficient and geometry hypotheses behind k-explicit stability.

The S-function of a coefficient pair is ``S(x) = div((V^2 / A)(x - x0))``.
Its sampled minimum and the gradient of ``log A`` decide the two coefficient
conditions; the geometry conditions are sign checks of ``(x - x0) . nu`` per
boundary kind. Empirical helpers measure the stability ratio and the discrete
inf-sup constant of the fine FEM matrix.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as la

from .assembly import Discretization
from .coefficients import CoefficientSet, ScalarField
from .exceptions import UnsupportedFamilyError
from .mesh import KIND_CODES, MeshHierarchy, build_hierarchy
from .pgsolve import solve_standard_fem
from .quadrature import cell_points, face_points

DIM = 2
RADIAL_FAMILIES = frozenset({"example1", "example2", "constant"})
POINTS_PER_OSCILLATION = 10


@dataclass(frozen=True)
class Sampling:
    """Tensor grid of sample points over the box or its inscribed disk.

    ``samples_per_axis=None`` picks the smallest odd count that gives
    ``POINTS_PER_OSCILLATION`` points per oscillation length (at least 201).
    Grids with ``n`` and ``2 n - 1`` points per axis are nested.
    """

    origin: tuple = (-1.0, -1.0)
    extent: tuple = (2.0, 2.0)
    samples_per_axis: Optional[int] = None
    region: str = "domain"  # or "disk"

    def resolve(self, oscillation_length: Optional[float]) -> int:
        if self.samples_per_axis is not None:
            return int(self.samples_per_axis)
        n = 201
        if oscillation_length:
            n = max(n, math.ceil(POINTS_PER_OSCILLATION * max(self.extent) / oscillation_length) + 1)
        return n + (n % 2 == 0)

    def points(self, x0, oscillation_length: Optional[float] = None) -> np.ndarray:
        if self.region not in ("domain", "disk"):
            raise ValueError("sampling region must be 'domain' or 'disk'")
        n = self.resolve(oscillation_length)
        if n < 2:
            raise ValueError("need at least 2 samples per axis")
        xs = self.origin[0] + self.extent[0] * np.linspace(0.0, 1.0, n)
        ys = self.origin[1] + self.extent[1] * np.linspace(0.0, 1.0, n)
        X, Y = np.meshgrid(xs, ys)
        pts = np.column_stack([X.ravel(), Y.ravel()])
        if self.region == "disk":
            radius = 0.5 * min(self.extent)
            centre = np.asarray(self.origin) + 0.5 * np.asarray(self.extent)
            pts = pts[np.linalg.norm(pts - centre, axis=1) <= radius * (1 + 1e-12)]
        return pts

    def spacing(self, oscillation_length=None) -> float:
        return max(self.extent) / (self.resolve(oscillation_length) - 1)


@dataclass
class GeomReport:
    """Per-kind extreme values of ``(x - x0) . nu`` over boundary face midpoints.

    ``min_dot_dirichlet`` holds the largest Dirichlet value (the one that must
    be ``<= 0``), ``min_dot_robin`` the smallest Robin value (eta). Kinds that
    do not occur are ``None``.
    """

    min_dot_dirichlet: Optional[float]
    max_abs_dot_neumann: Optional[float]
    min_dot_robin: Optional[float]
    x0: tuple
    tolerance: float = 0.0

    @property
    def eta(self) -> Optional[float]:
        return self.min_dot_robin

    @property
    def ok(self) -> bool:
        d = self.min_dot_dirichlet is None or self.min_dot_dirichlet <= self.tolerance
        n = self.max_abs_dot_neumann is None or self.max_abs_dot_neumann <= self.tolerance
        r = self.min_dot_robin is None or self.min_dot_robin > 0
        return bool(d and n and r)


@dataclass
class StabilityReport:
    s_min: float
    condition1_ok: bool
    condition2_lhs: float
    condition2_ok: bool
    c_g_used: float
    grad_log_A_sup: float
    sample_count: int
    geometry_ok: bool
    eta: Optional[float]
    under_resolved: bool = False
    notes: list = field(default_factory=list)
    geometry: Optional[GeomReport] = None

    @property
    def passed(self) -> bool:
        return bool(self.condition1_ok and self.condition2_ok and self.geometry_ok)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def _field_gradient(fld: ScalarField, x, y, step: float):
    if fld.gradient is not None:
        gx, gy = fld.gradient(x, y)
        return np.broadcast_to(gx, x.shape), np.broadcast_to(gy, x.shape)
    if fld.smoothness_note != "smooth":
        raise UnsupportedFamilyError(
            f"{fld.name} is {fld.smoothness_note} and has no derivative data; S(x) is undefined"
        )
    gx = (fld(x + step, y) - fld(x - step, y)) / (2 * step)
    gy = (fld(x, y + step) - fld(x, y - step)) / (2 * step)
    return gx, gy


def _diameter(coeffs, points) -> float:
    span = np.ptp(points, axis=0) if len(points) > 1 else np.ones(2)
    return float(np.hypot(*span)) or 1.0


def s_function(coeffs: CoefficientSet, x0, points, diameter: Optional[float] = None) -> np.ndarray:
    """``S(x) = d V^2/A + grad(V^2/A) . (x - x0)`` at each point.

    Analytic gradients are used when the fields provide them, otherwise
    central differences with step ``1e-6 * diameter``.

    Examples
    --------
    >>> from mspg_helmholtz.coefficients import builtin_example
    >>> s_function(builtin_example("constant"), (0, 0), [[0.3, -0.2]]).tolist()
    [2.0]
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    step = 1e-6 * (diameter or _diameter(coeffs, pts))
    A, V2 = coeffs.diffusion_A, coeffs.refraction_V2
    a, v = A(x, y), V2(x, y)
    ax, ay = _field_gradient(A, x, y, step)
    vx, vy = _field_gradient(V2, x, y, step)
    q = v / a
    qx = (vx * a - v * ax) / a**2
    qy = (vy * a - v * ay) / a**2
    return DIM * q + qx * (x - x0[0]) + qy * (y - x0[1])


def grad_log_sup(fld: ScalarField, points, step: float) -> float:
    """Sampled ``max |grad f| / f``."""
    x, y = points[:, 0], points[:, 1]
    gx, gy = _field_gradient(fld, x, y, step)
    return float(np.max(np.hypot(gx, gy) / fld(x, y)))


def default_c_g(coeffs: CoefficientSet, x0, sampling: Sampling) -> float:
    """2 for the radial families, otherwise ``2 max |x - x0|`` over the box."""
    if coeffs.name in RADIAL_FAMILIES:
        return 2.0
    o, e = np.asarray(sampling.origin, float), np.asarray(sampling.extent, float)
    corners = np.array([o, o + [e[0], 0], o + e, o + [0, e[1]]])
    return 2.0 * float(np.max(np.linalg.norm(corners - np.asarray(x0, float), axis=1)))


def check_geometry(mesh: MeshHierarchy, x0) -> GeomReport:
    """Evaluate ``(x - x0) . nu`` at every fine boundary face midpoint."""
    faces = mesh.boundary_faces("fine")
    dots = np.einsum("ij,ij->i", faces.midpoint - np.asarray(x0, float), faces.normal)

    def pick(kind, reduce):
        sel = faces.kind == KIND_CODES[kind]
        return float(reduce(dots[sel])) if np.any(sel) else None

    return GeomReport(
        min_dot_dirichlet=pick("dirichlet", np.max),
        max_abs_dot_neumann=pick("neumann", lambda d: np.max(np.abs(d))),
        min_dot_robin=pick("robin", np.min),
        x0=tuple(float(c) for c in x0),
        tolerance=1e-12 * mesh.diameter,
    )


def check_conditions(
    coeffs: CoefficientSet,
    x0=(0.0, 0.0),
    sampling: Optional[Sampling] = None,
    c_g: Optional[float] = None,
    mesh: Optional[MeshHierarchy] = None,
) -> StabilityReport:
    """Sample S and ``|grad A| / A`` and evaluate both coefficient conditions.

    Condition 1 is ``min S > 0``; condition 2 is
    ``min S - ((d - 2) + c_g sup|grad log A|) V2_max / A_min > 0`` with the
    declared coefficient bounds. Geometry is checked on ``mesh`` or, if not
    given, on the all-Robin sampling box.
    """
    sampling = sampling or Sampling()
    if mesh is None:
        mesh = build_hierarchy(sampling.origin, sampling.extent, coarse_cells=1, levels=0, tags="robin")
    osc = coeffs.oscillation_length
    pts = sampling.points(x0, osc)
    diameter = float(np.hypot(*sampling.extent))
    step = 1e-6 * diameter
    notes = []
    under = False
    if osc is not None and osc / sampling.spacing(osc) < POINTS_PER_OSCILLATION:
        under = True
        notes.append(f"sampling spacing {sampling.spacing(osc):.3g} gives fewer than "
                     f"{POINTS_PER_OSCILLATION} points per oscillation length {osc:.3g}")
    s = s_function(coeffs, x0, pts, diameter)
    s_min = float(np.min(s))
    g = grad_log_sup(coeffs.diffusion_A, pts, step)
    cg = default_c_g(coeffs, x0, sampling) if c_g is None else float(c_g)
    ratio = coeffs.refraction_V2.declared_max / coeffs.diffusion_A.declared_min
    lhs = s_min - ((DIM - 2) + cg * g) * ratio
    geom = check_geometry(mesh, x0)
    return StabilityReport(
        s_min=s_min,
        condition1_ok=s_min > 0,
        condition2_lhs=float(lhs),
        condition2_ok=bool(lhs > 0),
        c_g_used=cg,
        grad_log_A_sup=g,
        sample_count=len(pts),
        geometry_ok=geom.ok,
        eta=geom.eta,
        under_resolved=under,
        notes=notes,
        geometry=geom,
    )


def data_norm(disc: Discretization) -> float:
    """``||f||_{L2} + ||g||_{L2(Gamma_R)}`` by quadrature on the discretization level."""
    c = disc.coeffs
    x, y, w = cell_points(disc.mesh, disc.level, 3)
    total = 0.0
    if c.volume_forcing_f is not None:
        total += math.sqrt(float(np.sum(np.abs(c.volume_forcing_f(x, y)) ** 2 * w)))
    if c.robin_data_g is not None and len(disc.robin_faces):
        fx, fy, fw, _ = face_points(disc.mesh, disc.robin_faces, disc.level, 3)
        total += math.sqrt(float(np.sum(np.abs(c.robin_data_g(fx, fy)) ** 2 * fw)))
    return total


def empirical_stability_sweep(problem: CoefficientSet, k_list, mesh: MeshHierarchy, solver=None) -> list:
    """``(k, ||u_h||_V / (||f|| + ||g||))`` for each k; NaN when the data vanish.

    ``solver`` maps a :class:`Discretization` to the fine solution vector and
    defaults to the direct fine FEM solve.
    """
    solver = solver or solve_standard_fem
    out = []
    for k in k_list:
        disc = Discretization(mesh, problem.with_k(k), "fine")
        d = data_norm(disc)
        if d == 0:
            out.append((float(k), float("nan")))
            continue
        u = solver(disc)
        un = math.sqrt(max(float(np.real(np.vdot(u, disc.gram("V") @ u))), 0.0))
        out.append((float(k), un / d))
    return out


def discrete_inf_sup(disc: Discretization, k: Optional[float] = None, max_dofs: int = 5000) -> tuple[float, float]:
    """Smallest and largest singular value of the V-norm-normalized fine matrix.

    With ``G_V = L L^H`` this is the spectrum of ``L^{-1} A L^{-H}``; the
    smallest value is the discrete inf-sup constant, the largest the
    continuity constant. Dense, so meant for small meshes.
    """
    A = disc.system(k) if k is not None else disc.matrix
    if A.shape[0] > max_dofs:
        raise ValueError(f"{A.shape[0]} dofs exceed the dense limit {max_dofs}")
    L = la.cholesky(disc.gram("V", k).toarray(), lower=True)
    B = la.solve_triangular(L, A.toarray(), lower=True)
    B = la.solve_triangular(L, B.conj().T, lower=True).conj().T
    sv = la.svdvals(B)
    return float(sv.min()), float(sv.max())
