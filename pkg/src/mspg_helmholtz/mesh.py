"""Structured quadrilateral mesh hierarchy on an axis-aligned rectangle.

Node and cell ids are lexicographic with the x-index running fastest, i.e.
``node = ix + iy * (nx + 1)`` and ``cell = ix + iy * nx``. The four corners of
a cell are listed counterclockwise starting at the lower-left vertex.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

SIDES = ("left", "right", "bottom", "top")
OUTWARD_NORMALS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "bottom": (0.0, -1.0),
    "top": (0.0, 1.0),
}

# Integer codes double as corner precedence: Dirichlet > Robin > Neumann.
INTERIOR, NEUMANN, ROBIN, DIRICHLET = 0, 1, 2, 3
KIND_CODES = {"neumann": NEUMANN, "robin": ROBIN, "dirichlet": DIRICHLET}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}

_TOL = 1e-12


def _normalize_side(spec) -> tuple[tuple[float, float, int], ...]:
    if isinstance(spec, str):
        spec = [(0.0, 1.0, spec)]
    segments = []
    for t0, t1, kind in sorted(spec, key=lambda s: float(s[0])):
        kind = str(kind).lower()
        if kind not in KIND_CODES:
            raise ValueError(f"unknown boundary kind {kind!r}")
        if not 0.0 <= float(t0) < float(t1) <= 1.0:
            raise ValueError(f"bad boundary segment [{t0}, {t1}]")
        segments.append((float(t0), float(t1), KIND_CODES[kind]))
    position = 0.0
    for t0, t1, _ in segments:
        if abs(t0 - position) > _TOL:
            raise ValueError("boundary segments must cover each side without gaps or overlaps")
        position = t1
    if abs(position - 1.0) > _TOL:
        raise ValueError("boundary segments must cover each side without gaps or overlaps")
    return tuple(segments)


@dataclass(frozen=True)
class BoundaryTags:
    """Boundary condition kind for every side of the rectangle.

    Each side maps either to a single kind or to a list of ``(t0, t1, kind)``
    sub-segments, where ``t`` in [0, 1] runs along the side in the direction
    of increasing coordinate.
    """

    segments: Mapping[str, tuple[tuple[float, float, int], ...]]

    @classmethod
    def from_spec(cls, spec: str | Mapping[str, object] | "BoundaryTags" = "robin") -> "BoundaryTags":
        if isinstance(spec, BoundaryTags):
            return spec
        if isinstance(spec, str):
            spec = {side: spec for side in SIDES}
        missing = set(SIDES) - set(spec)
        if missing:
            raise ValueError(f"boundary tags missing for sides {sorted(missing)}")
        unknown = set(spec) - set(SIDES)
        if unknown:
            raise ValueError(f"unknown boundary sides {sorted(unknown)}")
        return cls({side: _normalize_side(spec[side]) for side in SIDES})

    def kind_at(self, side: str, t: np.ndarray) -> np.ndarray:
        """Highest-precedence kind among segments whose closure contains ``t``."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=np.int8)
        for t0, t1, code in self.segments[side]:
            hit = (t >= t0 - _TOL) & (t <= t1 + _TOL)
            out[hit] = np.maximum(out[hit], code)
        return out

    def measure(self, kind: str, lengths: Mapping[str, float]) -> float:
        code = KIND_CODES[kind]
        return sum(
            (t1 - t0) * lengths[side]
            for side in SIDES
            for t0, t1, c in self.segments[side]
            if c == code
        )


@dataclass(frozen=True)
class ElementPatch:
    """Closed m-th order coarse element neighbourhood of a seed set."""

    center_element: tuple[int, ...]
    order_m: int
    elements: frozenset[int]

    def __len__(self):
        return len(self.elements)

    def __contains__(self, element):
        return element in self.elements


@dataclass(frozen=True)
class NodeSet:
    ids: np.ndarray
    coordinates: np.ndarray
    free: np.ndarray

    @property
    def free_ids(self) -> np.ndarray:
        return self.ids[self.free]

    @property
    def n_free(self) -> int:
        return int(np.count_nonzero(self.free))


@dataclass(frozen=True)
class BoundaryFaces:
    """Boundary edges of one mesh level."""

    nodes: np.ndarray  # (n, 2) node ids, ordered along increasing t
    side: np.ndarray  # (n,) index into SIDES
    midpoint: np.ndarray
    normal: np.ndarray
    length: np.ndarray
    kind: np.ndarray  # (n,) int codes

    def select(self, kind: str) -> np.ndarray:
        return np.flatnonzero(self.kind == KIND_CODES[kind])


@dataclass(frozen=True)
class MeshHierarchy:
    """Nested coarse/fine structured quadrilateral meshes.

    The fine mesh is the coarse mesh refined ``refinement_levels`` times, each
    level halving the cell edges.
    """

    domain_origin: tuple[float, float]
    domain_extent: tuple[float, float]
    coarse_cells_per_axis: tuple[int, int]
    refinement_levels: int
    boundary_tags: BoundaryTags = field(compare=False)

    # --- basic geometry -------------------------------------------------

    @property
    def refinement_factor(self) -> int:
        return 2 ** self.refinement_levels

    def cells(self, level: str = "fine") -> tuple[int, int]:
        nx, ny = self.coarse_cells_per_axis
        if level == "coarse":
            return nx, ny
        if level == "fine":
            r = self.refinement_factor
            return nx * r, ny * r
        raise ValueError(f"level must be 'coarse' or 'fine', got {level!r}")

    def cell_size(self, level: str = "fine") -> tuple[float, float]:
        nx, ny = self.cells(level)
        return self.domain_extent[0] / nx, self.domain_extent[1] / ny

    @property
    def H(self) -> float:
        """Coarse cell diameter."""
        return float(np.hypot(*self.cell_size("coarse")))

    @property
    def h(self) -> float:
        """Fine cell diameter."""
        return float(np.hypot(*self.cell_size("fine")))

    @property
    def diameter(self) -> float:
        return float(np.hypot(*self.domain_extent))

    def num_nodes(self, level: str = "fine") -> int:
        nx, ny = self.cells(level)
        return (nx + 1) * (ny + 1)

    def num_cells(self, level: str = "fine") -> int:
        nx, ny = self.cells(level)
        return nx * ny

    def node_coordinates(self, level: str = "fine") -> np.ndarray:
        return self._node_coordinates[level]

    def cell_nodes(self, level: str = "fine") -> np.ndarray:
        return self._cell_nodes[level]

    def cell_origins(self, level: str = "fine") -> np.ndarray:
        """Lower-left corner of every cell, shape ``(n_cells, 2)``."""
        return self.node_coordinates(level)[self.cell_nodes(level)[:, 0]]

    @cached_property
    def _node_coordinates(self):
        out = {}
        for level in ("coarse", "fine"):
            nx, ny = self.cells(level)
            x = self.domain_origin[0] + self.domain_extent[0] * np.arange(nx + 1) / nx
            y = self.domain_origin[1] + self.domain_extent[1] * np.arange(ny + 1) / ny
            xx, yy = np.meshgrid(x, y)
            out[level] = np.column_stack([xx.ravel(), yy.ravel()])
        return out

    @cached_property
    def _cell_nodes(self):
        out = {}
        for level in ("coarse", "fine"):
            nx, ny = self.cells(level)
            ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
            ll = (ix + iy * (nx + 1)).ravel()
            out[level] = np.column_stack([ll, ll + 1, ll + nx + 2, ll + nx + 1])
        return out

    # --- nesting --------------------------------------------------------

    def coarse_cell_of_fine(self, fine_cells) -> np.ndarray:
        fine_cells = np.asarray(fine_cells)
        nxf, _ = self.cells("fine")
        nxc, _ = self.cells("coarse")
        r = self.refinement_factor
        return (fine_cells % nxf) // r + ((fine_cells // nxf) // r) * nxc

    def fine_cells_in(self, coarse_cell: int) -> np.ndarray:
        """Fine cells of one coarse cell, x-index fastest."""
        nxc, _ = self.cells("coarse")
        nxf, _ = self.cells("fine")
        r = self.refinement_factor
        cx, cy = coarse_cell % nxc, coarse_cell // nxc
        jx, jy = np.meshgrid(cx * r + np.arange(r), cy * r + np.arange(r))
        return (jx + jy * nxf).ravel()

    def fine_nodes_in(self, coarse_cell: int) -> np.ndarray:
        """The ``(r+1)**2`` fine nodes of a closed coarse cell, x-index fastest."""
        nxc, _ = self.cells("coarse")
        nxf, _ = self.cells("fine")
        r = self.refinement_factor
        cx, cy = coarse_cell % nxc, coarse_cell // nxc
        jx, jy = np.meshgrid(cx * r + np.arange(r + 1), cy * r + np.arange(r + 1))
        return (jx + jy * (nxf + 1)).ravel()

    # --- boundary -------------------------------------------------------

    @cached_property
    def _boundary(self):
        return {level: self._build_boundary(level) for level in ("coarse", "fine")}

    def _build_boundary(self, level):
        nx, ny = self.cells(level)
        coords = self.node_coordinates(level)
        nodes, sides = [], []
        i = np.arange(nx)
        j = np.arange(ny)
        # ordered along increasing t on each side
        nodes.append(np.column_stack([j * (nx + 1), (j + 1) * (nx + 1)]))  # left
        nodes.append(np.column_stack([j * (nx + 1) + nx, (j + 1) * (nx + 1) + nx]))  # right
        nodes.append(np.column_stack([i, i + 1]))  # bottom
        nodes.append(np.column_stack([ny * (nx + 1) + i, ny * (nx + 1) + i + 1]))  # top
        for s, arr in enumerate(nodes):
            sides.append(np.full(len(arr), s))
        nodes = np.vstack(nodes)
        sides = np.concatenate(sides)
        mid = 0.5 * (coords[nodes[:, 0]] + coords[nodes[:, 1]])
        normal = np.array([OUTWARD_NORMALS[SIDES[s]] for s in sides])
        length = np.linalg.norm(coords[nodes[:, 1]] - coords[nodes[:, 0]], axis=1)
        kind = np.empty(len(nodes), dtype=np.int8)
        for s, side in enumerate(SIDES):
            sel = sides == s
            kind[sel] = self.boundary_tags.kind_at(side, self._side_parameter(side, mid[sel]))
        faces = BoundaryFaces(nodes, sides, mid, normal, length, kind)

        node_kind = np.zeros(len(coords), dtype=np.int8)
        for s, side in enumerate(SIDES):
            on = self._on_side(side, coords)
            t = self._side_parameter(side, coords[on])
            node_kind[on] = np.maximum(node_kind[on], self.boundary_tags.kind_at(side, t))
        return faces, node_kind

    def _on_side(self, side, pts):
        x0, y0 = self.domain_origin
        lx, ly = self.domain_extent
        tol = _TOL * max(lx, ly)
        if side == "left":
            return np.abs(pts[:, 0] - x0) <= tol
        if side == "right":
            return np.abs(pts[:, 0] - (x0 + lx)) <= tol
        if side == "bottom":
            return np.abs(pts[:, 1] - y0) <= tol
        return np.abs(pts[:, 1] - (y0 + ly)) <= tol

    def _side_parameter(self, side, pts):
        if side in ("left", "right"):
            return (pts[:, 1] - self.domain_origin[1]) / self.domain_extent[1]
        return (pts[:, 0] - self.domain_origin[0]) / self.domain_extent[0]

    def boundary_faces(self, level: str = "fine") -> BoundaryFaces:
        return self._boundary[level][0]

    def node_kinds(self, level: str = "fine") -> np.ndarray:
        """Boundary kind code per node; 0 for interior nodes."""
        return self._boundary[level][1]

    def free_node_mask(self, level: str = "fine") -> np.ndarray:
        return self.node_kinds(level) != DIRICHLET

    @cached_property
    def _free_ids(self):
        return {lv: np.flatnonzero(self.free_node_mask(lv)) for lv in ("coarse", "fine")}

    def free_node_ids(self, level: str = "fine") -> np.ndarray:
        return self._free_ids[level]

    # --- patches --------------------------------------------------------

    def element_index(self, element: int) -> tuple[int, int]:
        nx, _ = self.cells("coarse")
        return element % nx, element // nx

    def patch_mask(self, seed, m: int) -> np.ndarray:
        """Boolean ``(ny, nx)`` coarse-cell mask of the m-th order patch."""
        nx, ny = self.cells("coarse")
        mask = np.zeros((ny, nx), dtype=bool)
        seed = np.atleast_1d(np.asarray(seed, dtype=int))
        mask[seed // nx, seed % nx] = True
        if m > 0:
            mask = ndimage.binary_dilation(mask, structure=np.ones((3, 3), dtype=bool), iterations=m)
        return mask

    def fine_nodes_in_patch(self, patch: ElementPatch) -> np.ndarray:
        """Fine nodes whose every adjacent coarse cell lies in the patch.

        These are the nodes whose hat functions are supported in the patch,
        i.e. nodes interior to the patch or on its part of the outer boundary.
        """
        nx, ny = self.cells("coarse")
        mask = np.zeros((ny, nx), dtype=bool)
        elems = np.fromiter(patch.elements, dtype=int)
        mask[elems // nx, elems % nx] = True
        r = self.refinement_factor
        nxf, nyf = self.cells("fine")
        lo_x, hi_x = _adjacent_cells_1d(nxf, r, nx)
        lo_y, hi_y = _adjacent_cells_1d(nyf, r, ny)
        ok = (
            mask[lo_y[:, None], lo_x[None, :]]
            & mask[lo_y[:, None], hi_x[None, :]]
            & mask[hi_y[:, None], lo_x[None, :]]
            & mask[hi_y[:, None], hi_x[None, :]]
        )
        return np.flatnonzero(ok.ravel())

    def write_csv(self, path_prefix: str, level: str = "fine") -> tuple[str, str]:
        """Dump node coordinates and cell connectivity as two CSV files."""
        node_path = f"{path_prefix}_nodes.csv"
        cell_path = f"{path_prefix}_cells.csv"
        with open(node_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "x", "y", "kind"])
            kinds = self.node_kinds(level)
            for i, (x, y) in enumerate(self.node_coordinates(level)):
                w.writerow([i, repr(float(x)), repr(float(y)), KIND_NAMES.get(int(kinds[i]), "interior")])
        with open(cell_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell", "n0", "n1", "n2", "n3"])
            for c, nodes in enumerate(self.cell_nodes(level)):
                w.writerow([c, *map(int, nodes)])
        return node_path, cell_path


def _adjacent_cells_1d(n_fine, r, n_coarse):
    i = np.arange(n_fine + 1)
    hi = np.minimum(i // r, n_coarse - 1)
    lo = np.where(i % r == 0, np.maximum(i // r - 1, 0), i // r)
    lo = np.minimum(lo, n_coarse - 1)
    return lo, hi


def build_hierarchy(
    origin: Sequence[float] = (-1.0, -1.0),
    extent: Sequence[float] = (2.0, 2.0),
    coarse_cells: int | Sequence[int] = 8,
    levels: int = 0,
    tags="robin",
) -> MeshHierarchy:
    """Build a nested coarse/fine structured quadrilateral mesh.

    Parameters
    ----------
    origin, extent : pair of float
        Lower-left corner and side lengths of the rectangular domain.
    coarse_cells : int or pair of int
        Coarse cells per axis.
    levels : int
        Number of uniform refinements from the coarse to the fine mesh.
    tags : str, mapping or BoundaryTags
        Boundary condition kinds, see :class:`BoundaryTags`.
    """
    if np.isscalar(coarse_cells):
        coarse_cells = (coarse_cells, coarse_cells)
    nx, ny = (int(c) for c in coarse_cells)
    if nx < 1 or ny < 1:
        raise ValueError("need at least one coarse cell per axis")
    if int(levels) < 0:
        raise ValueError("refinement levels must be non-negative")
    lx, ly = (float(e) for e in extent)
    if lx <= 0 or ly <= 0:
        raise ValueError("domain extent must be positive")
    tags = BoundaryTags.from_spec(tags)
    lengths = {"left": ly, "right": ly, "bottom": lx, "top": lx}
    if tags.measure("robin", lengths) <= 0:
        raise ValueError("the Robin boundary part must have positive measure")
    for side in SIDES:
        n = ny if side in ("left", "right") else nx
        for t0, t1, code in tags.segments[side]:
            if code == DIRICHLET and any(abs(t * n - round(t * n)) > 1e-9 for t in (t0, t1)):
                raise ValueError(f"Dirichlet segment on {side} must end at coarse vertices")
    return MeshHierarchy(
        (float(origin[0]), float(origin[1])), (lx, ly), (nx, ny), int(levels), tags
    )


def patch(mesh: MeshHierarchy, seed, m: int) -> ElementPatch:
    """m-th order coarse element neighbourhood; truncated silently at the boundary."""
    if m < 1:
        raise ValueError("patch order m must be >= 1")
    seed_arr = np.atleast_1d(np.asarray(seed, dtype=int))
    if seed_arr.size == 0 or seed_arr.min() < 0 or seed_arr.max() >= mesh.num_cells("coarse"):
        raise ValueError("seed elements must exist on the coarse mesh")
    mask = mesh.patch_mask(seed_arr, m)
    return ElementPatch(tuple(int(s) for s in seed_arr), int(m), frozenset(np.flatnonzero(mask.ravel()).tolist()))


def free_nodes(mesh: MeshHierarchy, level: str = "coarse") -> NodeSet:
    n = mesh.num_nodes(level)
    return NodeSet(np.arange(n), mesh.node_coordinates(level), mesh.free_node_mask(level))
