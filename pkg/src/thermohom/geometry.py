"""Structured geometry of the unit cell, the perforated domain and the two-scale index.

All grids are axis-aligned with square elements.  Node and cell positions are
kept as integer index pairs; floating point coordinates are only produced on
request, as ``index / (n * m)``, so that copies of the reference cell agree
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
import math

import numpy as np
from scipy import ndimage

from .errors import AlignmentError, GeometryError, ParameterError

# local node order of a Q1 element: (0,0), (1,0), (1,1), (0,1)
LOCAL_OFFSETS = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Q1Mesh:
    """Square bilinear elements of side ``h`` attached to ``n_nodes`` degrees of freedom."""

    h: float
    conn: np.ndarray
    n_nodes: int
    cells: np.ndarray
    facets: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    facet_scale: float = 1.0

    @property
    def n_elements(self) -> int:
        return self.conn.shape[0]


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, int):
        return Fraction(value)
    return Fraction(float(value)).limit_denominator(10**6)


def parse_epsilon(value) -> int:
    """Return the integer ``n`` with ``epsilon = 1/n``; raise if ``1/epsilon`` is not an integer."""
    eps = _as_fraction(value)
    if eps <= 0:
        raise ParameterError(f"epsilon must be positive, got {value!r}")
    inv = 1 / eps
    if inv.denominator != 1:
        raise ParameterError(f"1/epsilon must be an integer, got epsilon={value!r}")
    n = int(inv)
    if n < 2:
        raise ParameterError(f"epsilon = 1/n requires n >= 2, got n={n}")
    return n


def _parse_hole(dim, hole_spec, m):
    """Return integer cell bounds ``[(lo, hi), ...]`` of the hole, or None."""
    if hole_spec is None or (isinstance(hole_spec, str) and hole_spec.lower() == "none"):
        return None
    spec = list(hole_spec)
    if len(spec) == 2 and not isinstance(spec[0], (list, tuple)):
        spec = [tuple(spec)] * dim
    if len(spec) != dim:
        raise ParameterError(f"hole needs {dim} intervals, got {len(spec)}")
    bounds = []
    for lo, hi in spec:
        lo_f, hi_f = _as_fraction(lo), _as_fraction(hi)
        if not lo_f < hi_f:
            raise ParameterError(f"empty hole interval [{lo}, {hi}]")
        cells = []
        for v in (lo_f, hi_f):
            scaled = v * m
            k = round(scaled)
            if abs(float(scaled) - k) > 1e-9:
                raise AlignmentError(
                    f"hole boundary {v} is not a multiple of 1/{m}")
            cells.append(int(k))
        bounds.append(tuple(cells))
    for lo, hi in bounds:
        if lo <= 0 or hi >= m:
            raise GeometryError(
                "hole touches the boundary of the unit cell; holes touching the "
                "boundary are not admissible")
    return bounds


@dataclass(frozen=True, eq=False)
class CellGeometry:
    """Reference cell ``Y = [0,1)^d`` with an optional box hole, resolved by ``m`` cells per edge."""

    dim: int
    m: int
    hole_bounds: tuple | None
    hole_cells: np.ndarray

    # ---- cells and nodes of the closed cell grid -------------------------------------
    @cached_property
    def active_cells(self) -> np.ndarray:
        return ~self.hole_cells

    @property
    def has_hole(self) -> bool:
        return self.hole_bounds is not None

    @property
    def volume(self) -> float:
        """Measure of the perforated cell."""
        return int(self.active_cells.sum()) / self.m ** self.dim

    @property
    def diam(self) -> float:
        return math.sqrt(self.dim)

    @cached_property
    def node_active(self) -> np.ndarray:
        m = self.m
        act = np.zeros((m + 1, m + 1), dtype=bool)
        for off in LOCAL_OFFSETS:
            act[off[0]:off[0] + m, off[1]:off[1] + m] |= self.active_cells
        return act

    @cached_property
    def node_id(self) -> np.ndarray:
        """Closed-grid node ``(i1, i2)`` to micro node id (-1 inside the hole)."""
        ids = -np.ones(self.node_active.shape, dtype=np.int64)
        ids[self.node_active] = np.arange(int(self.node_active.sum()))
        return ids

    @cached_property
    def micro_nodes(self) -> np.ndarray:
        """Integer index pairs of the active closed-grid nodes, row-major."""
        return np.argwhere(self.node_active)

    @property
    def n_micro(self) -> int:
        return self.micro_nodes.shape[0]

    @cached_property
    def micro_coords(self) -> np.ndarray:
        return self.micro_nodes / self.m

    @cached_property
    def element_cells(self) -> np.ndarray:
        return np.argwhere(self.active_cells)

    @cached_property
    def conn(self) -> np.ndarray:
        c = self.element_cells
        return np.stack([self.node_id[c[:, 0] + o[0], c[:, 1] + o[1]] for o in LOCAL_OFFSETS], axis=1)

    @property
    def n_elements(self) -> int:
        return self.element_cells.shape[0]

    # ---- the hole boundary -------------------------------------------------------------
    @cached_property
    def hole_facet_nodes(self) -> np.ndarray:
        """Closed-grid index pairs ``(n_f, 2, 2)`` of the facets of the hole boundary."""
        m = self.m
        act = self.active_cells
        hole = self.hole_cells
        facets = []
        # facets normal to x1 between cells (a, b) and (a+1, b)
        for a in range(m - 1):
            for b in range(m):
                if act[a, b] != act[a + 1, b] and (hole[a, b] or hole[a + 1, b]):
                    facets.append(((a + 1, b), (a + 1, b + 1)))
        for a in range(m):
            for b in range(m - 1):
                if act[a, b] != act[a, b + 1] and (hole[a, b] or hole[a, b + 1]):
                    facets.append(((a, b + 1), (a + 1, b + 1)))
        return np.array(facets, dtype=np.int64).reshape(-1, 2, 2)

    @cached_property
    def hole_facets(self) -> np.ndarray:
        """Micro node ids ``(n_f, 2)`` of the hole boundary facets."""
        f = self.hole_facet_nodes
        return self.node_id[f[..., 0], f[..., 1]]

    @property
    def perimeter(self) -> float:
        """Surface measure of the hole boundary."""
        return self.hole_facets.shape[0] / self.m

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        """Micro node ids on the hole boundary, sorted."""
        return np.unique(self.hole_facets)

    # ---- periodic identification ----------------------------------------------------
    @cached_property
    def periodic_id(self) -> np.ndarray:
        """Map micro node id -> periodic node id (opposite faces of Y identified)."""
        m = self.m
        wrapped = self.micro_nodes % m
        key = wrapped[:, 0] * m + wrapped[:, 1]
        uniq, inv = np.unique(key, return_inverse=True)
        return inv.astype(np.int64)

    @property
    def n_periodic(self) -> int:
        return int(self.periodic_id.max()) + 1

    def expand_periodic(self, values: np.ndarray) -> np.ndarray:
        """Copy a periodic nodal field (last axis) onto the closed micro grid."""
        return np.take(values, self.periodic_id, axis=-1)

    def mesh(self, periodic: bool = False) -> Q1Mesh:
        if periodic:
            conn = self.periodic_id[self.conn]
            facets = self.periodic_id[self.hole_facets]
            n = self.n_periodic
        else:
            conn, facets, n = self.conn, self.hole_facets, self.n_micro
        return Q1Mesh(h=1.0 / self.m, conn=conn, n_nodes=n, cells=self.element_cells,
                      facets=facets, facet_scale=1.0)


def build_cell_geometry(dim: int = 2, hole_spec=None, micro_resolution: int = 12) -> CellGeometry:
    """Validate a box hole on an ``m``-resolved unit cell and return the cell geometry.

    ``hole_spec`` is ``"none"``/None, a pair ``(lo, hi)`` applied in every
    direction, or one pair per direction.  Bounds may be fractions, fraction
    strings such as ``"1/3"`` or floats.
    """
    if dim != 2:
        raise ParameterError("only dim = 2 is implemented")
    m = int(micro_resolution)
    if m < 1:
        raise ParameterError("micro_resolution must be positive")
    bounds = _parse_hole(dim, hole_spec, m)
    hole = np.zeros((m,) * dim, dtype=bool)
    if bounds is not None:
        hole[bounds[0][0]:bounds[0][1], bounds[1][0]:bounds[1][1]] = True
    active = ~hole
    if not active.any():
        raise GeometryError("perforated cell is empty")
    _, n_comp = ndimage.label(active)
    if n_comp != 1:
        raise GeometryError(f"perforated cell is disconnected ({n_comp} components)")
    return CellGeometry(dim=dim, m=m, hole_bounds=None if bounds is None else tuple(bounds),
                        hole_cells=hole)


@dataclass(frozen=True, eq=False)
class PerforatedGrid:
    """The perforated domain for ``epsilon = 1/n`` tiled by copies of the reference cell."""

    cell: CellGeometry
    n: int
    lengths: tuple

    @property
    def epsilon(self) -> float:
        return 1.0 / self.n

    @property
    def m(self) -> int:
        return self.cell.m

    @property
    def h(self) -> float:
        return 1.0 / (self.n * self.cell.m)

    @property
    def cell_shape(self) -> tuple:
        """Number of epsilon-cells per direction."""
        return tuple(l * self.n for l in self.lengths)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cell_shape))

    @property
    def shape(self) -> tuple:
        """Number of elements per direction of the full structured grid."""
        return tuple(l * self.n * self.cell.m for l in self.lengths)

    @cached_property
    def active_cells(self) -> np.ndarray:
        return np.tile(self.cell.active_cells, self.cell_shape)

    @cached_property
    def node_active(self) -> np.ndarray:
        N1, N2 = self.shape
        act = np.zeros((N1 + 1, N2 + 1), dtype=bool)
        for off in LOCAL_OFFSETS:
            act[off[0]:off[0] + N1, off[1]:off[1] + N2] |= self.active_cells
        return act

    @cached_property
    def node_id(self) -> np.ndarray:
        ids = -np.ones(self.node_active.shape, dtype=np.int64)
        ids[self.node_active] = np.arange(int(self.node_active.sum()))
        return ids

    @property
    def n_nodes(self) -> int:
        return int(self.node_active.sum())

    @cached_property
    def node_index(self) -> np.ndarray:
        """Integer index pairs of the active nodes."""
        return np.argwhere(self.node_active)

    def node_coords(self) -> np.ndarray:
        return self.node_index / (self.n * self.cell.m)

    def node_cell_coords(self) -> np.ndarray:
        """Position ``{x/epsilon}`` of every active node inside its cell, in ``[0,1)^d``."""
        return (self.node_index % self.cell.m) / self.cell.m

    @cached_property
    def element_cells(self) -> np.ndarray:
        return np.argwhere(self.active_cells)

    @cached_property
    def element_id(self) -> np.ndarray:
        ids = -np.ones(self.active_cells.shape, dtype=np.int64)
        ids[self.active_cells] = np.arange(int(self.active_cells.sum()))
        return ids

    @cached_property
    def conn(self) -> np.ndarray:
        c = self.element_cells
        return np.stack([self.node_id[c[:, 0] + o[0], c[:, 1] + o[1]] for o in LOCAL_OFFSETS], axis=1)

    @property
    def n_elements(self) -> int:
        return self.element_cells.shape[0]

    @property
    def measure(self) -> float:
        return self.n_elements * self.h ** 2

    @property
    def hole_measure(self) -> float:
        return (int(np.prod(self.shape)) - self.n_elements) * self.h ** 2

    # ---- unfolding maps ---------------------------------------------------------------
    @cached_property
    def cell_origins(self) -> np.ndarray:
        """Integer index ``xi`` of every epsilon-cell, row-major."""
        return np.argwhere(np.ones(self.cell_shape, dtype=bool))

    @cached_property
    def unfold_index(self) -> np.ndarray:
        """``(n_cells, n_micro)`` node ids of the point ``epsilon*(xi + y_k)``."""
        m = self.cell.m
        xi = self.cell_origins[:, None, :] * m
        k = self.cell.micro_nodes[None, :, :]
        g = xi + k
        return self.node_id[g[..., 0], g[..., 1]]

    @cached_property
    def unfold_elements(self) -> np.ndarray:
        """``(n_cells, n_micro_elements)`` element ids of the epsilon-copies of micro elements."""
        m = self.cell.m
        g = self.cell_origins[:, None, :] * m + self.cell.element_cells[None, :, :]
        return self.element_id[g[..., 0], g[..., 1]]

    @cached_property
    def pore_facets(self) -> np.ndarray:
        """Node ids ``(n_cells * n_f, 2)`` of the facets on the pore boundary, cell-major."""
        hf = self.cell.hole_facets
        return self.unfold_index[:, hf].reshape(-1, 2)

    @cached_property
    def exterior_facets(self) -> np.ndarray:
        N1, N2 = self.shape
        ids = self.node_id
        parts = [
            np.stack([ids[0, :-1], ids[0, 1:]], axis=1),
            np.stack([ids[N1, :-1], ids[N1, 1:]], axis=1),
            np.stack([ids[:-1, 0], ids[1:, 0]], axis=1),
            np.stack([ids[:-1, N2], ids[1:, N2]], axis=1),
        ]
        return np.concatenate(parts, axis=0)

    @property
    def pore_perimeter(self) -> float:
        return self.pore_facets.shape[0] * self.h

    def mesh(self) -> Q1Mesh:
        return Q1Mesh(h=self.h, conn=self.conn, n_nodes=self.n_nodes, cells=self.element_cells,
                      facets=self.pore_facets, facet_scale=self.epsilon)

    def dump_listing(self) -> str:
        """Plain-text listing ``id x1 x2 active`` over the full node grid (id -1 when inactive)."""
        N1, N2 = self.shape
        scale = self.n * self.cell.m
        lines = []
        for i in range(N1 + 1):
            for j in range(N2 + 1):
                nid = int(self.node_id[i, j])
                lines.append(f"{nid} {i / scale:.12g} {j / scale:.12g} {int(nid >= 0)}")
        return "\n".join(lines) + "\n"


def build_perforated_grid(geom: CellGeometry, epsilon, domain_lengths=(1, 1)) -> PerforatedGrid:
    """Tile ``geom`` with period ``epsilon`` over ``prod [0, l_i)``."""
    n = parse_epsilon(epsilon)
    lengths = tuple(int(l) for l in domain_lengths)
    if len(lengths) != geom.dim or any(l < 1 for l in lengths):
        raise ParameterError(f"domain lengths must be {geom.dim} positive integers, got {domain_lengths}")
    if any(float(l) != float(x) for l, x in zip(lengths, domain_lengths)):
        raise ParameterError("domain lengths must be integers")
    return PerforatedGrid(cell=geom, n=n, lengths=lengths)


@dataclass(frozen=True, eq=False)
class MacroGrid:
    """Full (unperforated) Q1 grid of the macroscopic domain with ``n`` elements per unit length."""

    lengths: tuple
    n: int

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple:
        return tuple(l * self.n for l in self.lengths)

    @property
    def node_shape(self) -> tuple:
        return tuple(s + 1 for s in self.shape)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_shape))

    @cached_property
    def node_index(self) -> np.ndarray:
        return np.argwhere(np.ones(self.node_shape, dtype=bool))

    def node_coords(self) -> np.ndarray:
        return self.node_index / self.n

    @cached_property
    def element_cells(self) -> np.ndarray:
        return np.argwhere(np.ones(self.shape, dtype=bool))

    @cached_property
    def conn(self) -> np.ndarray:
        c = self.element_cells
        ns = self.node_shape
        return np.stack([(c[:, 0] + o[0]) * ns[1] + c[:, 1] + o[1] for o in LOCAL_OFFSETS], axis=1)

    @property
    def measure(self) -> float:
        return float(np.prod(self.lengths))

    def mesh(self) -> Q1Mesh:
        return Q1Mesh(h=self.h, conn=self.conn, n_nodes=self.n_nodes, cells=self.element_cells)

    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Bilinear interpolation of nodal ``values`` (first axis) at ``points``."""
        ns = self.node_shape
        grid = values.reshape(ns + values.shape[1:])
        s = points * self.n
        i = np.clip(np.floor(s).astype(np.int64), 0, np.array(self.shape) - 1)
        t = s - i
        t0 = t[:, 0].reshape((-1,) + (1,) * (values.ndim - 1))
        t1 = t[:, 1].reshape((-1,) + (1,) * (values.ndim - 1))
        i0, i1 = i[:, 0], i[:, 1]
        return ((1 - t0) * (1 - t1) * grid[i0, i1] + t0 * (1 - t1) * grid[i0 + 1, i1]
                + t0 * t1 * grid[i0 + 1, i1 + 1] + (1 - t0) * t1 * grid[i0, i1 + 1])

    def gradient(self, values: np.ndarray) -> np.ndarray:
        """Nodal gradient by second-order differences (centered inside, one-sided at the boundary)."""
        grid = values.reshape(self.node_shape)
        g = np.gradient(grid, self.h, edge_order=2)
        return np.stack([gi.ravel() for gi in g], axis=1)


@dataclass(frozen=True, eq=False)
class TwoScaleIndex:
    """Pairs of (macro cell of spacing ``1/n_macro``, active micro node of the closed cell grid)."""

    cell: CellGeometry
    lengths: tuple
    n_macro: int

    @property
    def H(self) -> float:
        return 1.0 / self.n_macro

    @property
    def macro_shape(self) -> tuple:
        return tuple(l * self.n_macro for l in self.lengths)

    @property
    def n_macro_cells(self) -> int:
        return int(np.prod(self.macro_shape))

    @property
    def n_micro(self) -> int:
        return self.cell.n_micro

    @property
    def size(self) -> int:
        return self.n_macro_cells * self.n_micro

    @cached_property
    def macro_cells(self) -> np.ndarray:
        return np.argwhere(np.ones(self.macro_shape, dtype=bool))

    @cached_property
    def centers(self) -> np.ndarray:
        return (self.macro_cells + 0.5) / self.n_macro

    @property
    def macro_weight(self) -> float:
        """Measure of one macro cell."""
        return self.H ** self.cell.dim

    def pair(self, c, k):
        return np.asarray(c) * self.n_micro + np.asarray(k)

    def cell_map(self, n: int) -> np.ndarray:
        """Flat epsilon-cell index (``epsilon = 1/n``) containing each macro cell."""
        if self.n_macro % n:
            raise ParameterError(f"macro resolution {self.n_macro} is not a multiple of 1/epsilon = {n}")
        k = self.n_macro // n
        xi = self.macro_cells // k
        ncol = self.lengths[1] * n
        return xi[:, 0] * ncol + xi[:, 1]


def cell_index(grid: PerforatedGrid) -> TwoScaleIndex:
    """Index with exactly one macro cell per epsilon-cell of ``grid``."""
    return TwoScaleIndex(cell=grid.cell, lengths=grid.lengths, n_macro=grid.n)
