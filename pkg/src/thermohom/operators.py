"""Discrete unfolding, folding and mollification on aligned grids.

Every epsilon-cell of a :class:`PerforatedGrid` carries the same micro grid
as the reference cell, so unfolding is an index gather and the identities
between one-scale and two-scale integrals hold to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
import scipy.sparse as sp
from scipy import integrate
from scipy.signal import fftconvolve

from .errors import ParameterError
from .fem import (DSHAPE, FACET_MASS_REF, GAUSS_WEIGHTS, MASS_REF, assemble_mass,
                  assemble_robin_boundary, assemble_stiffness, gauss_gradients, grad_l2_norm,
                  l2_norm, solve_spd)
from .geometry import CellGeometry, MacroGrid, PerforatedGrid, TwoScaleIndex, cell_index


@lru_cache(maxsize=None)
def micro_mass(cell: CellGeometry) -> sp.csr_matrix:
    return assemble_mass(cell.mesh())


@lru_cache(maxsize=None)
def micro_boundary_mass(cell: CellGeometry) -> np.ndarray:
    """Dense facet mass of the hole boundary restricted to ``cell.boundary_nodes``."""
    B = assemble_robin_boundary(cell.mesh(), 1.0).toarray()
    b = cell.boundary_nodes
    return B[np.ix_(b, b)]


def _quad(values: np.ndarray, M, weight: float) -> float:
    """``weight * sum_c v_c^T M v_c`` for the rows ``v_c`` of ``values``."""
    return weight * float(np.einsum("ck,ck->", values, (M @ values.T).T))


def micro_gradient(cell: CellGeometry, values: np.ndarray) -> np.ndarray:
    """y-gradient at the micro Gauss points of closed-grid nodal values (last axis)."""
    local = values[..., cell.conn]  # (..., n_el, 4)
    return np.einsum("...ea,gai->...egi", local, DSHAPE) * cell.m


def gradient_norm_sq(cell: CellGeometry, grads: np.ndarray, weight: float) -> float:
    """``weight * sum |g|^2`` integrated over the micro elements of the Gauss-point field ``grads``."""
    g = grads.reshape((-1,) + grads.shape[-3:])
    return weight * float(np.einsum("g,cegi,cegi->", GAUSS_WEIGHTS, g, g)) / cell.m ** 2


@dataclass
class TwoScaleField:
    """Values on (macro cell, micro node) pairs; piecewise constant in x, Q1 in y."""

    index: TwoScaleIndex
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.index.n_macro_cells, self.index.n_micro):
            raise ParameterError(
                f"two-scale values have shape {self.values.shape}, expected "
                f"{(self.index.n_macro_cells, self.index.n_micro)}")

    @property
    def cell(self) -> CellGeometry:
        return self.index.cell

    def integral(self) -> float:
        M = micro_mass(self.cell)
        return self.index.macro_weight * float((M @ self.values.T).sum())

    def l2_norm(self) -> float:
        return math.sqrt(max(_quad(self.values, micro_mass(self.cell), self.index.macro_weight), 0.0))

    def grad_y(self) -> np.ndarray:
        return micro_gradient(self.cell, self.values)

    def grad_y_norm(self) -> float:
        return math.sqrt(gradient_norm_sq(self.cell, self.grad_y(), self.index.macro_weight))

    def h1y_norm(self) -> float:
        """``||U||_{L2(Omega x Y*)} + ||grad_y U||_{L2(Omega x Y*)}``."""
        return self.l2_norm() + self.grad_y_norm()

    def __sub__(self, other: "TwoScaleField") -> "TwoScaleField":
        return TwoScaleField(self.index, self.values - other.values, self.time)

    def __add__(self, other: "TwoScaleField") -> "TwoScaleField":
        return TwoScaleField(self.index, self.values + other.values, self.time)

    def to_csv(self) -> str:
        mc = self.index.macro_cells
        mn = self.cell.micro_nodes
        lines = ["macro_i,macro_j,micro_i,micro_j,value"]
        for c in range(self.values.shape[0]):
            for k in range(self.values.shape[1]):
                lines.append(f"{mc[c, 0]},{mc[c, 1]},{mn[k, 0]},{mn[k, 1]},{self.values[c, k]:.17g}")
        return "\n".join(lines) + "\n"


@dataclass
class CellwiseField:
    """Field on the perforated domain given separately on every epsilon-cell (possibly broken)."""

    grid: PerforatedGrid
    values: np.ndarray  # (n_cells, n_micro)

    def l2_norm(self) -> float:
        w = self.grid.epsilon ** self.grid.cell.dim
        return math.sqrt(max(_quad(self.values, micro_mass(self.grid.cell), w), 0.0))

    def to_nodal(self) -> np.ndarray:
        """Average over the copies of shared nodes."""
        idx = self.grid.unfold_index.ravel()
        s = np.bincount(idx, weights=self.values.ravel(), minlength=self.grid.n_nodes)
        c = np.bincount(idx, minlength=self.grid.n_nodes)
        return s / c

    def jump(self) -> float:
        """Largest disagreement between copies of a shared node."""
        idx = self.grid.unfold_index.ravel()
        v = self.values.ravel()
        hi = np.full(self.grid.n_nodes, -np.inf)
        lo = np.full(self.grid.n_nodes, np.inf)
        np.maximum.at(hi, idx, v)
        np.minimum.at(lo, idx, v)
        return float((hi - lo).max())


@dataclass
class BoundaryTwoScaleField:
    """Values on (macro cell, micro node of the hole boundary) pairs."""

    index: TwoScaleIndex
    values: np.ndarray

    def integral(self) -> float:
        B = micro_boundary_mass(self.index.cell)
        return self.index.macro_weight * float((B @ self.values.T).sum())

    def l2_norm(self) -> float:
        B = micro_boundary_mass(self.index.cell)
        return math.sqrt(max(_quad(self.values, B, self.index.macro_weight), 0.0))


def _resolve_index(grid: PerforatedGrid, index: TwoScaleIndex | None) -> TwoScaleIndex:
    if index is None:
        return cell_index(grid)
    if index.cell is not grid.cell or tuple(index.lengths) != tuple(grid.lengths):
        raise ParameterError("two-scale index and grid describe different geometries")
    return index


def unfold(values: np.ndarray, grid: PerforatedGrid, index: TwoScaleIndex | None = None,
           time: float = 0.0) -> TwoScaleField:
    """Periodic unfolding: ``(T u)(x, y) = u(epsilon [x/epsilon] + epsilon y)``."""
    index = _resolve_index(grid, index)
    cmap = index.cell_map(grid.n)
    return TwoScaleField(index, np.asarray(values)[grid.unfold_index[cmap]], time)


def unfold_gradient(values: np.ndarray, grid: PerforatedGrid, index: TwoScaleIndex | None = None,
                    scaled: bool = True) -> np.ndarray:
    """``T(epsilon grad u)`` (or ``T(grad u)``) at the micro Gauss points: ``(n_macro, n_el_Y, 4, 2)``."""
    index = _resolve_index(grid, index)
    g = gauss_gradients(grid.mesh(), np.asarray(values, dtype=float))
    if scaled:
        g = g * grid.epsilon
    return g[grid.unfold_elements[index.cell_map(grid.n)]]


def unfold_boundary(values: np.ndarray, grid: PerforatedGrid,
                    index: TwoScaleIndex | None = None) -> BoundaryTwoScaleField:
    """Boundary unfolding of a trace given by nodal values on the pore boundary."""
    index = _resolve_index(grid, index)
    b = grid.cell.boundary_nodes
    rows = grid.unfold_index[index.cell_map(grid.n)][:, b]
    return BoundaryTwoScaleField(index, np.asarray(values)[rows])


def _fold_matrix(index: TwoScaleIndex, grid: PerforatedGrid) -> sp.csr_matrix:
    cmap = index.cell_map(grid.n)
    counts = np.bincount(cmap, minlength=grid.n_cells)
    data = 1.0 / counts[cmap]
    return sp.csr_matrix((data, (cmap, np.arange(cmap.size))), shape=(grid.n_cells, cmap.size))


def fold(U: TwoScaleField, grid: PerforatedGrid) -> CellwiseField:
    """Folding: average of ``U(., {x/epsilon})`` over the epsilon-cell containing ``x``."""
    S = _fold_matrix(_resolve_index(grid, U.index), grid)
    return CellwiseField(grid, S @ U.values)


def fold_gauss(values: np.ndarray, index: TwoScaleIndex, grid: PerforatedGrid) -> np.ndarray:
    """Fold a Gauss-point two-scale field ``(n_macro, ...)`` to ``(n_cells, ...)``."""
    S = _fold_matrix(index, grid)
    flat = values.reshape(values.shape[0], -1)
    return (S @ flat).reshape((grid.n_cells,) + values.shape[1:])


def unfold_cellwise(F: CellwiseField, index: TwoScaleIndex | None = None) -> TwoScaleField:
    """Unfolding of a cellwise field (exact inverse of folding on cell-constant data)."""
    index = _resolve_index(F.grid, index)
    return TwoScaleField(index, F.values[index.cell_map(F.grid.n)])


def gradient_fold(U: TwoScaleField, grid: PerforatedGrid, tol: float = 1e-10,
                  max_iter: int | None = None) -> np.ndarray:
    """Gradient folding: the Q1 solution of the epsilon-scaled elliptic projection of ``U``.

    Solves ``(M + eps^2 K) u = M(F U) + eps B(F grad_y U)`` on the nodes of ``grid``.
    """
    index = _resolve_index(grid, U.index)
    cell = grid.cell
    eps, h = grid.epsilon, grid.h
    FU = fold(U, grid).values                              # (n_cells, n_micro)
    FG = fold_gauss(U.grad_y(), index, grid)               # (n_cells, n_el_Y, 4, 2)
    local_u = FU[:, cell.conn]                             # (n_cells, n_el_Y, 4)
    load_m = h ** 2 * np.einsum("ab,ceb->cea", MASS_REF, local_u)
    load_g = eps * h * np.einsum("g,cegi,gai->cea", GAUSS_WEIGHTS, FG, DSHAPE)
    targets = grid.conn[grid.unfold_elements]              # (n_cells, n_el_Y, 4)
    rhs = np.bincount(targets.ravel(), weights=(load_m + load_g).ravel(), minlength=grid.n_nodes)
    A = assemble_mass(grid) + eps ** 2 * assemble_stiffness(grid)
    return solve_spd(A, rhs, tol=tol, max_iter=max_iter)


def folding_mismatch(U: TwoScaleField, grid: PerforatedGrid, tol: float = 1e-10) -> tuple:
    """``(||G U - F U||, ||eps grad G U - F(grad_y U)||)`` in ``L2(Omega_eps)``."""
    index = _resolve_index(grid, U.index)
    g = gradient_fold(U, grid, tol=tol)
    FU = fold(U, grid)
    cidx = cell_index(grid)
    d0 = unfold(g, grid, cidx).values - FU.values
    w = grid.epsilon ** grid.cell.dim
    e0 = math.sqrt(max(_quad(d0, micro_mass(grid.cell), w), 0.0))
    FG = fold_gauss(U.grad_y(), index, grid)
    d1 = unfold_gradient(g, grid, cidx) - FG
    e1 = math.sqrt(gradient_norm_sq(grid.cell, d1, w))
    return e0, e1


def eps_norm(values: np.ndarray, grid: PerforatedGrid) -> float:
    """``||phi||_{L2(Omega_eps)} + eps ||grad phi||_{L2(Omega_eps)}``."""
    return l2_norm(grid, values) + grid.epsilon * grad_l2_norm(grid, values)


# ---- mollifier ------------------------------------------------------------------------

MOLLIFIER_FORMS = ("scaled", "literal")


def admissible_delta(delta: float, epsilon: float, dim: int = 2) -> bool:
    """The standing assumption ``delta > 2 epsilon diam(Y)``."""
    return delta > 2.0 * epsilon * math.sqrt(dim)


@dataclass(frozen=True)
class Mollifier:
    """Compactly supported smooth kernel of radius ``delta`` with unit integral.

    ``form="literal"`` is ``C exp(1/(|x|^2 - delta^2))``; ``form="scaled"`` is the
    dilation ``delta^-d J(x/delta)`` of ``J(x) = C exp(1/(|x|^2 - 1))``, i.e.
    ``C' exp(delta^2/(|x|^2 - delta^2))``.  Both are evaluated with the exponent
    shifted by its value at the origin so small radii do not underflow; the
    factor is absorbed by the normalization.
    """

    delta: float
    dim: int = 2
    points_per_delta: int = 32
    form: str = "scaled"

    def __post_init__(self):
        if not self.delta > 0:
            raise ParameterError("mollifier radius must be positive")
        if self.dim != 2:
            raise ParameterError("only dim = 2 is implemented")
        if self.form not in MOLLIFIER_FORMS:
            raise ParameterError(f"mollifier form must be one of {MOLLIFIER_FORMS}")

    @property
    def _c(self) -> float:
        return 1.0 if self.form == "literal" else self.delta ** 2

    def profile(self, z: np.ndarray) -> np.ndarray:
        """Unnormalized kernel at points ``z`` (last axis is the coordinate)."""
        r2 = np.sum(np.asarray(z, dtype=float) ** 2, axis=-1)
        out = np.zeros_like(r2)
        inside = r2 < self.delta ** 2
        c, d2 = self._c, self.delta ** 2
        out[inside] = np.exp(c / (r2[inside] - d2) + c / d2)
        return out

    def profile_gradient(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        r2 = np.sum(z ** 2, axis=-1)
        out = np.zeros(z.shape)
        inside = r2 < self.delta ** 2
        c, d2 = self._c, self.delta ** 2
        d = r2[inside] - d2
        out[inside] = (np.exp(c / d + c / d2) * (-2.0 * c / d ** 2))[:, None] * z[inside]
        return out

    @property
    def normalization(self) -> float:
        """Continuous constant giving the (shifted) profile unit integral."""
        d, c = self.delta, self._c
        val, _ = integrate.quad(lambda r: 2 * math.pi * r * math.exp(c / (r * r - d * d) + c / d ** 2),
                                0, d, points=[min(0.5 * d, 3 * d * d / math.sqrt(c))], limit=200)
        return 1.0 / val

    def sampling_spacing(self, h: float) -> int:
        """Refinement factor so the kernel core (width about ``delta^2 / sqrt(c)``) is resolved."""
        target = min(self.delta / self.points_per_delta, self.delta ** 2 / (4.0 * math.sqrt(self._c)))
        return max(1, int(math.ceil(h / target - 1e-9)))

    def _offsets(self, h: float) -> np.ndarray:
        K = int(math.floor(self.delta / h))
        a = np.arange(-K, K + 1) * h
        z1, z2 = np.meshgrid(a, a, indexing="ij")
        return np.stack([z1, z2], axis=-1)

    def discrete_normalization(self, h: float) -> float:
        return 1.0 / (h ** 2 * self.profile(self._offsets(h)).sum())

    def kernel(self, h: float) -> np.ndarray:
        """Sampled kernel times ``h^2``, renormalized to unit sum."""
        k = self.profile(self._offsets(h))
        return k / k.sum()

    def gradient_kernel(self, h: float) -> np.ndarray:
        """Sampled gradient of the kernel with the discrete normalization, ``(2K+1, 2K+1, 2)``."""
        return self.discrete_normalization(h) * self.profile_gradient(self._offsets(h))

    def check(self, epsilon: float) -> None:
        if not admissible_delta(self.delta, epsilon, self.dim):
            raise ParameterError(
                f"mollifier radius delta={self.delta:g} violates delta > 2 eps diam(Y) "
                f"= {2 * epsilon * math.sqrt(self.dim):.6g} at eps={epsilon:g}")


def _interp_matrix(n_coarse: int, r: int) -> sp.csr_matrix:
    """1D linear interpolation from ``n_coarse + 1`` nodes onto ``n_coarse * r + 1`` nodes."""
    nf = n_coarse * r + 1
    j = np.arange(nf)
    i0 = np.minimum(j // r, n_coarse - 1) if n_coarse > 0 else np.zeros_like(j)
    t = j / r - i0
    rows = np.concatenate([j, j])
    cols = np.concatenate([i0, i0 + 1])
    data = np.concatenate([1 - t, t])
    return sp.csr_matrix((data, (rows, cols)), shape=(nf, n_coarse + 1))


def _full_grid_data(values, grid):
    if isinstance(grid, PerforatedGrid):
        full = np.zeros(grid.node_active.shape)
        full[grid.node_active] = values
        return full, grid.active_cells, grid.h, grid.node_active
    if isinstance(grid, MacroGrid):
        return (np.asarray(values, dtype=float).reshape(grid.node_shape),
                np.ones(grid.shape, dtype=bool), grid.h, None)
    raise TypeError(f"unsupported grid {type(grid).__name__}")


def mollified_gradient(values: np.ndarray, grid, moll: Mollifier, epsilon: float | None = None,
                       strict: bool = True) -> np.ndarray:
    """Gradient of the mollified zero extension of a nodal field, at the nodes of ``grid``.

    The field is extended by zero into the holes and outside the domain.  The
    convolution integral is evaluated by the trapezoidal rule on a grid refined
    until ``delta`` spans ``moll.points_per_delta`` intervals.  If ``epsilon``
    is given and ``strict`` is set, the radius constraint is enforced.
    """
    if epsilon is not None and strict:
        moll.check(epsilon)
    full, mask, h, node_active = _full_grid_data(np.asarray(values, dtype=float), grid)
    r = moll.sampling_spacing(h)
    hf = h / r
    N1, N2 = mask.shape
    fine = _interp_matrix(N1, r) @ full @ _interp_matrix(N2, r).T
    fmask = np.kron(mask, np.ones((r, r), dtype=bool)).astype(float)
    weights = np.zeros(fine.shape)
    for o1 in (0, 1):
        for o2 in (0, 1):
            weights[o1:o1 + N1 * r, o2:o2 + N2 * r] += fmask
    weights *= hf ** 2 / 4.0
    q = fine * weights
    G = moll.gradient_kernel(hf)
    out = np.stack([fftconvolve(q, G[..., i], mode="same") for i in range(2)], axis=-1)
    out = out[::r, ::r]
    if node_active is not None:
        return out[node_active]
    return out.reshape(-1, 2)


def mollify(values: np.ndarray, grid, moll: Mollifier) -> np.ndarray:
    """Mollified zero extension (no gradient), same quadrature as :func:`mollified_gradient`."""
    full, mask, h, node_active = _full_grid_data(np.asarray(values, dtype=float), grid)
    r = moll.sampling_spacing(h)
    hf = h / r
    N1, N2 = mask.shape
    fine = _interp_matrix(N1, r) @ full @ _interp_matrix(N2, r).T
    fmask = np.kron(mask, np.ones((r, r), dtype=bool)).astype(float)
    weights = np.zeros(fine.shape)
    for o1 in (0, 1):
        for o2 in (0, 1):
            weights[o1:o1 + N1 * r, o2:o2 + N2 * r] += fmask
    q = fine * weights / 4.0
    out = fftconvolve(q, moll.kernel(hf), mode="same")[::r, ::r]
    return out[node_active] if node_active is not None else out.ravel()


# ---- exactness suite for the operator algebra -------------------------------------------

def operator_algebra_suite(cell: CellGeometry, inverse_epsilons=(4, 8), seed: int = 0,
                           tol: float = 1e-12, reaction=None) -> list:
    """Check the unfolding identities on random nodal fields; one record per identity and epsilon."""
    from .geometry import PerforatedGrid

    if reaction is None:
        def reaction(s):
            return np.where(s > 0, s * (2 - s), 0.0)
    rng = np.random.default_rng(seed)
    records = []

    def record(name, n, err):
        records.append({"identity": name, "epsilon": f"1/{n}", "rel_error": float(err),
                        "passed": bool(err <= tol)})

    def rel(a, b):
        return abs(a - b) / max(abs(a), abs(b), 1e-300)

    for n in inverse_epsilons:
        grid = PerforatedGrid(cell=cell, n=int(n), lengths=(1, 1))
        u = rng.standard_normal(grid.n_nodes)
        v = rng.standard_normal(grid.n_nodes)
        Tu, Tv = unfold(u, grid), unfold(v, grid)
        M = assemble_mass(grid)
        record("norm preservation T", n, rel(Tu.l2_norm(), math.sqrt(u @ (M @ u))))
        Bnd = assemble_robin_boundary(grid.mesh(), 1.0) / grid.epsilon
        Tbu = unfold_boundary(u, grid)
        record("norm preservation T^b", n,
               rel(Tbu.l2_norm(), math.sqrt(grid.epsilon * float(u @ (Bnd @ u)))))
        record("integration formula T", n, rel(Tu.integral(), float(np.asarray(M.sum(axis=0)).ravel() @ u)))
        record("integration formula T^b", n,
               rel(Tbu.integral(), grid.epsilon * float(np.asarray(Bnd.sum(axis=0)).ravel() @ u)))
        Tuv = unfold(u * v, grid)
        record("product rule T", n,
               np.abs(Tuv.values - Tu.values * Tv.values).max() / np.abs(Tuv.values).max())
        Tbv, Tbuv = unfold_boundary(v, grid), unfold_boundary(u * v, grid)
        record("product rule T^b", n,
               np.abs(Tbuv.values - Tbu.values * Tbv.values).max() / np.abs(Tbuv.values).max())
        g_unf = unfold_gradient(u, grid)
        g_y = Tu.grad_y()
        record("gradient commutation T(eps grad u) = grad_y T u", n,
               np.abs(g_unf - g_y).max() / np.abs(g_y).max())
        TR = unfold(reaction(u), grid)
        RT = reaction(Tu.values)
        record("reaction commutation T[R(u)] = R(T u)", n,
               np.abs(TR.values - RT).max() / max(np.abs(RT).max(), 1e-300))
        record("eps-norm identity", n, rel(Tu.h1y_norm(), eps_norm(u, grid)))
    return records
