"""Bilinear (Q1) finite elements on structured square grids and a preconditioned CG solver."""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError, ParameterError, SolverError
from .geometry import CellGeometry, MacroGrid, PerforatedGrid, Q1Mesh

_G = (1.0 - 1.0 / math.sqrt(3.0)) / 2.0, (1.0 + 1.0 / math.sqrt(3.0)) / 2.0
# Gauss points of the unit square, same ordering as the element nodes
GAUSS_POINTS = np.array([[_G[0], _G[0]], [_G[1], _G[0]], [_G[1], _G[1]], [_G[0], _G[1]]])
GAUSS_WEIGHTS = np.full(4, 0.25)


def _shape(s, t):
    return np.array([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t])


def _dshape(s, t):
    return np.array([[-(1 - t), -(1 - s)], [(1 - t), -s], [t, s], [-t, (1 - s)]])


SHAPE = np.array([_shape(*p) for p in GAUSS_POINTS])        # (gp, node)
DSHAPE = np.array([_dshape(*p) for p in GAUSS_POINTS])      # (gp, node, dir), per unit length
MASS_REF = np.einsum("g,ga,gb->ab", GAUSS_WEIGHTS, SHAPE, SHAPE)
_DSHAPE_FLAT = DSHAPE.transpose(1, 0, 2).reshape(4, 8)     # node -> (gp, dir)
FACET_MASS_REF = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0


def as_mesh(grid) -> Q1Mesh:
    if isinstance(grid, Q1Mesh):
        return grid
    if isinstance(grid, (PerforatedGrid, MacroGrid)):
        return grid.mesh()
    if isinstance(grid, CellGeometry):
        return grid.mesh()
    raise TypeError(f"cannot build a Q1 mesh from {type(grid).__name__}")


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Symmetric 2x2 matrix per micro cell, sampled at micro cell centers."""

    values: np.ndarray  # (m, m, 2, 2)
    name: str = "custom"

    @classmethod
    def from_function(cls, func, m: int, name: str = "custom") -> "CoefficientField":
        c = (np.arange(m) + 0.5) / m
        y1, y2 = np.meshgrid(c, c, indexing="ij")
        pts = np.stack([y1.ravel(), y2.ravel()], axis=1)
        vals = np.asarray(func(pts), dtype=float).reshape(m, m, 2, 2)
        return cls(values=vals, name=name)

    @classmethod
    def constant(cls, matrix, m: int, name: str = "constant") -> "CoefficientField":
        mat = np.asarray(matrix, dtype=float)
        return cls(values=np.broadcast_to(mat, (m, m, 2, 2)).copy(), name=name)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def eigen_range(self) -> tuple:
        ev = np.linalg.eigvalsh(self.values.reshape(-1, 2, 2))
        return float(ev.min()), float(ev.max())

    def check(self, lower: float, upper: float) -> None:
        """Raise unless every matrix is symmetric with eigenvalues in ``[lower, upper]``."""
        v = self.values
        if np.abs(v - np.swapaxes(v, -1, -2)).max() > 1e-12 * max(1.0, np.abs(v).max()):
            raise ParameterError(f"coefficient {self.name!r} is not symmetric")
        lo, hi = self.eigen_range()
        if lo < lower or hi > upper:
            raise ParameterError(
                f"coefficient {self.name!r} has eigenvalues in [{lo:.4g}, {hi:.4g}], "
                f"outside the ellipticity bounds [{lower:.4g}, {upper:.4g}]")

    def on_cells(self, cells: np.ndarray) -> np.ndarray:
        m = self.m
        return self.values[cells[:, 0] % m, cells[:, 1] % m]

    def integral(self, cell: CellGeometry) -> np.ndarray:
        """Integral over the perforated cell."""
        return self.values[cell.active_cells].sum(axis=0) / cell.m ** cell.dim


def _element_coefficients(mesh: Q1Mesh, coeff) -> np.ndarray:
    if coeff is None:
        return np.broadcast_to(np.eye(2), (mesh.n_elements, 2, 2))
    if isinstance(coeff, CoefficientField):
        return coeff.on_cells(mesh.cells)
    arr = np.asarray(coeff, dtype=float)
    if arr.shape == (2, 2):
        return np.broadcast_to(arr, (mesh.n_elements, 2, 2))
    if arr.shape == (mesh.n_elements, 2, 2):
        return arr
    raise AssemblyError(f"coefficient of shape {arr.shape} does not match the mesh")


def _assemble(mesh: Q1Mesh, elem: np.ndarray) -> sp.csr_matrix:
    conn = mesh.conn
    rows = np.broadcast_to(conn[:, :, None], elem.shape).ravel()
    cols = np.broadcast_to(conn[:, None, :], elem.shape).ravel()
    A = sp.coo_matrix((elem.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    A = A.tocsr()
    A.sum_duplicates()
    return A


def assemble_mass(grid) -> sp.csr_matrix:
    """Consistent mass matrix, integrated exactly."""
    mesh = as_mesh(grid)
    elem = np.broadcast_to(MASS_REF * mesh.h ** 2, (mesh.n_elements, 4, 4))
    return _assemble(mesh, elem)


def lumped_mass(grid) -> np.ndarray:
    return np.asarray(assemble_mass(grid).sum(axis=1)).ravel()


def lump(A) -> sp.csr_matrix:
    """Row-sum lumping: the diagonal matrix with the row sums of ``A``."""
    return sp.diags(np.asarray(A.sum(axis=1)).ravel()).tocsr()


def assemble_stiffness(grid, coeff=None, scale: float = 1.0) -> sp.csr_matrix:
    """Stiffness ``scale * int A grad(u) . grad(v)`` with ``A`` constant per element."""
    mesh = as_mesh(grid)
    A = _element_coefficients(mesh, coeff)
    if np.abs(A - np.swapaxes(A, -1, -2)).max() > 1e-12 * max(1.0, np.abs(A).max()):
        raise AssemblyError("coefficient is not symmetric")
    if np.linalg.eigvalsh(A).min() <= 0:
        raise AssemblyError("coefficient is not elliptic")
    # h^2 from the measure cancels the two 1/h of the gradients
    elem = scale * np.einsum("g,gai,eij,gbj->eab", GAUSS_WEIGHTS, DSHAPE, A, DSHAPE)
    return _assemble(mesh, elem)


def assemble_robin_boundary(grid, coefficient: float, facet_set=None) -> sp.csr_matrix:
    """Boundary mass ``coefficient * s * int_facets u v`` where ``s`` is epsilon on perforated grids."""
    mesh = as_mesh(grid)
    facets = mesh.facets if facet_set is None else np.asarray(facet_set, dtype=np.int64).reshape(-1, 2)
    n = mesh.n_nodes
    if coefficient == 0 or facets.shape[0] == 0:
        return sp.csr_matrix((n, n))
    elem = np.broadcast_to(FACET_MASS_REF * (coefficient * mesh.facet_scale * mesh.h),
                           (facets.shape[0], 2, 2))
    rows = np.broadcast_to(facets[:, :, None], elem.shape).ravel()
    cols = np.broadcast_to(facets[:, None, :], elem.shape).ravel()
    A = sp.coo_matrix((elem.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def assemble_advection(grid, direction: int) -> sp.csr_matrix:
    """Matrix ``C[k, l] = int (d_j phi_l) phi_k``."""
    mesh = as_mesh(grid)
    elem = mesh.h * np.einsum("g,gk,gl->kl", GAUSS_WEIGHTS, SHAPE, DSHAPE[:, :, direction])
    return _assemble(mesh, np.broadcast_to(elem, (mesh.n_elements, 4, 4)))


# ---- quadrature-point helpers -------------------------------------------------------------

def gauss_values(mesh: Q1Mesh, values: np.ndarray) -> np.ndarray:
    """Nodal field (first axis) evaluated at the Gauss points: ``(n_el, 4, ...)``."""
    local = values[mesh.conn]
    if local.ndim == 2:
        return local @ SHAPE.T
    return np.matmul(SHAPE, local.reshape(local.shape[0], 4, -1)).reshape(local.shape)


def gauss_gradients(mesh: Q1Mesh, values: np.ndarray) -> np.ndarray:
    """Gradient of a scalar nodal field at the Gauss points: ``(n_el, 4, 2)``."""
    local = values[mesh.conn]
    return (local @ _DSHAPE_FLAT).reshape(local.shape[0], 4, 2) / mesh.h


def _scatter(mesh: Q1Mesh, local: np.ndarray) -> np.ndarray:
    return np.bincount(mesh.conn.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)


def assemble_load(grid, gp_values: np.ndarray) -> np.ndarray:
    """Load vector ``int s phi_i`` for ``s`` given at the Gauss points ``(n_el, 4)``."""
    mesh = as_mesh(grid)
    local = mesh.h ** 2 * ((gp_values * GAUSS_WEIGHTS) @ SHAPE)
    return _scatter(mesh, local)


def assemble_grad_load(grid, gp_vectors: np.ndarray) -> np.ndarray:
    """Load vector ``int F . grad(phi_i)`` for ``F`` given at the Gauss points ``(n_el, 4, 2)``."""
    mesh = as_mesh(grid)
    flat = (gp_vectors * GAUSS_WEIGHTS[:, None]).reshape(gp_vectors.shape[0], 8)
    local = mesh.h * (flat @ _DSHAPE_FLAT.T)
    return _scatter(mesh, local)


def l2_norm(grid, values: np.ndarray) -> float:
    M = assemble_mass(grid)
    return math.sqrt(max(float(values @ (M @ values)), 0.0))


def grad_l2_norm(grid, values: np.ndarray) -> float:
    mesh = as_mesh(grid)
    g = gauss_gradients(mesh, values)
    return math.sqrt(float(mesh.h ** 2 * ((g * g).sum(axis=(0, 2)) @ GAUSS_WEIGHTS)))


@dataclass
class ScalarField:
    """Nodal values on a grid at time ``time``."""

    grid: object
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        n = as_mesh(self.grid).n_nodes
        if self.values.shape[0] != n:
            raise ParameterError(f"field has {self.values.shape[0]} values, grid has {n} nodes")


# ---- solver ----------------------------------------------------------------------------

@dataclass
class SolveResult:
    x: np.ndarray
    iterations: int
    residual: float


def pcg(A, b, tol: float = 1e-10, max_iter: int | None = None, x0=None,
        constant_null: bool = False) -> SolveResult:
    """Jacobi-preconditioned conjugate gradients, vectorized over the columns of ``b``.

    With ``constant_null`` the right-hand side, the preconditioned residuals and
    the result are projected onto the complement of the constant vector, which
    is how pure Neumann problems are solved.
    """
    b = np.asarray(b, dtype=float)
    squeeze = b.ndim == 1
    B = b.reshape(b.shape[0], -1)
    n, k = B.shape
    if max_iter is None:
        max_iter = max(10 * n, 100)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("matrix has a non-positive diagonal entry")
    minv = (1.0 / diag)[:, None]

    def project(v):
        return v - v.mean(axis=0) if constant_null else v

    B = project(B)
    X = np.zeros((n, k)) if x0 is None else project(np.asarray(x0, dtype=float).reshape(n, k).copy())
    R = B - A @ X
    bnorm = np.linalg.norm(B, axis=0)
    bnorm[bnorm == 0] = 1.0
    Z = project(minv * R)
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    res = np.linalg.norm(R, axis=0) / bnorm
    it = 0
    while np.any(res > tol):
        if it >= max_iter:
            raise SolverError(f"CG did not converge in {max_iter} iterations "
                              f"(relative residual {res.max():.3e})",
                              residual=float(res.max()), iterations=it)
        active = res > tol
        AP = A @ P
        pap = np.einsum("ij,ij->j", P, AP)
        if np.any(pap[active] <= 0):
            raise SolverError("matrix is not positive definite on the Krylov space",
                              residual=float(res.max()), iterations=it)
        alpha = np.where(active, rz / np.where(active, pap, 1.0), 0.0)
        X += alpha * P
        R -= alpha * AP
        Z = project(minv * R)
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = np.where(active, rz_new / np.where(rz == 0, 1.0, rz), 0.0)
        P = np.where(active, Z + beta * P, P)
        rz = np.where(active, rz_new, rz)
        res = np.linalg.norm(R, axis=0) / bnorm
        it += 1
    X = project(X)
    true_res = float((np.linalg.norm(B - A @ X, axis=0) / bnorm).max())
    return SolveResult(x=X[:, 0] if squeeze else X, iterations=it, residual=true_res)


def solve_spd(A, rhs, tol: float = 1e-10, max_iter: int | None = None, x0=None,
              constant_null: bool = False) -> np.ndarray:
    """Solve ``A x = rhs`` for symmetric positive (semi-)definite ``A``; see :func:`pcg`."""
    return pcg(A, rhs, tol=tol, max_iter=max_iter, x0=x0, constant_null=constant_null).x


def dump_coo(A) -> str:
    """Coordinate listing ``row col value`` of a sparse matrix."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    return "".join(f"{C.row[i]} {C.col[i]} {C.data[i]:.17g}\n" for i in order)
