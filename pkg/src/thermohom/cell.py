"""Periodic unit-cell problems, the effective tensor and the first-order corrector."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError
from .fem import (DSHAPE, GAUSS_WEIGHTS, CoefficientField, _element_coefficients, assemble_grad_load,
                  assemble_mass, assemble_stiffness, pcg)
from .geometry import CellGeometry, MacroGrid, TwoScaleIndex
from .operators import TwoScaleField

ASYMMETRY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class EffectiveTensor:
    """Effective diffusion ``d_eff`` with the mean-zero corrector basis on the closed micro grid."""

    d_eff: np.ndarray
    corrector_basis: np.ndarray          # (d, n_micro)
    cell: CellGeometry
    coefficient: CoefficientField
    residuals: tuple = ()
    iterations: tuple = ()
    asymmetry: float = 0.0
    energies: np.ndarray = field(default=None)

    @property
    def dim(self) -> int:
        return self.d_eff.shape[0]

    def voigt_bound(self) -> np.ndarray:
        """``int_{Y*} D dy``, the value of the energy at ``Phi = 0``."""
        return self.coefficient.integral(self.cell)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.d_eff)

    def to_csv(self) -> str:
        lines = ["i,j,d_eff"]
        for i in range(self.dim):
            for j in range(self.dim):
                lines.append(f"{i + 1},{j + 1},{self.d_eff[i, j]:.17g}")
        return "\n".join(lines) + "\n"

    def basis_csv(self) -> str:
        y = self.cell.micro_coords
        head = "y1,y2," + ",".join(f"phi{j + 1}" for j in range(self.dim))
        rows = [head]
        for k in range(y.shape[0]):
            vals = ",".join(f"{self.corrector_basis[j, k]:.17g}" for j in range(self.dim))
            rows.append(f"{y[k, 0]:.12g},{y[k, 1]:.12g},{vals}")
        return "\n".join(rows) + "\n"


def _energy_matrix(cell: CellGeometry, A: np.ndarray, phis: np.ndarray) -> np.ndarray:
    """``E_ij = int_{Y*} A (grad Phi_j + e_j) . (grad Phi_i + e_i)`` by Gauss quadrature."""
    d = phis.shape[0]
    local = phis[:, cell.conn]                                          # (d, n_el, 4)
    grads = np.einsum("jea,gai->jegi", local, DSHAPE) * cell.m + np.eye(d)[:, None, None, :]
    return np.einsum("g,iegk,ekl,jegl->ij", GAUSS_WEIGHTS, grads, A, grads) / cell.m ** 2


def solve_cell_problems(geom: CellGeometry, coeff: CoefficientField | None = None,
                        tol: float = 1e-12) -> EffectiveTensor:
    """Solve the periodic Neumann cell problems for every unit vector and assemble ``d_eff``."""
    if coeff is None:
        coeff = CoefficientField.constant(np.eye(geom.dim), geom.m, name="identity")
    mesh = geom.mesh(periodic=True)
    K = assemble_stiffness(mesh, coeff)
    A = _element_coefficients(mesh, coeff)                               # (n_el, 2, 2)
    d = geom.dim
    rhs = np.stack([-assemble_grad_load(mesh, np.broadcast_to(A[:, None, :, j], (A.shape[0], 4, d)))
                    for j in range(d)], axis=1)
    if np.linalg.norm(rhs) == 0:
        sol = np.zeros((mesh.n_nodes, d))
        iters, res = (0,) * d, (0.0,) * d
    else:
        try:
            r = pcg(K, rhs, tol=tol, constant_null=True)
        except SolverError as exc:
            raise SolverError(f"cell problem failed: {exc}", exc.residual, exc.iterations) from exc
        sol = r.x
        iters, res = (r.iterations,) * d, (r.residual,) * d
    M = assemble_mass(mesh)
    ones = np.ones(mesh.n_nodes)
    mass = ones @ (M @ ones)
    sol = sol - (ones @ (M @ sol)) / mass
    phis = geom.expand_periodic(sol.T)                                   # (d, n_micro)
    E = _energy_matrix(geom, coeff.on_cells(geom.element_cells), phis)
    asym = float(np.abs(E - E.T).max())
    if asym > ASYMMETRY_TOL * max(1.0, np.abs(E).max()):
        raise SolverError(f"effective tensor asymmetry {asym:.3e} exceeds {ASYMMETRY_TOL:g}")
    d_eff = 0.5 * (E + E.T)
    return EffectiveTensor(d_eff=d_eff, corrector_basis=phis, cell=geom, coefficient=coeff,
                           residuals=tuple(res), iterations=tuple(iters), asymmetry=asym,
                           energies=np.diag(E).copy())


def corrector_from_gradient(grad: np.ndarray, tensor: EffectiveTensor, index: TwoScaleIndex,
                            time: float = 0.0) -> TwoScaleField:
    """``U(x_c, y) = sum_j g_j(x_c) Phi_j(y)`` for gradients ``g`` given per macro cell."""
    return TwoScaleField(index, np.asarray(grad) @ tensor.corrector_basis, time)


def evaluate_corrector(u: np.ndarray, grid: MacroGrid, tensor: EffectiveTensor, index: TwoScaleIndex,
                       time: float = 0.0) -> TwoScaleField:
    """First-order corrector of the nodal macroscopic field ``u`` at the macro cell centers.

    The gradient is recovered at the nodes by second-order differences and
    interpolated bilinearly to the cell centers.
    """
    g = grid.interpolate(grid.gradient(np.asarray(u, dtype=float)), index.centers)
    return corrector_from_gradient(g, tensor, index, time)


def boundary_average(source, t: float, x: np.ndarray, cell: CellGeometry) -> np.ndarray:
    """Average of ``V(t, x, .)`` over the hole boundary, by the trapezoidal rule on its facets."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    f = cell.hole_facet_nodes / cell.m                                   # (n_f, 2, 2)
    nf = f.shape[0]
    if nf == 0:
        raise ValueError("the cell has no hole boundary")
    pts = f.reshape(-1, 2)
    npts = pts.shape[0]
    X = np.repeat(x, npts, axis=0)
    Yp = np.tile(pts, (x.shape[0], 1))
    vals = source(t, X, Yp).reshape(x.shape[0], npts)
    # every facet has length 1/m; the trapezoid weight of each endpoint is 1/(2m)
    return vals.sum(axis=1) / (2.0 * nf)
