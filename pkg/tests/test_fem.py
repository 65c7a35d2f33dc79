import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve
from hypothesis import given, settings, strategies as st

from thermohom.errors import AssemblyError, ParameterError, SolverError
from thermohom.fem import (CoefficientField, assemble_advection, assemble_load, assemble_mass,
                           assemble_robin_boundary, assemble_stiffness, dump_coo, grad_l2_norm,
                           l2_norm, lump, lumped_mass, pcg)
from thermohom.geometry import MacroGrid, PerforatedGrid


@pytest.fixture(scope="module")
def grid(hole_cell):
    return PerforatedGrid(cell=hole_cell, n=4, lengths=(1, 1))


def test_mass_integrates_domain(grid):
    M = assemble_mass(grid)
    one = np.ones(grid.n_nodes)
    assert one @ M @ one == pytest.approx(8 / 9, rel=1e-13)
    assert lumped_mass(grid).sum() == pytest.approx(8 / 9, rel=1e-13)
    assert abs(M - M.T).max() < 1e-16


def test_lumping_keeps_row_sums(grid):
    for A in (assemble_mass(grid), assemble_robin_boundary(grid, 0.7)):
        L = lump(A)
        assert L.nnz <= grid.n_nodes
        assert abs(L - sp.diags(L.diagonal())).max() == 0
        np.testing.assert_allclose(L @ np.ones(grid.n_nodes), A @ np.ones(grid.n_nodes), rtol=1e-14)
    # the lumped mass is positive on every active node
    assert lump(assemble_mass(grid)).diagonal().min() > 0


def test_stiffness_linear_energy(grid):
    K = assemble_stiffness(grid)
    x = grid.node_coords()
    assert np.abs(K @ np.ones(grid.n_nodes)).max() < 1e-12
    u = 2 * x[:, 0] - x[:, 1]
    # |grad u|^2 = 5 over a domain of measure 8/9
    assert u @ K @ u == pytest.approx(5 * 8 / 9, rel=1e-12)
    assert grad_l2_norm(grid, u) == pytest.approx(np.sqrt(40 / 9), rel=1e-12)
    D = CoefficientField.constant(np.diag([2.0, 3.0]), grid.m)
    KD = assemble_stiffness(grid, D)
    assert u @ KD @ u == pytest.approx((2 * 4 + 3 * 1) * 8 / 9, rel=1e-12)


def test_l2_norm_of_bilinear_function():
    g = MacroGrid(lengths=(1, 1), n=3)
    x = g.node_coords()
    u = x[:, 0] * x[:, 1]
    # int (x y)^2 = 1/9, exact under 2x2 Gauss quadrature
    assert l2_norm(g, u) == pytest.approx(1 / 3, rel=1e-13)


def test_robin_boundary_total(grid):
    B = assemble_robin_boundary(grid, 1.0)
    one = np.ones(grid.n_nodes)
    # eps * |pore boundary| = eps * n^2 * eps * 4/3 with n = 1/eps
    assert one @ B @ one == pytest.approx(4 / 3, rel=1e-13)
    assert assemble_robin_boundary(grid, 0.0).nnz == 0


def test_advection_antisymmetric_part_on_full_grid():
    g = MacroGrid(lengths=(1, 1), n=4)
    C = assemble_advection(g, 0)
    x = g.node_coords()
    one = np.ones(g.n_nodes)
    # int d_1(x1) * 1 = 1 and int d_1(1) * phi = 0
    assert one @ C @ x[:, 0] == pytest.approx(1.0, rel=1e-13)
    assert np.abs(C @ one).max() < 1e-14


def test_load_of_constant(grid):
    mesh = grid.mesh()
    f = assemble_load(mesh, np.ones((mesh.n_elements, 4)))
    assert f.sum() == pytest.approx(8 / 9, rel=1e-13)


def test_coefficient_checks(hole_cell):
    bad = np.zeros((12, 12, 2, 2))
    bad[..., 0, 0] = bad[..., 1, 1] = 1.0
    bad[0, 0, 0, 1] = 0.5
    with pytest.raises((AssemblyError, ParameterError)):
        CoefficientField(bad).check(0.1, 10)
    with pytest.raises((AssemblyError, ParameterError)):
        CoefficientField.constant(np.diag([0.01, 1.0]), 12).check(0.1, 10)


def _spd(n, seed):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=0.1, random_state=rng)
    return (A @ A.T + n * sp.eye(n)).tocsr()


@settings(max_examples=15, deadline=None)
@given(st.integers(5, 60), st.integers(0, 10 ** 6))
def test_pcg_matches_direct_solve(n, seed):
    A = _spd(n, seed)
    b = np.random.default_rng(seed + 1).standard_normal(n)
    r = pcg(A, b, tol=1e-12)
    assert np.allclose(r.x, spsolve(A.tocsc(), b), atol=1e-9)
    assert r.residual <= 1e-11


def test_pcg_columns_and_failures():
    A = _spd(30, 3)
    B = np.random.default_rng(0).standard_normal((30, 3))
    X = pcg(A, B, tol=1e-12).x
    assert np.allclose(A @ X, B, atol=1e-9)
    with pytest.raises(SolverError):
        pcg(A, B[:, 0], tol=1e-14, max_iter=1)
    with pytest.raises(SolverError):
        pcg(sp.diags([1.0, -1.0]).tocsr(), np.ones(2))


def test_pcg_neumann_mode(grid):
    K = assemble_stiffness(grid) + 0 * sp.eye(grid.n_nodes)
    M = assemble_mass(grid)
    f = M @ np.cos(np.pi * grid.node_coords()[:, 0])
    f = f - f.mean()
    r = pcg(K.tocsr(), f, tol=1e-10, constant_null=True)
    assert abs(r.x.mean()) < 1e-12
    assert np.linalg.norm(K @ r.x - f) <= 1e-8 * np.linalg.norm(f)


def test_dump_coo_sorted():
    text = dump_coo(sp.csr_matrix(np.array([[0.0, 2.0], [1.0, 0.0]])))
    assert text == "0 1 2\n1 0 1\n"
