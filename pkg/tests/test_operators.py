import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermohom.errors import ParameterError
from thermohom.geometry import MacroGrid, PerforatedGrid, TwoScaleIndex, cell_index
from thermohom.operators import (CellwiseField, Mollifier, TwoScaleField, admissible_delta, eps_norm, fold,
                                 folding_mismatch, gradient_fold, mollified_gradient, mollify,
                                 operator_algebra_suite, unfold, unfold_cellwise)


@pytest.fixture(scope="module")
def grid(hole_cell):
    return PerforatedGrid(cell=hole_cell, n=4, lengths=(1, 1))


def test_unfold_of_constant_integrates_to_measure(grid):
    T = unfold(np.full(grid.n_nodes, 2.0), grid)
    assert T.integral() == pytest.approx(2 * 8 / 9, rel=1e-13)



def test_fold_unfold_inverse_on_cellwise_data(grid):
    rng = np.random.default_rng(0)
    F = CellwiseField(grid, rng.standard_normal((grid.n_cells, grid.cell.n_micro)))
    U = unfold_cellwise(F)
    assert np.array_equal(fold(U, grid).values, F.values)


def test_fold_averages_over_macro_cells(hole_cell, grid):
    idx = TwoScaleIndex(cell=hole_cell, lengths=(1, 1), n_macro=8)
    y = hole_cell.micro_coords
    U = TwoScaleField(idx, np.outer(idx.centers[:, 0], np.ones(y.shape[0])))
    F = fold(U, grid).values
    # centers 1/16 and 3/16 average to 1/8 in the first eps-cell column
    assert F[0, 0] == pytest.approx(1 / 8)


def test_gradient_fold_recovers_nodal_field(grid):
    u = np.sin(3 * grid.node_coords()[:, 0]) + grid.node_coords()[:, 1] ** 2
    U = unfold(u, grid, cell_index(grid))
    assert np.abs(gradient_fold(U, grid, tol=1e-13) - u).max() < 1e-9


def test_folding_mismatch_vanishes_for_periodic_x_independent_field(hole_cell, grid):
    idx = TwoScaleIndex(cell=hole_cell, lengths=(1, 1), n_macro=4)
    y = hole_cell.micro_coords
    U = TwoScaleField(idx, np.tile(np.cos(2 * np.pi * y[:, 0]), (idx.n_macro_cells, 1)))
    e0, e1 = folding_mismatch(U, grid, tol=1e-13)
    assert e0 < 1e-9 and e1 < 1e-9


def test_eps_norm_of_constant(grid):
    assert eps_norm(np.ones(grid.n_nodes), grid) == pytest.approx(math.sqrt(8 / 9), rel=1e-13)


@pytest.mark.parametrize("form", ["scaled", "literal"])
def test_kernel_normalized_and_symmetric(form):
    m = Mollifier(0.25, form=form)
    h = 0.25 / 32
    k = m.kernel(h)
    assert k.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(k, k[::-1, ::-1]) and np.allclose(k, k.T)
    G = m.gradient_kernel(h)
    assert np.allclose(G[..., 0], -G[::-1, :, 0])
    # continuous normalization: int C * profile = 1 by the trapezoid rule on a fine grid
    hh = 0.25 / 400
    assert m.normalization * m.profile(m._offsets(hh)).sum() * hh ** 2 == pytest.approx(1.0, rel=1e-3)


def test_mollifier_rejects_bad_parameters():
    for kwargs in ({"delta": 0.0}, {"delta": 0.2, "form": "gaussian"}, {"delta": 0.2, "dim": 3}):
        with pytest.raises(ParameterError):
            Mollifier(**kwargs)
    assert admissible_delta(0.25, 1 / 16) and not admissible_delta(0.05, 1 / 4)
    with pytest.raises(ParameterError, match=r"delta > 2 eps diam\(Y\)"):
        Mollifier(0.05).check(0.25)


@pytest.mark.parametrize("form", ["scaled", "literal"])
def test_mollified_gradient_exact_for_linear_away_from_boundary(form):
    g = MacroGrid(lengths=(1, 1), n=40)
    x = g.node_coords()
    u = 1 + 2 * x[:, 0] - 3 * x[:, 1]
    moll = Mollifier(0.2, form=form)
    G = mollified_gradient(u, g, moll)
    interior = np.all((x > 0.2 + 1e-9) & (x < 0.8 - 1e-9), axis=1)
    # the sampled analytic gradient kernel carries a quadrature error of order 1e-6
    assert np.abs(G[interior] - [2.0, -3.0]).max() < 1e-5
    mu = mollify(u, g, moll)
    assert np.abs(mu[interior] - u[interior]).max() < 1e-10


def test_mollified_gradient_sees_zero_extension():
    g = MacroGrid(lengths=(1, 1), n=20)
    G = mollified_gradient(np.ones(g.n_nodes), g, Mollifier(0.2))
    x = g.node_coords()
    interior = np.all((x > 0.2 + 1e-9) & (x < 0.8 - 1e-9), axis=1)
    assert np.abs(G[interior]).max() < 1e-10
    # near x1 = 0 the extended field jumps up, so the gradient points inward
    edge = (np.abs(x[:, 0]) < 1e-12) & (np.abs(x[:, 1] - 0.5) < 1e-12)
    assert G[edge, 0][0] > 1.0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_unfolding_is_linear_and_multiplicative(seed):
    from thermohom.geometry import build_cell_geometry
    cell = build_cell_geometry(2, ("1/3", "2/3"), 6)
    grid = PerforatedGrid(cell=cell, n=2, lengths=(1, 1))
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, grid.n_nodes))
    a = rng.standard_normal()
    assert np.allclose(unfold(a * u + v, grid).values, a * unfold(u, grid).values + unfold(v, grid).values)
    assert np.array_equal(unfold(u * v, grid).values, unfold(u, grid).values * unfold(v, grid).values)


def test_operator_suite_records(small_cell):
    rec = operator_algebra_suite(small_cell, inverse_epsilons=(2,), seed=3)
    assert len(rec) == 9 and all(r["passed"] for r in rec)
