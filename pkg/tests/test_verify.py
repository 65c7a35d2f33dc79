import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermohom.errors import FitError, PairingError
from thermohom.geometry import PerforatedGrid, TwoScaleIndex
from thermohom.operators import micro_mass
from thermohom.verify import (combine_errors, error_functional, fit_rate, initial_gap, lemma1_suite,
                              lemma2_suite, theorem3_suite, try_fit)


class FakeLimit:
    """Limit-side data given directly at the macro cell centers."""

    def __init__(self, index, times, u_c, Theta):
        self.problem = SimpleNamespace(index=index, tensor=None)
        self.times = list(times)
        self._u = u_c
        self._Theta = Theta
        self.U = [SimpleNamespace(values=np.zeros((index.n_macro_cells, index.cell.n_micro)))] * len(times)

    def u_centers(self, k):
        return np.full(self.problem.index.n_macro_cells, self._u)

    def grad_u_centers(self, k):
        return np.zeros((self.problem.index.n_macro_cells, 2))

    def theta_closed(self, k):
        return self._Theta


def _setup(hole_cell, n=4):
    grid = PerforatedGrid(cell=hole_cell, n=n, lengths=(1, 1))
    index = TwoScaleIndex(cell=hole_cell, lengths=(1, 1), n_macro=2 * n)
    phi = np.cos(2 * np.pi * hole_cell.micro_coords[:, 0])
    y = grid.node_cell_coords()
    theta_eps = np.cos(2 * np.pi * y[:, 0])
    times = [0.0, 0.05, 0.1]
    micro = SimpleNamespace(grid=grid, times=times, u=[np.full(grid.n_nodes, 0.7)] * 3, theta=[theta_eps] * 3)
    Theta = np.tile(phi, (index.n_macro_cells, 1))
    return grid, index, micro, Theta, times


def test_identical_fields_give_zero(hole_cell):
    grid, index, micro, Theta, times = _setup(hole_cell)
    ef = error_functional(micro, FakeLimit(index, times, 0.7, Theta))
    assert max(ef.e1, ef.e2, ef.e3, ef.e4) < 1e-13


def test_injected_discrepancy(hole_cell):
    grid, index, micro, Theta, times = _setup(hole_cell)
    c = 0.3
    s = np.sin(2 * np.pi * hole_cell.micro_coords[:, 0])
    ef = error_functional(micro, FakeLimit(index, times, 0.7, Theta + c * s))
    expected = c * math.sqrt(s @ (micro_mass(hole_cell) @ s))
    assert ef.e3 == pytest.approx(expected, rel=1e-10)
    assert ef.e1 < 1e-13
    # the Q1 interpolant approaches the closed form 1/2 - (1/3)(1/6 - sqrt(3)/(8 pi)) at second order in 1/m
    exact = math.sqrt(0.5 - (1 / 3) * (1 / 6 - math.sqrt(3) / (8 * math.pi)))
    assert ef.e3 / c == pytest.approx(exact, rel=3e-2)
    # discrepancy in u only shows up in e1
    ef2 = error_functional(micro, FakeLimit(index, times, 0.5, Theta))
    assert ef2.e1 == pytest.approx(0.2 * math.sqrt(hole_cell.volume), rel=1e-12)
    assert ef2.e3 < 1e-13


def test_pairing_errors(hole_cell):
    grid, index, micro, Theta, times = _setup(hole_cell)
    with pytest.raises(PairingError):
        error_functional(micro, FakeLimit(index, [0.0, 0.05], 0.7, Theta))
    bad_index = TwoScaleIndex(cell=hole_cell, lengths=(1, 1), n_macro=6)
    with pytest.raises(PairingError):
        error_functional(micro, FakeLimit(bad_index, times, 0.7, Theta))


def test_combine_errors_quadrature():
    rows = [(1, 2, 3, 4), (2, 1, 1, 0), (0, 5, 0, 7)]
    ef = combine_errors(0.25, [0.0, 0.1, 0.3], rows)
    assert ef.e1 == 2 and ef.e3 == 3
    assert ef.e2 == pytest.approx(math.sqrt(0.1 * 4 + 0.2 * 1))
    assert ef.e4 == pytest.approx(math.sqrt(0.1 * 16))
    assert ef.total == pytest.approx(ef.e1 + ef.e2 + ef.e3 + ef.e4)
    with pytest.raises(PairingError):
        combine_errors(0.25, [0.0], [(1, 1, 1, 1)])


def test_initial_gap_zero_data(hole_cell):
    grid, index, micro, Theta, times = _setup(hole_cell)
    z = np.zeros(grid.n_nodes)
    assert initial_gap(grid, z, z, np.zeros(index.n_macro_cells), 0 * Theta, index) == 0.0


def test_fit_exact_power_laws():
    eps = [1 / 4, 1 / 8, 1 / 16]
    assert fit_rate([(e, e) for e in eps]).slope == pytest.approx(1.0, abs=1e-12)
    assert fit_rate([(e, math.sqrt(e)) for e in eps]).slope == pytest.approx(0.5, abs=1e-12)
    rng = np.random.default_rng(7)
    noisy = [(e, 3 * e ** 0.7 * (1 + 0.01 * rng.standard_normal())) for e in eps + [1 / 32]]
    assert 0.6 <= fit_rate(noisy).slope <= 0.8


def test_fit_drops_zero_points():
    r = fit_rate([(0.5, 0.0), (0.25, 0.25), (0.125, 0.125), (0.0625, 0.0625)])
    assert r.n_points == 3 and r.notes
    with pytest.raises(FitError):
        fit_rate([(0.5, 0.0), (0.25, 0.25), (0.125, 0.125)])
    assert try_fit([(0.25, 1.0), (0.125, 0.5)])["slope"] is None


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 10.0), min_size=3, max_size=5), st.floats(1e-3, 1e3))
def test_fit_scale_invariance(values, c):
    pts = [(2.0 ** -(k + 2), v) for k, v in enumerate(values)]
    a, b = fit_rate(pts), fit_rate([(e, c * v) for e, v in pts])
    assert abs(a.slope - b.slope) < 1e-12
    assert b.intercept - a.intercept == pytest.approx(math.log(c), abs=1e-9)


def test_small_suites_decay(hole_cell):
    l1 = lemma1_suite(hole_cell, [4, 8])
    assert l1[1]["lemma1"] < l1[0]["lemma1"]
    t3 = theorem3_suite(hole_cell, [4, 8])
    assert t3[1]["theorem3"] < t3[0]["theorem3"]
    l2 = lemma2_suite(hole_cell, [4, 8])
    assert l2[1]["lemma2"] < l2[0]["lemma2"]
