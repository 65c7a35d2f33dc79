import numpy as np
import pytest

from thermohom.cell import solve_cell_problems
from thermohom.errors import ParameterError
from thermohom.fem import assemble_stiffness
from thermohom.geometry import MacroGrid, TwoScaleIndex, build_cell_geometry
from thermohom.limit import LimitProblem, drift_field, initial_limit_fields, periodic_coords, run_limit, step_limit
from thermohom.operators import Mollifier
from thermohom.presets import coefficient, initial_data, reaction, source


@pytest.fixture(scope="module")
def cell():
    return build_cell_geometry(2, ("1/3", "2/3"), 6)


@pytest.fixture(scope="module")
def tensor(cell):
    return solve_cell_problems(cell)


def _problem(cell, tensor, **kw):
    index = TwoScaleIndex(cell=cell, lengths=(1, 1), n_macro=4)
    u_grid = MacroGrid(lengths=(1, 1), n=8)
    u0, Th0 = initial_limit_fields(u_grid, index, initial_data(kw.pop("initial", "default")))
    args = dict(index=index, u_grid=u_grid, tensor=tensor, K=coefficient("identity", cell.m), mu=1.0, a=1.0,
                b=0.5, g=1.0, reaction=reaction("logistic"), source=source("default"),
                mollifier=Mollifier(0.25), u0=u0, Theta0=Th0, T=0.01, dt=0.001, n_snapshots=5, tol=1e-13)
    args.update(kw)
    return LimitProblem(**args)


def test_periodic_coords_cover_classes(cell):
    y = periodic_coords(cell)
    assert y.shape == (cell.n_periodic, 2)
    assert np.all(y < 1)          # representatives live on the half-open cell


def test_step_against_dense_oracle(cell, tensor):
    p = _problem(cell, tensor)
    s = p.system
    u, Th = p.u0, p.Theta0
    dt, vol, per = p.dt, cell.volume, cell.perimeter
    M = s.Mu.toarray()
    A = vol * M + dt * assemble_stiffness(p.u_grid, tensor.d_eff).toarray()
    rhs = vol * M @ (u + dt * p.reaction(u)) + dt * per * (M @ (p.a * u + p.b * p.v0(0.0)))
    w = drift_field(p, u)
    rhs_t = s.MY.toarray() @ Th.T + dt * p.mu * sum((C.toarray() @ Th.T) * w[:, j] for j, C in enumerate(s.C))
    u1, Th1, info = step_limit(p, u, Th, 0.0)
    assert np.abs(u1 - np.linalg.solve(A, rhs)).max() < 1e-10
    assert np.abs(Th1.T - np.linalg.solve(s.AY.toarray(), rhs_t)).max() < 1e-10
    assert info.residual_theta < 1e-12


def test_exchange_sign_controls_mass(cell, tensor):
    for sign in (1, -1):
        p = _problem(cell, tensor, sign=sign, b=0.0, reaction=reaction("zero"))
        traj = run_limit(p)
        m = [d["u_mass"] for d in traj.diagnostics]
        factor = 1 + sign * p.dt * p.a * cell.perimeter / cell.volume
        assert np.allclose(np.array(m[1:]) / np.array(m[:-1]), factor, rtol=1e-10)


def test_decoupled_limit_conserves_mass(cell, tensor):
    p = _problem(cell, tensor, a=0.0, b=0.0, mu=0.0, g=0.0, reaction=reaction("zero"))
    traj = run_limit(p)
    m = [d["u_mass"] for d in traj.diagnostics]
    tm = [d["Theta_mass"] for d in traj.diagnostics]
    assert max(m) - min(m) < 1e-12 and max(tm) - min(tm) < 1e-12


def test_constant_temperature_without_exchange_stays(cell, tensor):
    p = _problem(cell, tensor, g=0.0, initial="constant")
    traj = run_limit(p)
    assert np.allclose(traj.Theta[-1], 1.0, atol=1e-12)
    assert traj.theta_closed(0).shape == (16, cell.n_micro)


def test_drift_weight_scales_drift(cell, tensor):
    a = drift_field(_problem(cell, tensor), _problem(cell, tensor).u0)
    b = drift_field(_problem(cell, tensor, drift_weight="unit"), _problem(cell, tensor).u0)
    assert np.allclose(a, cell.volume * b)


def test_snapshots_and_corrector(cell, tensor):
    traj = run_limit(_problem(cell, tensor))
    assert len(traj.times) == 6 and len(traj.U) == 6
    assert traj.u_centers(0).shape == (16,) and traj.grad_u_centers(0).shape == (16, 2)
    assert traj.snapshot_csv(1).startswith("x1,x2,u\n")


@pytest.mark.parametrize("kw", [{"sign": 0}, {"drift_weight": "x"}, {"mu": -1.0}, {"dt": 0.003}])
def test_validation(cell, tensor, kw):
    with pytest.raises(ParameterError):
        _problem(cell, tensor, **kw)


def test_no_hole_limit_runs(tensor):
    c = build_cell_geometry(2, None, 4)
    t = solve_cell_problems(c)
    traj = run_limit(_problem(c, t))
    assert np.all(np.isfinite(traj.u[-1]))


def test_zero_data_zero_trajectory(cell, tensor):
    traj = run_limit(_problem(cell, tensor, initial="zero", source=source("zero")))
    assert all(not u.any() for u in traj.u) and all(not th.any() for th in traj.Theta)


def test_theta_stays_within_initial_bounds(cell, tensor):
    p = _problem(cell, tensor)
    traj = run_limit(p)
    lo, hi = p.Theta0.min(), p.Theta0.max()
    assert all(th.min() >= -1e-10 and th.max() <= hi + 1e-12 for th in traj.Theta)
    assert lo > 0


def test_discrete_mass_balance(cell, tensor):
    # vol * (m1 - m0) = dt * (vol * int R(u0) + sign * per * int(a u0 + b v0))
    for sign in (1, -1):
        p = _problem(cell, tensor, sign=sign)
        s = p.system
        u0 = p.u0
        u1, _, _ = step_limit(p, u0, p.Theta0, 0.0)
        one = np.ones_like(u0)
        vol, per = cell.volume, cell.perimeter
        lhs = vol * one @ s.Mu @ (u1 - u0)
        rhs = p.dt * (vol * one @ s.Mu @ p.reaction(u0) + sign * per * one @ s.Mu @ (p.a * u0 + p.b * p.v0(0.0)))
        assert lhs == pytest.approx(rhs, rel=1e-10)
