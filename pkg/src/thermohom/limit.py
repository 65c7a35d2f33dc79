"""Time integration of the two-scale limit system.

The macroscopic concentration lives on a full Q1 grid of the domain.  The
cell temperature is one periodic micro field per macro cell of a
:class:`TwoScaleIndex`; all of them share one matrix, which is factored once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import json

import numpy as np
from scipy import linalg

from .cell import EffectiveTensor, boundary_average, evaluate_corrector
from .errors import ParameterError, SolverError
from .fem import (CoefficientField, assemble_advection, assemble_mass, assemble_robin_boundary,
                  assemble_stiffness, lump, pcg)
from .geometry import CellGeometry, MacroGrid, TwoScaleIndex
from .operators import Mollifier, TwoScaleField, mollified_gradient
from .presets import Reaction, Source

DRIFT_WEIGHTS = ("volume_fraction", "unit")


def periodic_coords(cell: CellGeometry) -> np.ndarray:
    """A representative closed-grid coordinate for every periodic micro node."""
    pid = cell.periodic_id
    first = np.full(cell.n_periodic, -1)
    first[pid[::-1]] = np.arange(pid.size)[::-1]
    return cell.micro_coords[first]


@dataclass(eq=False)
class LimitProblem:
    index: TwoScaleIndex
    u_grid: MacroGrid
    tensor: EffectiveTensor
    K: CoefficientField
    mu: float
    a: float
    b: float
    g: float
    reaction: Reaction
    source: Source
    mollifier: Mollifier
    u0: np.ndarray          # nodes of u_grid
    Theta0: np.ndarray      # (n_macro_cells, n_periodic)
    T: float
    dt: float
    sign: int = 1
    drift_weight: str = "volume_fraction"
    n_snapshots: int = 20
    tol: float = 1e-10
    lumped: bool = True

    def __post_init__(self):
        for name in ("mu", "a", "b", "g"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative")
        if self.sign not in (1, -1):
            raise ParameterError("sign of the boundary exchange must be +1 or -1")
        if self.drift_weight not in DRIFT_WEIGHTS:
            raise ParameterError(f"drift_weight must be one of {DRIFT_WEIGHTS}")
        if self.u_grid.n % self.index.n_macro:
            raise ParameterError("the u grid must refine the macro cells of the two-scale index")
        n_steps = self.T / self.dt
        if abs(n_steps - round(n_steps)) > 1e-9 * n_steps or round(n_steps) % self.n_snapshots:
            raise ParameterError("T/dt must be an integer multiple of the snapshot count")
        self.u0 = np.asarray(self.u0, dtype=float)
        self.Theta0 = np.asarray(self.Theta0, dtype=float)
        if self.u0.shape != (self.u_grid.n_nodes,):
            raise ParameterError("u0 does not match the macro grid")
        if self.Theta0.shape != (self.index.n_macro_cells, self.cell.n_periodic):
            raise ParameterError("Theta0 does not match the two-scale index")

    @property
    def cell(self) -> CellGeometry:
        return self.index.cell

    @property
    def ratio(self) -> float:
        """``|dT| / |Y*|`` from the geometry."""
        return self.cell.perimeter / self.cell.volume

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def cadence(self) -> int:
        return self.n_steps // self.n_snapshots

    @property
    def drift_factor(self) -> float:
        return self.cell.volume if self.drift_weight == "volume_fraction" else 1.0

    @cached_property
    def system(self) -> "LimitSystem":
        return LimitSystem(self)

    def v0(self, t: float) -> np.ndarray:
        return boundary_average(self.source, t, self.u_grid.node_coords(), self.cell)


class LimitSystem:
    def __init__(self, p: LimitProblem):
        cell, dt = p.cell, p.dt
        vol, per = cell.volume, cell.perimeter
        pm = cell.mesh(periodic=True)
        self.Mu, self.MY = assemble_mass(p.u_grid), assemble_mass(pm)
        BY = assemble_robin_boundary(pm, p.g)
        if p.lumped:
            self.Mu, self.MY, BY = lump(self.Mu), lump(self.MY), lump(BY)
        self.Au = (vol * self.Mu + dt * assemble_stiffness(p.u_grid, p.tensor.d_eff)).tocsr()
        A = (self.MY + dt * (assemble_stiffness(pm, p.K) + BY)).tocsr()
        self.cho = linalg.cho_factor(A.toarray())
        self.AY = A
        self.C = [assemble_advection(pm, j) for j in range(cell.dim)]
        self.exchange = p.sign * per


@dataclass
class LimitStepInfo:
    iterations_u: int
    residual_u: float
    residual_theta: float


def drift_field(problem: LimitProblem, u: np.ndarray) -> np.ndarray:
    """``w(x_c) = weight * grad^delta u(x_c)`` at the macro cell centers."""
    p = problem
    g = mollified_gradient(u, p.u_grid, p.mollifier)
    return p.drift_factor * p.u_grid.interpolate(g, p.index.centers)


def step_limit(problem: LimitProblem, u: np.ndarray, Theta: np.ndarray, t: float) -> tuple:
    """One IMEX step of the limit system; returns ``(u_new, Theta_new, LimitStepInfo)``."""
    p, s = problem, problem.system
    dt, vol = p.dt, p.cell.volume
    rhs = s.Mu @ (vol * (u + dt * p.reaction(u)))
    if s.exchange != 0 and (p.a != 0 or p.b != 0):
        rhs += (dt * s.exchange) * (s.Mu @ (p.a * u + p.b * p.v0(t)))
    r = pcg(s.Au, rhs, tol=p.tol, x0=u)
    rhs_t = (s.MY @ Theta.T)
    if p.mu != 0:
        w = drift_field(p, u)
        for j, C in enumerate(s.C):
            rhs_t += (dt * p.mu) * (C @ Theta.T) * w[:, j]
    new = linalg.cho_solve(s.cho, rhs_t)
    bad = ~np.isfinite(new).all(axis=0)
    if bad.any():
        raise SolverError(f"cell temperature solve failed at macro node {int(np.argmax(bad))}")
    res = np.linalg.norm(s.AY @ new - rhs_t, axis=0) / np.maximum(np.linalg.norm(rhs_t, axis=0), 1e-300)
    return r.x, new.T, LimitStepInfo(r.iterations, r.residual, float(res.max()))


@dataclass
class LimitTrajectory:
    problem: LimitProblem
    times: list = field(default_factory=list)
    u: list = field(default_factory=list)
    Theta: list = field(default_factory=list)     # periodic nodes
    U: list = field(default_factory=list)         # TwoScaleField correctors
    diagnostics: list = field(default_factory=list)

    def theta_closed(self, k: int) -> np.ndarray:
        return self.problem.cell.expand_periodic(self.Theta[k])

    def u_centers(self, k: int) -> np.ndarray:
        p = self.problem
        return p.u_grid.interpolate(self.u[k], p.index.centers)

    def grad_u_centers(self, k: int) -> np.ndarray:
        p = self.problem
        return p.u_grid.interpolate(p.u_grid.gradient(self.u[k]), p.index.centers)

    def diagnostics_jsonl(self) -> str:
        return "".join(json.dumps(d, sort_keys=True) + "\n" for d in self.diagnostics)

    def snapshot_csv(self, k: int) -> str:
        x = self.problem.u_grid.node_coords()
        lines = ["x1,x2,u"]
        lines += [f"{x[i, 0]:.12g},{x[i, 1]:.12g},{self.u[k][i]:.17g}" for i in range(x.shape[0])]
        return "\n".join(lines) + "\n"


def _diag(step_idx, t, u, Theta, p, info=None):
    s = p.system
    wY = np.asarray(s.MY.sum(axis=0)).ravel()
    d = {"step": step_idx, "t": round(t, 12), "u_min": float(u.min()), "u_max": float(u.max()),
         "Theta_min": float(Theta.min()), "Theta_max": float(Theta.max()),
         "u_mass": float(np.asarray(s.Mu.sum(axis=0)).ravel() @ u),
         "Theta_mass": float(p.index.macro_weight * (Theta @ wY).sum())}
    if info is not None:
        d.update(iterations_u=info.iterations_u, residual_u=info.residual_u,
                 residual_theta=info.residual_theta)
    return d


def run_limit(problem: LimitProblem) -> LimitTrajectory:
    p = problem
    traj = LimitTrajectory(problem=p)
    u, Theta = p.u0.copy(), p.Theta0.copy()

    def snap(t):
        traj.times.append(t)
        traj.u.append(u.copy())
        traj.Theta.append(Theta.copy())
        traj.U.append(evaluate_corrector(u, p.u_grid, p.tensor, p.index, time=t))

    snap(0.0)
    traj.diagnostics.append(_diag(0, 0.0, u, Theta, p))
    for k in range(p.n_steps):
        u, Theta, info = step_limit(p, u, Theta, k * p.dt)
        t1 = (k + 1) * p.dt
        traj.diagnostics.append(_diag(k + 1, t1, u, Theta, p, info))
        if (k + 1) % p.cadence == 0:
            snap(t1)
    return traj


def initial_limit_fields(u_grid: MacroGrid, index: TwoScaleIndex, initial) -> tuple:
    """``u0`` at the nodes of ``u_grid`` and ``Theta0(x_c, y)`` on the periodic micro nodes."""
    y = periodic_coords(index.cell)
    xc = index.centers
    X = np.repeat(xc, y.shape[0], axis=0)
    Y = np.tile(y, (xc.shape[0], 1))
    Theta0 = initial.theta0(X, Y).reshape(xc.shape[0], y.shape[0])
    return initial.u0(u_grid.node_coords()), Theta0
