"""IMEX time integration of the coupled concentration/temperature system on the perforated domain."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import json
import math
import warnings

import numpy as np

from .errors import ParameterError, RunError
from .fem import (CoefficientField, assemble_load, assemble_mass, assemble_robin_boundary,
                  assemble_stiffness, gauss_gradients, gauss_values, grad_l2_norm, l2_norm, lump, pcg)
from .geometry import PerforatedGrid
from .operators import Mollifier, mollified_gradient
from .presets import Reaction, Source

TOL_POS = 1e-10
FATAL_NEG = -1e-6


def check_exponents(alpha: float, beta: float) -> list:
    """Validate the coupling exponents; returns warnings for accepted non-default values."""
    notes = []
    if alpha < 1:
        raise ParameterError(f"alpha = {alpha:g} is not meaningful, since the cross-diffusion term "
                             "is unbounded; alpha must be >= 1")
    if not (beta >= 1 or beta == 0):
        raise ParameterError(f"beta = {beta:g} is not admissible; beta must be >= 1 or exactly 0")
    if alpha != 1:
        notes.append(f"alpha = {alpha:g} differs from 1; the limit system is derived for alpha = beta = 1")
    if beta != 1:
        notes.append(f"beta = {beta:g} differs from 1; the limit system is derived for alpha = beta = 1")
    return notes


@dataclass(eq=False)
class MicroProblem:
    grid: PerforatedGrid
    D: CoefficientField
    K: CoefficientField
    tau: float
    mu: float
    a: float
    b: float
    g: float
    reaction: Reaction
    source: Source
    mollifier: Mollifier
    u0: np.ndarray
    theta0: np.ndarray
    T: float
    dt: float
    alpha: float = 1.0
    beta: float = 1.0
    n_snapshots: int = 20
    tol: float = 1e-10
    max_iter: int | None = None
    tol_pos: float = TOL_POS
    fatal_neg: float = FATAL_NEG
    strict_delta: bool = False
    lumped: bool = True

    def __post_init__(self):
        for name in ("tau", "mu", "a", "b", "g"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative")
        self.notes = check_exponents(self.alpha, self.beta)
        if not (self.dt > 0 and self.T > 0):
            raise ParameterError("T and dt must be positive")
        n_steps = self.T / self.dt
        if abs(n_steps - round(n_steps)) > 1e-9 * n_steps:
            raise ParameterError(f"T = {self.T:g} is not an integer multiple of dt = {self.dt:g}")
        if round(n_steps) % self.n_snapshots:
            raise ParameterError(f"{round(n_steps)} steps are not a multiple of {self.n_snapshots} snapshots")
        self.u0 = np.asarray(self.u0, dtype=float)
        self.theta0 = np.asarray(self.theta0, dtype=float)
        n = self.grid.n_nodes
        if self.u0.shape != (n,) or self.theta0.shape != (n,):
            raise ParameterError("initial fields do not match the grid")
        eps = self.grid.epsilon
        if not self.mollifier.delta > 2 * eps * self.grid.cell.diam:
            msg = (f"delta = {self.mollifier.delta:g} violates delta > 2 eps diam(Y) at eps = {eps:g}")
            if self.strict_delta:
                raise ParameterError(msg)
            self.notes.append(msg)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def cadence(self) -> int:
        return self.n_steps // self.n_snapshots

    @cached_property
    def system(self) -> "MicroSystem":
        return MicroSystem(self)

    @cached_property
    def boundary_points(self):
        grid = self.grid
        return grid.node_coords(), grid.node_cell_coords()

    def source_values(self, t: float) -> np.ndarray:
        """Nodal values of ``V(t, x, {x/eps})``; only pore-boundary nodes are ever used."""
        x, y = self.boundary_points
        return self.source(t, x, y)

    def stability_indicator(self) -> float:
        """``dt * C_delta ||theta0|| tau eps^alpha``-type size of the explicit coupling (recorded only)."""
        m = self.mollifier
        h = m.delta / m.points_per_delta
        c_delta = float(np.sqrt((m.gradient_kernel(h) ** 2).sum(axis=(0, 1)).max()) / h)
        eps = self.grid.epsilon
        nt = l2_norm(self.grid, self.theta0)
        nu = l2_norm(self.grid, self.u0)
        return self.dt * c_delta * max(self.tau * eps ** self.alpha * nt, self.mu * eps ** self.beta * nu)


class MicroSystem:
    """Matrices shared by all steps of one problem.

    With ``lumped`` set the time derivative and the Robin terms use row-sum
    lumped matrices, which makes the implicit operators M-matrices for the
    diagonal presets on square elements.
    """

    def __init__(self, p: MicroProblem):
        grid = p.grid
        eps, dt = grid.epsilon, p.dt
        self.mesh = grid.mesh()
        self.M = assemble_mass(grid)
        self.B = assemble_robin_boundary(grid, 1.0)      # includes the eps factor
        if p.lumped:
            self.M, self.B = lump(self.M), lump(self.B)
        self.Au = (self.M + dt * assemble_stiffness(grid, p.D) + (dt * p.a) * self.B).tocsr()
        self.Atheta = (self.M + (dt * eps ** 2) * assemble_stiffness(grid, p.K) + (dt * p.g) * self.B).tocsr()


@dataclass
class StepInfo:
    iterations_u: int
    iterations_theta: int
    residual_u: float
    residual_theta: float


def cross_load(grid: PerforatedGrid, mesh, f: np.ndarray, mollified: np.ndarray, scale: float) -> np.ndarray:
    """``scale * int grad f . m phi_i`` with ``m`` nodal, both evaluated at the Gauss points."""
    if scale == 0:
        return np.zeros(grid.n_nodes)
    gf = gauss_gradients(mesh, f)
    gm = gauss_values(mesh, mollified)
    return scale * assemble_load(mesh, (gf * gm).sum(axis=-1))


def step(problem: MicroProblem, u: np.ndarray, theta: np.ndarray, t: float,
         x0=None) -> tuple:
    """One IMEX step from ``t`` to ``t + dt``; returns ``(u_new, theta_new, StepInfo)``."""
    p, s = problem, problem.system
    grid, dt, eps = p.grid, p.dt, p.grid.epsilon
    delta_check = eps if p.strict_delta else None
    need_u = p.tau != 0
    need_t = p.mu != 0
    grad_theta = mollified_gradient(theta, grid, p.mollifier, epsilon=delta_check) if need_u else None
    grad_u = mollified_gradient(u, grid, p.mollifier, epsilon=delta_check) if need_t else None
    rhs_u = s.M @ (u + dt * p.reaction(u))
    if need_u:
        rhs_u += dt * cross_load(grid, s.mesh, u, grad_theta, p.tau * eps ** p.alpha)
    if p.b != 0:
        rhs_u -= (dt * p.b) * (s.B @ p.source_values(t))
    rhs_t = s.M @ theta
    if need_t:
        rhs_t += dt * cross_load(grid, s.mesh, theta, grad_u, p.mu * eps ** p.beta)
    x0u, x0t = (u, theta) if x0 is None else x0
    ru = pcg(s.Au, rhs_u, tol=p.tol, max_iter=p.max_iter, x0=x0u)
    rt = pcg(s.Atheta, rhs_t, tol=p.tol, max_iter=p.max_iter, x0=x0t)
    return ru.x, rt.x, StepInfo(ru.iterations, rt.iterations, ru.residual, rt.residual)


@dataclass
class MicroTrajectory:
    grid: PerforatedGrid
    times: list = field(default_factory=list)
    u: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def epsilon(self) -> float:
        return self.grid.epsilon

    def min_value(self) -> float:
        return min(min(d["u_min"], d["theta_min"]) for d in self.diagnostics)

    def max_value(self) -> float:
        return max(max(d["u_max"], d["theta_max"]) for d in self.diagnostics)

    def bound_norm(self) -> float:
        """``max_t ||u||_{H1} + eps max_t ||grad theta||`` over the snapshots."""
        return (max(d["u_h1"] for d in self._snapshot_norms())
                + self.epsilon * max(d["theta_grad"] for d in self._snapshot_norms()))

    def _snapshot_norms(self):
        if not hasattr(self, "_norms"):
            self._norms = [{"u_h1": math.hypot(l2_norm(self.grid, u), grad_l2_norm(self.grid, u)),
                            "theta_grad": grad_l2_norm(self.grid, th)}
                           for u, th in zip(self.u, self.theta)]
        return self._norms

    def diagnostics_jsonl(self) -> str:
        return "".join(json.dumps(d, sort_keys=True) + "\n" for d in self.diagnostics)

    def snapshot_csv(self, k: int) -> str:
        x = self.grid.node_coords()
        lines = ["x1,x2,u,theta"]
        for i in range(x.shape[0]):
            lines.append(f"{x[i, 0]:.12g},{x[i, 1]:.12g},{self.u[k][i]:.17g},{self.theta[k][i]:.17g}")
        return "\n".join(lines) + "\n"


def _diag(step_idx, t, u, theta, ones_m, info=None):
    d = {"step": step_idx, "t": round(t, 12), "u_min": float(u.min()), "u_max": float(u.max()),
         "theta_min": float(theta.min()), "theta_max": float(theta.max()),
         "u_mass": float(ones_m @ u), "theta_mass": float(ones_m @ theta)}
    if info is not None:
        d.update(iterations_u=info.iterations_u, iterations_theta=info.iterations_theta,
                 residual_u=info.residual_u, residual_theta=info.residual_theta)
    return d


def run(problem: MicroProblem, freeze_theta: bool = False) -> MicroTrajectory:
    """Integrate over ``[0, T]`` storing ``n_snapshots + 1`` equally spaced snapshots.

    With ``freeze_theta`` the temperature is held at its initial value.
    """
    p = problem
    traj = MicroTrajectory(grid=p.grid, notes=list(p.notes))
    for note in p.notes:
        warnings.warn(note, stacklevel=2)
    u, theta = p.u0.copy(), p.theta0.copy()
    M = np.asarray(p.system.M.sum(axis=0)).ravel()
    traj.times.append(0.0)
    traj.u.append(u.copy())
    traj.theta.append(theta.copy())
    traj.diagnostics.append(_diag(0, 0.0, u, theta, M))
    bound0 = max(float(u.max()), float(theta.max()))
    for k in range(p.n_steps):
        t = k * p.dt
        u_new, th_new, info = step(p, u, theta, t)
        if freeze_theta:
            th_new = theta
        u, theta = u_new, th_new
        t1 = (k + 1) * p.dt
        d = _diag(k + 1, t1, u, theta, M, info)
        d["sup_ratio"] = max(d["u_max"], d["theta_max"]) / bound0 if bound0 > 0 else 0.0
        low = min(d["u_min"], d["theta_min"])
        if low < p.fatal_neg:
            raise RunError(f"positivity lost at step {k + 1} (t = {t1:g}): min = {low:.3e}", step=k + 1)
        if low < -p.tol_pos:
            d["positivity_flag"] = True
            traj.flags.append({"step": k + 1, "t": t1, "min": low})
        traj.diagnostics.append(d)
        if (k + 1) % p.cadence == 0:
            traj.times.append(t1)
            traj.u.append(u.copy())
            traj.theta.append(theta.copy())
    return traj


def initial_fields(grid: PerforatedGrid, initial) -> tuple:
    """Restriction of ``u0`` and ``theta0(x) = Theta0(x, {x/eps})`` to the grid nodes."""
    x = grid.node_coords()
    y = grid.node_cell_coords()
    return initial.u0(x), initial.theta0(x, y)
