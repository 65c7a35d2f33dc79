"""Error functionals between unfolded microscale runs and the limit system, rate fits and studies."""

from __future__ import annotations

from dataclasses import dataclass, field
import math
import time

import numpy as np

from .errors import FitError, PairingError
from .geometry import CellGeometry, MacroGrid, PerforatedGrid, TwoScaleIndex
from .operators import (Mollifier, TwoScaleField, fold, folding_mismatch, gradient_norm_sq, micro_gradient,
                        micro_mass, mollified_gradient, unfold, unfold_gradient, _quad)


# ---- error functional --------------------------------------------------------------------

@dataclass
class ErrorFunctional:
    epsilon: float
    e1: float
    e2: float
    e3: float
    e4: float
    series: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.e1 + self.e2 + self.e3 + self.e4

    def as_dict(self) -> dict:
        return {"epsilon": self.epsilon, "e1": self.e1, "e2": self.e2, "e3": self.e3, "e4": self.e4,
                "total": self.total}


def _l2(index: TwoScaleIndex, values: np.ndarray) -> float:
    return math.sqrt(max(_quad(values, micro_mass(index.cell), index.macro_weight), 0.0))


def _grad_l2(index: TwoScaleIndex, grads: np.ndarray) -> float:
    return math.sqrt(gradient_norm_sq(index.cell, grads, index.macro_weight))


def snapshot_errors(grid: PerforatedGrid, index: TwoScaleIndex, u_eps, theta_eps, u_c, grad_u_c,
                    U: np.ndarray, Theta: np.ndarray) -> tuple:
    """The four error norms at one time.

    ``u_c`` and ``grad_u_c`` are the limit concentration and its gradient at the
    macro cell centers, ``U`` the corrector and ``Theta`` the cell temperature on
    the closed micro grid, all indexed like ``index``.
    """
    cell = index.cell
    Tu = unfold(u_eps, grid, index).values
    e1 = _l2(index, Tu - np.asarray(u_c)[:, None])
    Tgu = unfold_gradient(u_eps, grid, index, scaled=False)
    ref = np.asarray(grad_u_c)[:, None, None, :] + micro_gradient(cell, U)
    e2 = _grad_l2(index, Tgu - ref)
    Tth = unfold(theta_eps, grid, index).values
    e3 = _l2(index, Tth - Theta)
    Tgt = unfold_gradient(theta_eps, grid, index, scaled=True)
    e4 = _grad_l2(index, Tgt - micro_gradient(cell, Theta))
    return e1, e2, e3, e4


def combine_errors(epsilon: float, times, per_snapshot) -> ErrorFunctional:
    """Max over snapshots for e1, e3; left-endpoint rectangles in time for e2, e4."""
    times = np.asarray(times, dtype=float)
    arr = np.asarray(per_snapshot, dtype=float).reshape(len(times), 4)
    if len(times) < 2:
        raise PairingError("at least two snapshots are needed")
    dts = np.diff(times)
    e2 = math.sqrt(float(dts @ arr[:-1, 1] ** 2))
    e4 = math.sqrt(float(dts @ arr[:-1, 3] ** 2))
    return ErrorFunctional(epsilon=epsilon, e1=float(arr[:, 0].max()), e2=e2, e3=float(arr[:, 2].max()), e4=e4,
                           series={"times": times.tolist(), "e1": arr[:, 0].tolist(), "e2": arr[:, 1].tolist(),
                                   "e3": arr[:, 2].tolist(), "e4": arr[:, 3].tolist()})


def error_functional(micro, limit, tensor=None) -> ErrorFunctional:
    """Compare a :class:`MicroTrajectory` with a :class:`LimitTrajectory` at their common snapshots."""
    index = limit.problem.index
    grid = micro.grid
    if grid.cell is not index.cell or tuple(grid.lengths) != tuple(index.lengths):
        raise PairingError("micro and limit runs use different cells or domains")
    if len(micro.times) != len(limit.times) or not np.allclose(micro.times, limit.times, rtol=0, atol=1e-12):
        raise PairingError(f"snapshot times differ ({len(micro.times)} vs {len(limit.times)} snapshots)")
    if index.n_macro % grid.n:
        raise PairingError(f"macro resolution {index.n_macro} does not refine epsilon = 1/{grid.n}")
    if tensor is not None and tensor is not limit.problem.tensor:
        raise PairingError("the limit run was computed with a different effective tensor")
    rows = []
    for k in range(len(micro.times)):
        rows.append(snapshot_errors(grid, index, micro.u[k], micro.theta[k], limit.u_centers(k),
                                    limit.grad_u_centers(k), limit.U[k].values, limit.theta_closed(k)))
    return combine_errors(grid.epsilon, micro.times, rows)


def initial_gap(grid: PerforatedGrid, u0_eps, theta0_eps, u0_c, Theta0, index: TwoScaleIndex) -> float:
    """``||T u0_eps - u0|| + ||T theta0_eps - Theta0||`` in ``L2(Omega x Y*)``."""
    Tu = unfold(u0_eps, grid, index).values
    Tt = unfold(theta0_eps, grid, index).values
    return _l2(index, Tu - np.asarray(u0_c)[:, None]) + _l2(index, Tt - Theta0)


# ---- rate fits --------------------------------------------------------------------------

@dataclass
class FitResult:
    slope: float
    intercept: float
    residual: float
    n_points: int
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "residual": self.residual,
                "n_points": self.n_points, "notes": list(self.notes)}


def fit_rate(points) -> FitResult:
    """Least-squares line through ``(log eps, log E)``; the residual is the RMS log deviation."""
    notes = []
    xs, ys = [], []
    for eps, err in points:
        if not err > 0 or not math.isfinite(err):
            notes.append(f"dropped point eps={eps:g} with E={err!r}")
            continue
        xs.append(math.log(eps))
        ys.append(math.log(err))
    if len(xs) < 3:
        raise FitError(f"{len(xs)} usable points, at least 3 are needed")
    x, y = np.array(xs), np.array(ys)
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    return FitResult(float(slope), float(intercept), float(math.sqrt(np.mean(resid ** 2))), len(xs), notes)


def try_fit(points) -> dict:
    try:
        return fit_rate(points).as_dict()
    except FitError as exc:
        return {"slope": None, "intercept": None, "residual": None, "n_points": len(points),
                "notes": [str(exc)]}


# ---- auxiliary suites -------------------------------------------------------------------

def lemma_fields(index: TwoScaleIndex):
    """Smooth test data: ``U = (1 + x1 x2)(1 + cos(2 pi y1)/2)`` and ``u = cos(pi x1) cos(pi x2)``."""
    xc = index.centers
    y = index.cell.micro_coords
    U = np.outer(1 + xc[:, 0] * xc[:, 1], 1 + 0.5 * np.cos(2 * np.pi * y[:, 0]))

    def u(x):
        return np.cos(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])
    return TwoScaleField(index, U), u


def lemma1_suite(cell: CellGeometry, inverse_epsilons, refine: int = 2) -> list:
    """``||T F U - U||`` and ``||T u - u||`` for every epsilon."""
    lengths = (1, 1)
    index = TwoScaleIndex(cell=cell, lengths=lengths, n_macro=max(inverse_epsilons) * refine)
    U, u = lemma_fields(index)
    uc = u(index.centers)
    rows = []
    for n in inverse_epsilons:
        grid = PerforatedGrid(cell=cell, n=n, lengths=lengths)
        F = fold(U, grid)
        TFU = F.values[index.cell_map(n)]
        err_fold = _l2(index, TFU - U.values)
        err_unf = _l2(index, unfold(u(grid.node_coords()), grid, index).values - uc[:, None])
        rows.append({"epsilon": 1.0 / n, "fold": err_fold, "unfold": err_unf, "lemma1": err_fold + err_unf})
    return rows


def theorem3_suite(cell: CellGeometry, inverse_epsilons, refine: int = 2, tol: float = 1e-10) -> list:
    """Folding mismatch ``||G U - F U|| + ||eps grad G U - F grad_y U||``."""
    index = TwoScaleIndex(cell=cell, lengths=(1, 1), n_macro=max(inverse_epsilons) * refine)
    U, _ = lemma_fields(index)
    rows = []
    for n in inverse_epsilons:
        grid = PerforatedGrid(cell=cell, n=n, lengths=(1, 1))
        e0, e1 = folding_mismatch(U, grid, tol=tol)
        rows.append({"epsilon": 1.0 / n, "value": e0, "gradient": e1, "theorem3": e0 + e1})
    return rows


def lemma2_suite(cell: CellGeometry, inverse_epsilons, delta: float = 0.25, chunk: int = 64,
                 form: str = "scaled") -> list:
    """``sup |grad^delta u(eps [x/eps] + eps y) - grad^delta u(x)|`` for ``u = cos(pi x1) cos(pi x2)``.

    The mollified gradient is computed once on a full reference grid fine
    enough to contain every epsilon-copy of the micro nodes.  The supremum is
    taken over the micro nodes ``y`` of the perforated cell and the nodes ``x``
    of the half-open epsilon-cell at micro resolution.
    """
    m = cell.m
    n_ref = max(inverse_epsilons) * m
    ref = MacroGrid(lengths=(1, 1), n=n_ref)
    xr = ref.node_coords()
    u = np.cos(np.pi * xr[:, 0]) * np.cos(np.pi * xr[:, 1])
    G = mollified_gradient(u, ref, Mollifier(delta, form=form)).reshape(ref.node_shape + (2,))
    ystar = cell.micro_nodes                                  # (n_micro, 2) in 0..m
    a = np.arange(m)
    xcell = np.stack(np.meshgrid(a, a, indexing="ij"), axis=-1).reshape(-1, 2)
    rows = []
    for n in inverse_epsilons:
        step = n_ref // (n * m)
        origins = np.argwhere(np.ones((n, n), dtype=bool)) * m * step
        worst = 0.0
        for s in range(0, origins.shape[0], chunk):
            o = origins[s:s + chunk, None, :]
            py = o + ystar[None] * step
            px = o + xcell[None] * step
            gy = G[py[..., 0], py[..., 1]]                    # (c, ny, 2)
            gx = G[px[..., 0], px[..., 1]]                    # (c, nx, 2)
            diff = np.linalg.norm(gy[:, :, None, :] - gx[:, None, :, :], axis=-1)
            worst = max(worst, float(diff.max()))
        rows.append({"epsilon": 1.0 / n, "lemma2": worst})
    return rows


def unfolding_rate_table(cell: CellGeometry, inverse_epsilons, delta: float = 0.25, refine: int = 2,
                         tol: float = 1e-10, form: str = "scaled") -> list:
    """Joined per-epsilon table of the Lemma-type errors."""
    l1 = lemma1_suite(cell, inverse_epsilons, refine)
    l2 = lemma2_suite(cell, inverse_epsilons, delta, form=form)
    t3 = theorem3_suite(cell, inverse_epsilons, refine, tol)
    return [{"epsilon": a["epsilon"], "lemma1": a["lemma1"], "lemma2": b["lemma2"], "theorem3": c["theorem3"]}
            for a, b, c in zip(l1, l2, t3)]


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0
