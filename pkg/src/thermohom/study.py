"""The full convergence study: cell problem, limit runs, micro runs, error functionals and rate fits."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import datetime as _dt
import json
import math
from pathlib import Path
import time
import warnings

import numpy as np

from . import __version__, presets
from .cell import solve_cell_problems
from .config import RunConfig, from_dict
from .errors import StageError, ThermohomError
from .geometry import MacroGrid, PerforatedGrid, TwoScaleIndex
from .limit import LimitProblem, initial_limit_fields, run_limit
from .micro import MicroProblem, initial_fields, run
from .operators import Mollifier
from .verify import error_functional, initial_gap, try_fit, unfolding_rate_table

COMPONENTS = ("e1", "e2", "e3", "e4", "total")
LEMMA_SLOPES = {"lemma1": 0.9, "lemma2": 0.45, "theorem3": 0.9}


@dataclass
class ConvergenceReport:
    data: dict
    diagnostics: dict = field(default_factory=dict)   # name -> JSON-lines text

    @property
    def selected(self) -> dict:
        return self.data["studies"][self.data["selected_sign"]]

    def slope(self, component: str = "total", sign: str | None = None):
        study = self.data["studies"][sign or self.data["selected_sign"]]
        return study["fits"][component]["slope"]

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def errors_csv(self, sign: str | None = None) -> str:
        rows = self.data["studies"][sign or self.data["selected_sign"]]["errors"]
        lines = ["epsilon," + ",".join(COMPONENTS)]
        lines += [f"{r['epsilon']:.17g}," + ",".join(f"{r[c]:.17g}" for c in COMPONENTS) for r in rows]
        return "\n".join(lines) + "\n"

    def lemmas_csv(self) -> str:
        lem = self.data.get("lemmas")
        lines = ["epsilon,lemma1,lemma2,theorem3"]
        if lem:
            lines += [f"{r['epsilon']:.17g},{r['lemma1']:.17g},{r['lemma2']:.17g},{r['theorem3']:.17g}"
                      for r in lem["rows"]]
        return "\n".join(lines) + "\n"


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except (ThermohomError, ValueError, ArithmeticError) as exc:
                raise StageError(name, exc) from exc
        return inner
    return wrap


def _mollifier(cfg: RunConfig) -> Mollifier:
    return Mollifier(cfg.physics.delta, form=cfg.physics.mollifier_form)


def build_micro_problem(cfg: RunConfig, n: int, cell=None) -> MicroProblem:
    cell = cell or cfg.cell()
    phy, dis = cfg.physics, cfg.discretization
    grid = PerforatedGrid(cell=cell, n=n, lengths=tuple(cfg.geometry.lengths))
    init = presets.initial_data(phy.initial)
    u0, th0 = initial_fields(grid, init)
    return MicroProblem(
        grid=grid, D=presets.coefficient(phy.D, cell.m), K=presets.coefficient(phy.K, cell.m),
        tau=phy.tau, mu=phy.mu, a=phy.a, b=phy.b, g=phy.g, alpha=phy.alpha, beta=phy.beta,
        reaction=presets.reaction(phy.reaction), source=presets.source(phy.source),
        mollifier=_mollifier(cfg), u0=u0, theta0=th0, T=dis.T, dt=cfg.time_step(),
        n_snapshots=dis.n_snapshots, tol=dis.tol, max_iter=dis.max_iter or None,
        strict_delta=cfg.flags.strict_delta, lumped=dis.mass_lumping)


def build_limit_problem(cfg: RunConfig, tensor, sign: int, cell=None) -> LimitProblem:
    cell = cell or tensor.cell
    phy, dis = cfg.physics, cfg.discretization
    lengths = tuple(cfg.geometry.lengths)
    n_macro = cfg.n_max * dis.macro_refine
    index = TwoScaleIndex(cell=cell, lengths=lengths, n_macro=n_macro)
    u_grid = MacroGrid(lengths=lengths, n=n_macro * dis.u_refine)
    u0, Theta0 = initial_limit_fields(u_grid, index, presets.initial_data(phy.initial))
    return LimitProblem(
        index=index, u_grid=u_grid, tensor=tensor, K=presets.coefficient(phy.K, cell.m),
        mu=phy.mu, a=phy.a, b=phy.b, g=phy.g, reaction=presets.reaction(phy.reaction),
        source=presets.source(phy.source), mollifier=_mollifier(cfg), u0=u0, Theta0=Theta0,
        T=dis.T, dt=cfg.time_step(), sign=sign, drift_weight=phy.limit_drift_weight,
        n_snapshots=dis.n_snapshots, tol=dis.tol, lumped=dis.mass_lumping)


def _run_micro(cfg_dict: dict, n: int):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = from_dict(cfg_dict)
        problem = build_micro_problem(cfg, n)
        t0 = time.perf_counter()
        traj = run(problem)
    return traj, time.perf_counter() - t0


def _micro_summary(traj, problem) -> dict:
    return {"epsilon": problem.grid.epsilon, "n_nodes": problem.grid.n_nodes,
            "min": traj.min_value(), "max": traj.max_value(),
            "initial_max": float(max(problem.u0.max(), problem.theta0.max())),
            "bound_norm": traj.bound_norm(), "positivity_flags": len(traj.flags),
            "stability_indicator": problem.stability_indicator(), "notes": list(traj.notes)}


def run_study(cfg: RunConfig, log=None) -> ConvergenceReport:
    """Execute the full pipeline described by ``cfg`` and assemble the report."""
    say = log or (lambda msg: None)
    runtimes = {}
    diagnostics = {}
    t_start = time.perf_counter()
    cell = _stage("geometry")(cfg.cell)()
    phy, dis = cfg.physics, cfg.discretization

    t0 = time.perf_counter()
    tensor = _stage("cell")(solve_cell_problems)(cell, presets.coefficient(phy.D, cell.m))
    runtimes["cell"] = time.perf_counter() - t0
    say(f"d_eff = {tensor.d_eff.tolist()}")

    signs = [1, -1] if cfg.flags.ambiguity_sweep else [phy.sign_limit_exchange]
    limits = {}
    for s in signs:
        t0 = time.perf_counter()
        problem = _stage("limit")(build_limit_problem)(cfg, tensor, s, cell)
        limits[s] = _stage("limit")(run_limit)(problem)
        runtimes[f"limit{s:+d}"] = time.perf_counter() - t0
        diagnostics[f"limit_sign{s:+d}"] = limits[s].diagnostics_jsonl()
        say(f"limit run (sign {s:+d}) done")
    any_limit = limits[signs[0]]
    index = any_limit.problem.index

    errors = {s: [] for s in signs}
    micro_rows, gap_rows = [], []
    inv = cfg.inverse_epsilons
    cfg_dict = cfg.to_dict()
    if cfg.flags.workers > 1 and len(inv) > 1:
        with ProcessPoolExecutor(max_workers=cfg.flags.workers) as pool:
            futures = {n: pool.submit(_run_micro, cfg_dict, n) for n in inv}
            results = {n: f.result() for n, f in futures.items()}
    else:
        results = None
    u0c = any_limit.u_centers(0)
    Theta0 = any_limit.theta_closed(0)
    for n in inv:
        problem = _stage("micro")(build_micro_problem)(cfg, n, cell)
        if results is None:
            t0 = time.perf_counter()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                traj = _stage("micro")(run)(problem)
            runtimes[f"micro_1/{n}"] = time.perf_counter() - t0
        else:
            traj, rt = results[n]
            traj.grid = problem.grid
            runtimes[f"micro_1/{n}"] = rt
        say(f"micro run eps = 1/{n} done")
        diagnostics[f"micro_eps1_{n}"] = traj.diagnostics_jsonl()
        micro_rows.append(_micro_summary(traj, problem))
        for s in signs:
            ef = _stage("verify")(error_functional)(traj, limits[s], tensor)
            errors[s].append(ef.as_dict())
        gap_rows.append({"epsilon": 1.0 / n,
                         "gap": initial_gap(problem.grid, problem.u0, problem.theta0, u0c, Theta0, index)})
        del traj

    studies = {}
    for s in signs:
        rows = errors[s]
        fits = {c: try_fit([(r["epsilon"], r[c]) for r in rows]) for c in COMPONENTS}
        studies[f"{s:+d}"] = {"errors": rows, "fits": fits,
                              "prefactor": (math.exp(fits["total"]["intercept"])
                                            if fits["total"]["intercept"] is not None else None)}
    selected = _select(studies)

    notes = list(cfg.warnings)
    if len(inv) < 3:
        notes.append(f"only {len(inv)} epsilon values: rate fits need at least 3, no slopes reported")

    bounds = [r["bound_norm"] for r in micro_rows]
    data = {
        "version": __version__,
        "config": cfg.result_dict(),
        "config_hash": cfg.config_hash(),
        "warnings": notes,
        "time_step": cfg.time_step(),
        "snapshots": {"count": dis.n_snapshots + 1, "cadence": dis.T / dis.n_snapshots},
        "cell": {"d_eff": tensor.d_eff.tolist(), "volume": cell.volume, "perimeter": cell.perimeter,
                 "voigt_bound": tensor.voigt_bound().tolist(), "asymmetry": tensor.asymmetry,
                 "eigenvalues": tensor.eigenvalues().tolist()},
        "micro": micro_rows,
        "uniformity_ratio": max(bounds) / min(bounds),
        "studies": studies,
        "selected_sign": selected,
        "initial_gap": {"rows": gap_rows, "fit": try_fit([(r["epsilon"], r["gap"]) for r in gap_rows])},
        "lemmas": None,
    }
    if cfg.flags.lemma_suites:
        t0 = time.perf_counter()
        rows = _stage("lemmas")(unfolding_rate_table)(cell, inv, delta=phy.delta,
                                                      refine=dis.lemma_refine, tol=dis.tol,
                                                      form=phy.mollifier_form)
        data["lemmas"] = {"rows": rows,
                          "fits": {k: try_fit([(r["epsilon"], r[k]) for r in rows])
                                   for k in ("lemma1", "lemma2", "theorem3")}}
        runtimes["lemmas"] = time.perf_counter() - t0
    runtimes["total"] = time.perf_counter() - t_start
    if not cfg.flags.deterministic:
        data["runtimes"] = runtimes
    return ConvergenceReport(data=data, diagnostics=diagnostics)


def _select(studies: dict) -> str:
    """The sign whose total error converges faster (higher slope; smaller finest error on ties)."""
    def key(item):
        s, st = item
        slope = st["fits"]["total"]["slope"]
        finest = st["errors"][-1]["total"] if st["errors"] else math.inf
        return (-(slope if slope is not None else -math.inf), finest)
    return sorted(studies.items(), key=key)[0][0]


def make_run_dir(out_dir, config_hash: str, label: str = "study", stamp: str | None = None) -> Path:
    """A fresh directory ``<stamp>_<label>_<hash>`` under ``out_dir``; existing runs are never reused."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stamp = stamp or _dt.datetime.now().strftime("%Y%m%dT%H%M%S")
    base = f"{stamp}_{label}_{config_hash[:12]}"
    run_dir = out / base
    k = 1
    while run_dir.exists():
        run_dir = out / f"{base}_{k}"
        k += 1
    run_dir.mkdir()
    return run_dir


def write_outputs(report: ConvergenceReport, out_dir, stamp: str | None = None) -> Path:
    """Write the report, CSV tables and diagnostics into a fresh run directory."""
    run_dir = make_run_dir(out_dir, report.data["config_hash"], "study", stamp)
    (run_dir / "report.json").write_text(report.to_json())
    (run_dir / "errors.csv").write_text(report.errors_csv())
    for s in report.data["studies"]:
        (run_dir / f"errors_sign{s}.csv").write_text(report.errors_csv(s))
    (run_dir / "lemmas.csv").write_text(report.lemmas_csv())
    diag = run_dir / "diagnostics"
    diag.mkdir()
    for name, text in report.diagnostics.items():
        (diag / f"{name}.jsonl").write_text(text)
    return run_dir


def check_acceptance(report: ConvergenceReport, min_slope: float = 0.45) -> list:
    """``(name, passed, detail)`` for the study-level checks used by the command line."""
    d = report.data
    checks = []
    slope = report.slope("total")
    checks.append(("total error slope", slope is not None and slope >= min_slope, f"slope = {slope}"))
    for c in ("e1", "e2", "e3", "e4"):
        s = report.slope(c)
        checks.append((f"{c} decays", s is not None and s > 0, f"slope = {s}"))
    mn = min(r["min"] for r in d["micro"])
    checks.append(("micro nonnegativity", mn >= -1e-10, f"min = {mn:.3e}"))
    gap = d["initial_gap"]["fit"]["slope"]
    checks.append(("initial gap slope", gap is not None and gap >= min_slope, f"slope = {gap}"))
    ratio = d["uniformity_ratio"]
    checks.append(("a-priori bound uniformity", ratio <= 2.0, f"ratio = {ratio:.4f}"))
    if d["lemmas"]:
        for key, need in LEMMA_SLOPES.items():
            s = d["lemmas"]["fits"][key]["slope"]
            checks.append((f"{key} slope", s is not None and s >= need, f"slope = {s} (need {need})"))
    return checks


def summary_lines(report: ConvergenceReport) -> list:
    d = report.data
    lines = [f"config hash {d['config_hash'][:12]}  selected sign {d['selected_sign']}",
             f"d_eff = {np.array(d['cell']['d_eff']).round(6).tolist()}"]
    for s, st in d["studies"].items():
        f = st["fits"]["total"]
        lines.append(f"sign {s}: total slope {f['slope']}, residual {f['residual']}")
        for r in st["errors"]:
            lines.append("  eps={epsilon:.5g}  e1={e1:.4e} e2={e2:.4e} e3={e3:.4e} e4={e4:.4e} total={total:.4e}"
                         .format(**r))
    return lines
