"""Run configuration: TOML ingestion, validation, canonical serialization and hashing."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
import hashlib
import json
import math
from pathlib import Path
import warnings

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .errors import ConfigError, ParameterError
from .geometry import build_cell_geometry, parse_epsilon
from . import presets


@dataclass
class GeometryConfig:
    dim: int = 2
    hole: list = field(default_factory=lambda: ["1/3", "2/3"])   # [] for no hole
    m: int = 12
    lengths: list = field(default_factory=lambda: [1, 1])


@dataclass
class PhysicsConfig:
    tau: float = 1.0
    mu: float = 1.0
    a: float = 1.0
    b: float = 0.5
    g: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    elliptic_lower: float = 0.1
    elliptic_upper: float = 10.0
    D: str = "identity"
    K: str = "identity"
    reaction: str = "logistic"
    source: str = "default"
    initial: str = "default"
    delta: float = 0.25
    mollifier_form: str = "scaled"
    sign_limit_exchange: int = 1
    limit_drift_weight: str = "volume_fraction"


@dataclass
class DiscretizationConfig:
    dt: float = 0.0          # 0 selects T/N with dt <= min(1e-3, h_min) and N a multiple of n_snapshots
    T: float = 0.1
    n_snapshots: int = 20
    tol: float = 1e-10
    max_iter: int = 0        # 0 selects the solver default
    u_refine: int = 4
    macro_refine: int = 1
    lemma_refine: int = 2
    mass_lumping: bool = True


@dataclass
class SweepConfig:
    epsilons: list = field(default_factory=lambda: ["1/4", "1/8", "1/16", "1/32"])


@dataclass
class FlagsConfig:
    deterministic: bool = False
    ambiguity_sweep: bool = True
    strict_delta: bool = False
    lemma_suites: bool = True
    output_dir: str = "runs"
    workers: int = 1


SECTIONS = {"geometry": GeometryConfig, "physics": PhysicsConfig, "discretization": DiscretizationConfig,
            "sweep": SweepConfig, "flags": FlagsConfig}
# keys that change where or how fast a run happens but not its results
HASH_EXCLUDED = {("flags", "output_dir"), ("flags", "workers")}


@dataclass
class RunConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    flags: FlagsConfig = field(default_factory=FlagsConfig)
    warnings: list = field(default_factory=list, compare=False, repr=False)

    # ---- derived quantities ------------------------------------------------------------
    @property
    def inverse_epsilons(self) -> list:
        return sorted({parse_epsilon(e) for e in self.sweep.epsilons})

    @property
    def hole_spec(self):
        return self.geometry.hole if self.geometry.hole else None

    def cell(self):
        return build_cell_geometry(self.geometry.dim, self.hole_spec, self.geometry.m)

    def time_step(self) -> float:
        if self.discretization.dt > 0:
            return self.discretization.dt
        h = 1.0 / (self.n_max * self.geometry.m)
        dis = self.discretization
        # smallest step count that is a multiple of the snapshot count and keeps dt <= min(1e-3, h)
        per_snapshot = math.ceil(dis.T / (min(1e-3, h) * dis.n_snapshots) - 1e-9)
        return dis.T / (per_snapshot * dis.n_snapshots)

    @property
    def n_max(self) -> int:
        return max(self.inverse_epsilons)

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def result_dict(self) -> dict:
        """The configuration without the keys that cannot influence results."""
        d = self.to_dict()
        for sec, key in HASH_EXCLUDED:
            d[sec].pop(key, None)
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.result_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _coerce(section: str, key: str, value, default):
    where = f"[{section}] {key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list")
        return list(value)
    return value


def from_dict(data: dict) -> RunConfig:
    """Build and validate a config; missing keys take defaults, unknown keys are rejected."""
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    parts = {}
    for name, cls in SECTIONS.items():
        section = data.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"[{name}] must be a table")
        default = cls()
        known = {f.name for f in fields(cls)}
        bad = set(section) - known
        if bad:
            raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(bad))}")
        kwargs = {k: _coerce(name, k, v, getattr(default, k)) for k, v in section.items()}
        parts[name] = cls(**kwargs)
    cfg = RunConfig(**parts)
    validate(cfg)
    return cfg


def _fraction_str(value) -> str:
    if isinstance(value, str):
        return value.strip()
    return str(Fraction(value).limit_denominator(10 ** 6))


def validate(cfg: RunConfig) -> None:
    """Check every standing assumption; accepted-but-unusual values are recorded in ``cfg.warnings``."""
    notes = []
    geo, phy, dis, sw, fl = cfg.geometry, cfg.physics, cfg.discretization, cfg.sweep, cfg.flags
    if geo.dim != 2:
        raise ConfigError("only dim = 2 is implemented")
    if len(geo.lengths) != geo.dim or any(not isinstance(l, int) or l < 1 for l in geo.lengths):
        raise ConfigError("[geometry] lengths must be positive integers, one per dimension")
    geo.hole = [_fraction_str(v) for v in geo.hole]
    if geo.hole and len(geo.hole) != 2:
        raise ConfigError("[geometry] hole must be [] or a pair [lo, hi] applied in every direction")
    try:
        cell = cfg.cell()
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
    except Exception as exc:
        raise ConfigError(f"invalid geometry: {exc}") from exc
    for name in ("tau", "mu", "a", "b", "g"):
        if getattr(phy, name) < 0:
            raise ConfigError(f"[physics] {name} must be nonnegative (the coupling constants are nonnegative)")
    if phy.alpha < 1:
        raise ConfigError(f"[physics] alpha = {phy.alpha:g} is not meaningful, since the cross-diffusion "
                          "term is unbounded; alpha must be >= 1")
    if not (phy.beta >= 1 or phy.beta == 0):
        raise ConfigError(f"[physics] beta = {phy.beta:g} is not admissible; beta must be >= 1 or exactly 0")
    if phy.alpha != 1 or phy.beta != 1:
        notes.append(f"alpha = {phy.alpha:g}, beta = {phy.beta:g}: only alpha = beta = 1 has a limit "
                     "system here; the a-priori bounds still hold")
    if not 0 < phy.elliptic_lower <= phy.elliptic_upper:
        raise ConfigError("[physics] ellipticity bounds must satisfy 0 < elliptic_lower <= elliptic_upper")
    for key in ("D", "K"):
        coeff = presets.coefficient(getattr(phy, key), geo.m)
        try:
            coeff.check(phy.elliptic_lower, phy.elliptic_upper)
        except ParameterError as exc:
            raise ConfigError(f"[physics] {key}: {exc} (uniform ellipticity)") from exc
    presets.reaction(phy.reaction)
    presets.source(phy.source)
    presets.initial_data(phy.initial)
    if phy.mollifier_form not in ("scaled", "literal"):
        raise ConfigError("[physics] mollifier_form must be 'scaled' or 'literal'")
    if phy.sign_limit_exchange not in (1, -1):
        raise ConfigError("[physics] sign_limit_exchange must be +1 or -1")
    if phy.limit_drift_weight not in ("volume_fraction", "unit"):
        raise ConfigError("[physics] limit_drift_weight must be 'volume_fraction' or 'unit'")
    if not sw.epsilons:
        raise ConfigError("[sweep] epsilons must not be empty")
    sw.epsilons = [_fraction_str(e) for e in sw.epsilons]
    try:
        inv = [parse_epsilon(e) for e in sw.epsilons]
    except ParameterError as exc:
        raise ConfigError(f"[sweep] {exc}") from exc
    if len(set(inv)) != len(inv):
        raise ConfigError("[sweep] duplicate epsilon values")
    if not phy.delta > 0:
        raise ConfigError("[physics] delta must be positive")
    bound = [2.0 * cell.diam / n for n in inv]
    bad = [e for e, b in zip(sw.epsilons, bound) if not phy.delta > b]
    if len(bad) == len(inv) or (bad and fl.strict_delta):
        raise ConfigError(
            f"delta = {phy.delta:g} violates the standing assumption delta > 2 eps diam(Y) for eps in "
            f"{{{', '.join(bad)}}} (2 eps diam(Y) = {max(bound[i] for i, e in enumerate(sw.epsilons) if e in bad):.6g})")
    for e in bad:
        notes.append(f"delta = {phy.delta:g} violates delta > 2 eps diam(Y) at eps = {e}; run kept with a warning")
    if not (dis.T > 0 and dis.dt >= 0 and dis.n_snapshots >= 1 and dis.tol > 0 and dis.max_iter >= 0):
        raise ConfigError("[discretization] T, tol must be positive; dt, max_iter nonnegative; n_snapshots >= 1")
    if min(dis.u_refine, dis.macro_refine, dis.lemma_refine) < 1:
        raise ConfigError("[discretization] refinement factors must be >= 1")
    dt = cfg.time_step()
    steps = dis.T / dt
    if abs(steps - round(steps)) > 1e-9 * steps or round(steps) % dis.n_snapshots:
        raise ConfigError(f"T/dt = {steps:g} must be an integer multiple of n_snapshots = {dis.n_snapshots}")
    if fl.workers < 1:
        raise ConfigError("[flags] workers must be >= 1")
    cfg.warnings = notes
    for n in notes:
        warnings.warn(n, stacklevel=3)


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return from_dict(data)


def parse_config_text(text: str) -> RunConfig:
    try:
        return from_dict(tomllib.loads(text))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc


def with_sweep(cfg: RunConfig, epsilons) -> RunConfig:
    d = cfg.to_dict()
    d["sweep"]["epsilons"] = [_fraction_str(e) for e in epsilons]
    return from_dict(d)


def replace(cfg: RunConfig, **sections) -> RunConfig:
    """Copy of ``cfg`` with keys of the given sections overridden, e.g. ``physics={"tau": 0}``."""
    d = cfg.to_dict()
    for sec, values in sections.items():
        d[sec].update(values)
    return from_dict(d)
