"""Named coefficient, reaction, source and initial-data presets.

Configurations refer to data by name only, so every run is reproducible from
its config file and the package version.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Callable

import numpy as np

from .errors import ConfigError
from .fem import CoefficientField


# ---- diffusion and conductivity tensors ----------------------------------------------

def _smooth(points):
    y1, y2 = points[:, 0], points[:, 1]
    s = 1.0 + 0.5 * np.sin(2 * np.pi * y1) * np.sin(2 * np.pi * y2)
    out = np.zeros((points.shape[0], 2, 2))
    out[:, 0, 0] = 2.0 * s
    out[:, 1, 1] = s
    out[:, 0, 1] = out[:, 1, 0] = 0.25 * np.cos(2 * np.pi * y1) * s
    return out


COEFFICIENTS = {
    "identity": ("I", lambda m: CoefficientField.constant(np.eye(2), m, name="identity")),
    "diag21": ("diag(2, 1)", lambda m: CoefficientField.constant(np.diag([2.0, 1.0]), m, name="diag21")),
    "diag23": ("diag(2, 3)", lambda m: CoefficientField.constant(np.diag([2.0, 3.0]), m, name="diag23")),
    "smooth": ("(1 + sin(2 pi y1) sin(2 pi y2)/2) [[2, c/4], [c/4, 1]], c = cos(2 pi y1)",
               lambda m: CoefficientField.from_function(_smooth, m, name="smooth")),
}


def coefficient(name: str, m: int) -> CoefficientField:
    try:
        return COEFFICIENTS[name][1](m)
    except KeyError:
        raise ConfigError(f"unknown coefficient preset {name!r}; choose from {sorted(COEFFICIENTS)}") from None


# ---- reactions ---------------------------------------------------------------------

@dataclass(frozen=True)
class Reaction:
    """Scalar reaction with its global Lipschitz constant; vanishes for negative arguments."""

    name: str
    func: Callable
    lipschitz: float

    def __call__(self, s):
        return self.func(np.asarray(s, dtype=float))


def _logistic(s):
    # max(s, 0)(2 - s) up to s = 3, continued with the slope -4 it has there
    return np.where(s <= 0, 0.0, np.where(s <= 3.0, s * (2.0 - s), -3.0 - 4.0 * (s - 3.0)))


REACTIONS = {
    "logistic": Reaction("logistic", _logistic, 4.0),
    "zero": Reaction("zero", lambda s: np.zeros_like(s), 0.0),
    "linear": Reaction("linear", lambda s: np.maximum(s, 0.0), 1.0),
}


def reaction(name: str) -> Reaction:
    try:
        return REACTIONS[name]
    except KeyError:
        raise ConfigError(f"unknown reaction preset {name!r}; choose from {sorted(REACTIONS)}") from None


# ---- boundary source V(t, x, y) ------------------------------------------------------

@dataclass(frozen=True)
class Source:
    name: str
    func: Callable  # (t, x (N, d), y (N, d)) -> (N,)

    def __call__(self, t, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return np.broadcast_to(np.asarray(self.func(float(t), x, y), dtype=float),
                               (max(x.shape[0], y.shape[0]),)).copy()


SOURCES = {
    "default": Source("default", lambda t, x, y: (1.0 + x[:, 0]) * (1.0 + 0.5 * math.cos(2 * math.pi * t))),
    "zero": Source("zero", lambda t, x, y: np.zeros(x.shape[0])),
    "constant": Source("constant", lambda t, x, y: np.ones(x.shape[0])),
    "oscillating": Source("oscillating",
                          lambda t, x, y: (1.0 + x[:, 0]) * (1.0 + 0.5 * np.sin(2 * np.pi * y[:, 0]))),
}


def source(name: str) -> Source:
    try:
        return SOURCES[name]
    except KeyError:
        raise ConfigError(f"unknown source preset {name!r}; choose from {sorted(SOURCES)}") from None


# ---- initial data -------------------------------------------------------------------

def u0_default(x):
    x = np.atleast_2d(x)
    return 1.0 + 0.5 * np.cos(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])


def theta0_default(x, y):
    """``u0(x) (1 + cos(2 pi y1) cos(2 pi y2)/2) / 1.5``; Y-periodic, with values in ``[1/6, 1]``."""
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    return u0_default(x) * (1.0 + 0.5 * np.cos(2 * np.pi * y[:, 0]) * np.cos(2 * np.pi * y[:, 1])) / 1.5


@dataclass(frozen=True)
class InitialData:
    name: str
    u0: Callable       # x -> values
    theta0: Callable   # (x, y) -> values


INITIAL_DATA = {
    "default": InitialData("default", u0_default, theta0_default),
    "zero": InitialData("zero", lambda x: np.zeros(np.atleast_2d(x).shape[0]),
                        lambda x, y: np.zeros(np.atleast_2d(x).shape[0])),
    "constant": InitialData("constant", lambda x: np.ones(np.atleast_2d(x).shape[0]),
                            lambda x, y: np.ones(np.atleast_2d(x).shape[0])),
}


def initial_data(name: str) -> InitialData:
    try:
        return INITIAL_DATA[name]
    except KeyError:
        raise ConfigError(f"unknown initial-data preset {name!r}; choose from {sorted(INITIAL_DATA)}") from None


def listing() -> str:
    """Human-readable table of every preset."""
    lines = ["coefficients (D, K):"]
    lines += [f"  {k:<12} {v[0]}" for k, v in COEFFICIENTS.items()]
    lines.append("reactions:")
    lines += [f"  {k:<12} Lipschitz constant {v.lipschitz:g}" for k, v in REACTIONS.items()]
    lines.append("sources V(t, x, y):")
    lines += [f"  {k}" for k in SOURCES]
    lines.append("initial data:")
    lines += [f"  {k}" for k in INITIAL_DATA]
    return "\n".join(lines) + "\n"
