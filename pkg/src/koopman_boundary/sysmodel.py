"""Autonomous vector fields ``x' = f(x)`` and the benchmark systems.

A :class:`SystemModel` bundles a vector field with its (optional) analytic
Jacobian and the parameter values it was built from.  Models are frozen
after construction, so they can be shared freely between workers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import ConfigError, NumericalDomainError, UnknownModelError

VectorField = Callable[[np.ndarray], np.ndarray]
JacobianField = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned box ``lower <= x <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ConfigError("box bounds have different lengths")
        if not np.all(lo < hi):
            raise ConfigError(f"box needs lower < upper componentwise, got {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, x) -> bool | np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = np.logical_and(x >= self.lower, x <= self.upper).all(axis=-1)
        return bool(inside) if inside.ndim == 0 else inside

    def margin(self, x) -> float:
        """Signed distance-like margin: positive inside, negative outside."""
        x = np.asarray(x, dtype=float)
        return float(min(np.min(x - self.lower), np.min(self.upper - x)))

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d) -> "DomainBox":
        return cls(np.asarray(d["lower"], float), np.asarray(d["upper"], float))


@dataclass(frozen=True)
class SystemModel:
    name: str
    dim: int
    f: VectorField
    jacobian: Optional[JacobianField] = None
    params: Mapping[str, float] = field(default_factory=dict)
    domain: Optional[DomainBox] = None

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ConfigError("model dimension must be positive")
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))

    def __call__(self, x):
        return eval_vector_field(self, x)


def _as_state(model: SystemModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dim,):
        raise ValueError(f"{model.name}: expected state of length {model.dim}, got shape {x.shape}")
    return x


def eval_vector_field(model: SystemModel, x) -> np.ndarray:
    x = _as_state(model, x)
    fx = np.asarray(model.f(x), dtype=float)
    if not np.all(np.isfinite(fx)):
        raise NumericalDomainError(f"{model.name}: vector field is not finite at {x}")
    return fx


def fd_jacobian(f: VectorField, x: np.ndarray) -> np.ndarray:
    """Central differences with step ``max(1e-6, 1e-6*|x_i|)``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    J = np.empty((n, n))
    for i in range(n):
        h = max(1e-6, 1e-6 * abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.asarray(f(xp), float) - np.asarray(f(xm), float)) / (2.0 * h)
    return J


def eval_jacobian(model: SystemModel, x) -> np.ndarray:
    x = _as_state(model, x)
    if model.jacobian is not None:
        J = np.asarray(model.jacobian(x), dtype=float)
    else:
        J = fd_jacobian(model.f, x)
    if not np.all(np.isfinite(J)):
        raise NumericalDomainError(f"{model.name}: Jacobian is not finite at {x}")
    return J


def linear_system(A, name: str = "linear") -> SystemModel:
    """``x' = A x``; handy as an exact reference for the nonlinear machinery."""
    A = np.array(A, dtype=float)
    A.setflags(write=False)
    n = A.shape[0]
    return SystemModel(name=name, dim=n, f=lambda x: A @ x, jacobian=lambda x: A.copy())


# --- benchmark systems -------------------------------------------------------

def _toggle_switch(p: Mapping[str, float]) -> SystemModel:
    a1, a2, b1, b2, e1, e2 = (p[k] for k in ("alpha1", "alpha2", "beta1", "beta2", "eta1", "eta2"))

    # Hill terms are undefined for negative concentrations; clamping at zero
    # keeps the field C^1 (beta > 1) when solver stages poke below the axis.
    def f(x):
        x1 = max(x[0], 0.0)
        x2 = max(x[1], 0.0)
        return np.array([a1 / (1.0 + x2**b1) - e1 * x[0],
                         a2 / (1.0 + x1**b2) - e2 * x[1]])

    def jac(x):
        x1 = max(x[0], 0.0)
        x2 = max(x[1], 0.0)
        d12 = -a1 * b1 * x2 ** (b1 - 1.0) / (1.0 + x2**b1) ** 2 if x2 > 0 else 0.0
        d21 = -a2 * b2 * x1 ** (b2 - 1.0) / (1.0 + x1**b2) ** 2 if x1 > 0 else 0.0
        return np.array([[-e1, d12], [d21, -e2]])

    return SystemModel("toggle_switch", 2, f, jac, p, DomainBox(np.zeros(2), np.full(2, 3.0)))


def _speed_control(p: Mapping[str, float]) -> SystemModel:
    kd, g = p["Kd"], p["g"]

    def f(x):
        x1, x2 = x
        return np.array([x2, -kd * x2 - x1 - g * x1 * x1 * (x2 / kd + x1 + 1.0)])

    def jac(x):
        x1, x2 = x
        return np.array([
            [0.0, 1.0],
            [-1.0 - g * (2.0 * x1 * (x2 / kd + x1 + 1.0) + x1 * x1), -kd - g * x1 * x1 / kd],
        ])

    return SystemModel("speed_control", 2, f, jac, p, DomainBox(-np.ones(2), np.ones(2)))


POWER_SEP = (0.02, 0.06)


def _power_pm(p: Mapping[str, float]) -> float:
    # mechanical input that makes (delta1, delta2) = POWER_SEP an exact rest point of omega2
    d1, d2 = POWER_SEP
    return p["alpha2"] * np.sin(d2) + p["beta2"] * np.sin(d2 - d1)


def _two_gen_power(p: Mapping[str, float], name: str) -> SystemModel:
    a1, a2, b1, b2, D1, D2, pm = (p[k] for k in ("alpha1", "alpha2", "beta1", "beta2", "D1", "D2", "Pm"))

    # state ordering (delta1, omega1, delta2, omega2)
    def f(x):
        d1, w1, d2, w2 = x
        s12 = np.sin(d1 - d2)
        return np.array([
            w1,
            -a1 * np.sin(d1) - b1 * s12 - D1 * w1,
            w2,
            -a2 * np.sin(d2) + b2 * s12 - D2 * w2 + pm,
        ])

    def jac(x):
        d1, _, d2, _ = x
        c12 = np.cos(d1 - d2)
        return np.array([
            [0.0, 1.0, 0.0, 0.0],
            [-a1 * np.cos(d1) - b1 * c12, -D1, b1 * c12, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [b2 * c12, 0.0, -a2 * np.cos(d2) - b2 * c12, -D2],
        ])

    box = DomainBox(np.array([-3.5, -1.0, -3.5, -1.0]), np.array([3.5, 1.0, 3.5, 1.0]))
    return SystemModel(name, 4, f, jac, p, box)


_DEFAULTS = {
    "toggle_switch": {"alpha1": 1.0, "alpha2": 1.0, "beta1": 3.55, "beta2": 3.53, "eta1": 0.5, "eta2": 0.5},
    "speed_control": {"Kd": 1.0, "g": 6.0},
    "two_gen_power": {"alpha1": 1.0, "alpha2": 0.5, "beta1": 0.5, "beta2": 0.5, "D1": 0.4, "D2": 0.5},
    "two_gen_power_fault": {"alpha1": 0.01, "alpha2": 0.01, "beta1": 0.05, "beta2": 0.001, "D1": 0.4, "D2": 0.5},
}

BUILTIN_NAMES = tuple(_DEFAULTS)


def builtin_system(name: str, overrides: Mapping[str, float] | None = None) -> SystemModel:
    """Build one of the benchmark systems with optional parameter overrides.

    ``two_gen_power`` derives ``Pm`` from the post-fault rest point
    (0.02, 0, 0.06, 0) unless ``Pm`` is overridden.  The fault variant keeps
    the mechanical input of the default post-fault system.
    """
    if name not in _DEFAULTS:
        raise UnknownModelError(f"unknown model {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    overrides = dict(overrides or {})
    params = dict(_DEFAULTS[name])
    allowed = set(params) | ({"Pm"} if name.startswith("two_gen_power") else set())
    unknown = set(overrides) - allowed
    if unknown:
        raise ConfigError(f"{name}: unknown parameter(s) {sorted(unknown)}")
    params.update({k: float(v) for k, v in overrides.items()})

    if name == "toggle_switch":
        return _toggle_switch(params)
    if name == "speed_control":
        return _speed_control(params)
    if "Pm" not in params:
        source = params if name == "two_gen_power" else _DEFAULTS["two_gen_power"]
        params["Pm"] = float(_power_pm(source))
    return _two_gen_power(params, name)
