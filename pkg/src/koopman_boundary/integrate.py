"""Adaptive Dormand-Prince 5(4) integration of ``x' = f(x)``.

Backward flows are integrated as ``y' = -f(y)`` in positive internal time,
so every trajectory carries ascending ``times`` regardless of direction.
An optional scalar quadrature rides along as an extra state component,
which puts its error under the same step-size control as the state.

Events are detected on accepted steps by a sign change of a scalar
observable and then localized by bisection on the step length, each trial
being a fresh single step from the start of the bracketing step.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError
from .sysmodel import DomainBox, SystemModel

FORWARD = "forward"
BACKWARD = "backward"

T_MAX_REACHED = "t_max_reached"
EVENT = "event"
DOMAIN_EXIT = "domain_exit"
NUMERICAL_FAILURE = "numerical_failure"

# Dormand & Prince (1980) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

# PI controller constants (Hairer, Norsett & Wanner, DOPRI5 defaults)
_BETA = 0.04
_EXPO = 0.2 - 0.75 * _BETA
_SAFE = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 10.0


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = math.inf
    t_max: float = 10.0
    event_tol: float = 1e-10
    max_steps: int = 200_000

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "max_step", "t_max", "event_tol"):
            v = getattr(self, name)
            if not (v > 0) or math.isnan(v):
                raise ConfigError(f"IntegratorConfig.{name} must be > 0, got {v!r}")
        if math.isinf(self.t_max):
            raise ConfigError("IntegratorConfig.t_max must be finite")
        if self.max_steps < 1:
            raise ConfigError("IntegratorConfig.max_steps must be >= 1")

    def replace(self, **kw) -> "IntegratorConfig":
        d = dict(self.__dict__)
        d.update(kw)
        return IntegratorConfig(**d)


@dataclass(frozen=True)
class EventSpec:
    """Terminal event on a scalar function of the state.

    ``direction`` selects the crossing: ``-1`` fires when the observable goes
    from positive to non-positive, ``+1`` the reverse, ``0`` either way.
    Ellipsoid entry and domain exit are expressed through the same
    mechanism (``q(x) - eps1`` falling, box margin falling).
    """

    kind: str
    observable: Optional[Callable[[np.ndarray], float]] = None
    ellipsoid: object = None
    box: Optional[DomainBox] = None
    direction: int = 0

    def __post_init__(self):
        payloads = {"scalar_zero_crossing": self.observable, "ellipsoid_entry": self.ellipsoid,
                    "domain_exit": self.box}
        if self.kind not in payloads:
            raise ConfigError(f"unknown event kind {self.kind!r}")
        filled = [k for k, v in payloads.items() if v is not None]
        if filled != [self.kind]:
            raise ConfigError(f"event of kind {self.kind!r} needs exactly its own payload, got {filled}")
        if self.direction not in (-1, 0, 1):
            raise ConfigError("event direction must be -1, 0 or 1")
        if self.kind != "scalar_zero_crossing":
            object.__setattr__(self, "direction", -1)

    @classmethod
    def zero_crossing(cls, observable, direction: int = 0) -> "EventSpec":
        return cls("scalar_zero_crossing", observable=observable, direction=direction)

    @classmethod
    def ellipsoid_entry(cls, seed) -> "EventSpec":
        return cls("ellipsoid_entry", ellipsoid=seed)

    @classmethod
    def domain_exit(cls, box: DomainBox) -> "EventSpec":
        return cls("domain_exit", box=box)

    def value(self, x: np.ndarray) -> float:
        if self.kind == "scalar_zero_crossing":
            return float(self.observable(x))
        if self.kind == "ellipsoid_entry":
            e = self.ellipsoid
            d = x - e.center
            return float(d @ e.P @ d) - e.eps1
        return self.box.margin(x)

    def crossed(self, g0: float, g1: float) -> bool:
        if self.direction <= 0 and g0 > 0 and g1 <= 0:
            return True
        return self.direction >= 0 and g0 < 0 and g1 >= 0


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    terminated_by: str
    event_index: Optional[int] = None
    quad: Optional[np.ndarray] = None

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        header = ["t"] + [f"x{i}" for i in range(n)] + (["quad"] if self.quad is not None else [])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k, t in enumerate(self.times):
                row = [repr(float(t))] + [repr(float(v)) for v in self.states[k]]
                if self.quad is not None:
                    row.append(repr(float(self.quad[k])))
                w.writerow(row)


def _dp_step(rhs, t, y, h, k1):
    """One Dormand-Prince step; returns (y_new, error vector, k7) or None if non-finite."""
    ks = [k1]
    for i in range(1, 7):
        a = _A[i]
        yi = y + h * sum(a[j] * ks[j] for j in range(i) if a[j] != 0.0)
        ki = rhs(t + _C[i] * h, yi)
        if not np.all(np.isfinite(ki)):
            return None
        ks.append(ki)
    y_new = yi  # stage 7 is evaluated at the 5th order solution (FSAL)
    err = h * sum(_E[j] * ks[j] for j in range(7) if _E[j] != 0.0)
    return y_new, err, ks[6]


def _initial_step(rhs, t0, y0, f0, cfg, span):
    sc = cfg.abs_tol + cfg.rel_tol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / sc) ** 2))
    d1 = np.sqrt(np.mean((f0 / sc) ** 2))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, span, cfg.max_step)
    f1 = rhs(t0 + h0, y0 + h0 * f0)
    if not np.all(np.isfinite(f1)):
        return h0 * 1e-3
    d2 = np.sqrt(np.mean(((f1 - f0) / sc) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span, cfg.max_step)


def _solve(rhs, y0, n_state, cfg: IntegratorConfig, events: Sequence[EventSpec]):
    """Core adaptive loop over the (possibly augmented) state ``y``."""
    t = 0.0
    y = np.array(y0, dtype=float)
    times = [0.0]
    states = [y.copy()]

    for idx, ev in enumerate(events):
        if ev.kind == "domain_exit" and ev.value(y[:n_state]) < 0:
            return np.array(times), np.array(states), DOMAIN_EXIT, idx

    f0 = rhs(t, y)
    if not np.all(np.isfinite(f0)):
        return np.array(times), np.array(states), NUMERICAL_FAILURE, None
    gvals = [ev.value(y[:n_state]) for ev in events]
    h = _initial_step(rhs, t, y, f0, cfg, cfg.t_max)
    err_old = 1e-4
    rejected = False

    for _ in range(cfg.max_steps):
        if t >= cfg.t_max:
            return np.array(times), np.array(states), T_MAX_REACHED, None
        h = min(h, cfg.max_step)
        last = t + h >= cfg.t_max
        if last:
            h = cfg.t_max - t
        if h <= 16 * np.finfo(float).eps * max(1.0, abs(t)):
            return np.array(times), np.array(states), NUMERICAL_FAILURE, None

        out = _dp_step(rhs, t, y, h, f0)
        if out is None:
            h *= 0.25
            rejected = True
            continue
        y_new, err_vec, f_new = out
        sc = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        err = math.sqrt(float(np.mean((err_vec / sc) ** 2)))

        if err > 1.0:
            fac = max(_FAC_MIN, _SAFE * err ** (-_EXPO))
            h *= fac
            rejected = True
            continue

        # accepted step: look for events on [t, t + h]
        t_new = cfg.t_max if last else t + h
        g_new = [ev.value(y_new[:n_state]) for ev in events]
        hits = [i for i, ev in enumerate(events) if ev.crossed(gvals[i], g_new[i])]
        if hits:
            best = None
            for i in hits:
                theta, y_ev = _bisect_event(rhs, t, y, h, f0, y_new, events[i], gvals[i], n_state,
                                              cfg.event_tol)
                if best is None or theta < best[0]:
                    best = (theta, y_ev, i)
            theta, y_ev, i = best
            times.append(t + theta)
            states.append(y_ev)
            kind = DOMAIN_EXIT if events[i].kind == "domain_exit" else EVENT
            return np.array(times), np.array(states), kind, i

        t, y, f0, gvals = t_new, y_new, f_new, g_new
        times.append(t)
        states.append(y.copy())

        fac = err ** _EXPO / err_old ** _BETA / _SAFE if err > 0 else 1.0 / _FAC_MAX
        fac = min(1.0 / _FAC_MIN, max(1.0 / _FAC_MAX, fac))
        h_next = h / fac
        if rejected:
            h_next = min(h_next, h)
        err_old = max(err, 1e-4)
        rejected = False
        h = h_next

    return np.array(times), np.array(states), NUMERICAL_FAILURE, None


def _bisect_event(rhs, t, y, h, f0, y_full, ev, g0, n_state, tol):
    """Shrink [0, h] around the crossing; returns the state just past it."""
    lo, hi, y_hi = 0.0, h, y_full
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        out = _dp_step(rhs, t, y, mid, f0)
        if out is None:
            break
        if ev.crossed(g0, ev.value(out[0][:n_state])):
            hi, y_hi = mid, out[0]
        else:
            lo = mid
    return hi, y_hi


def _as_events(event) -> list:
    if event is None:
        return []
    if isinstance(event, EventSpec):
        return [event]
    return list(event)


def _signed_field(model: SystemModel, direction: str):
    if direction not in (FORWARD, BACKWARD):
        raise ConfigError(f"direction must be 'forward' or 'backward', got {direction!r}")
    f = model.f
    if direction == FORWARD:
        return f
    return lambda x: -np.asarray(f(x), dtype=float)


def integrate(model: SystemModel, x0, direction: str = FORWARD, config: IntegratorConfig | None = None,
              event=None) -> Trajectory:
    """Integrate the flow from ``x0`` for at most ``config.t_max``.

    ``event`` may be one :class:`EventSpec` or a sequence of them; the first
    to fire terminates the run and its index is stored on the trajectory.
    """
    cfg = config or IntegratorConfig()
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.dim,) or not np.all(np.isfinite(x0)):
        raise ValueError(f"x0 must be a finite vector of length {model.dim}")
    field = _signed_field(model, direction)

    def rhs(t, y):
        return np.asarray(field(y), dtype=float)

    times, states, how, idx = _solve(rhs, x0, model.dim, cfg, _as_events(event))
    return Trajectory(times, states, how, idx)


def integrate_with_quadrature(model: SystemModel, x0, direction: str, config: IntegratorConfig | None,
                              integrand: Callable[[float, np.ndarray], float], event=None
                              ) -> tuple[Trajectory, np.ndarray]:
    """As :func:`integrate`, plus ``quad[k] = int_0^{times[k]} integrand(tau, x(tau)) dtau``."""
    cfg = config or IntegratorConfig()
    x0 = np.asarray(x0, dtype=float)
    n = model.dim
    if x0.shape != (n,) or not np.all(np.isfinite(x0)):
        raise ValueError(f"x0 must be a finite vector of length {n}")
    field = _signed_field(model, direction)
    out = np.empty(n + 1)

    def rhs(t, y):
        x = y[:n]
        out[:n] = field(x)
        out[n] = integrand(t, x)
        return out.copy()

    times, states, how, idx = _solve(rhs, np.append(x0, 0.0), n, cfg, _as_events(event))
    quad = states[:, n].copy()
    traj = Trajectory(times, states[:, :n].copy(), how, idx, quad)
    return traj, quad


def flow(model: SystemModel, x0, t: float, config: IntegratorConfig | None = None) -> np.ndarray:
    """``s_t(x0)``; negative ``t`` flows backward."""
    x0 = np.asarray(x0, dtype=float)
    if t == 0:
        return x0.copy()
    cfg = (config or IntegratorConfig()).replace(t_max=abs(float(t)))
    traj = integrate(model, x0, FORWARD if t > 0 else BACKWARD, cfg)
    return traj.final_state
