"""Path-integral evaluation of the unstable principal Koopman eigenfunction.

For a type-one saddle ``x*`` with unstable eigenvalue ``lam`` and left
eigenvector ``w`` the eigenfunction splits into ``w.(x - x*) + h(x)``, and
``h`` is approximated by integrating the weighted nonlinear residual

    h(x) ~ int_0^{t(x)} exp(-lam*tau) * w.F_n(s_tau(x) - x*) dtau

until the trajectory enters a small neighbourhood ``U_0`` of the saddle.
Here ``U_0`` is the seed ellipsoid itself, so ``t(x)`` is its first entry
time and points inside ``U_0`` carry just the linear part.

Samples are produced the cheap way: seed points of ``U_0`` are flowed
backward once each, and a backward time ``sigma`` after the last exit from
``U_0`` (backward time ``sigma_e``) the value is

    w.(y - x*) + exp(-lam*(sigma - sigma_e)) * int_{sigma_e}^{sigma} exp(lam*(u - sigma_e)) w.F_n(y(u)) du

which is the forward formula rewritten with ``u = sigma - tau``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .equilibria import EquilibriumPoint, UnstableEigenpair
from .errors import ConfigError, EmptySampleSetError, PathIntegralError
from .integrate import (BACKWARD, DOMAIN_EXIT, EVENT, FORWARD, NUMERICAL_FAILURE, EventSpec,
                        IntegratorConfig, integrate, integrate_with_quadrature)
from .sysmodel import DomainBox, SystemModel

MAX_GROWTH_EXPONENT = 30.0


@dataclass(frozen=True)
class EllipsoidSeed:
    """``{x : (x - center)^T P (x - center) <= eps1}``."""

    center: np.ndarray
    P: np.ndarray
    eps1: float

    def quadratic(self, x) -> np.ndarray:
        d = np.asarray(x, float) - self.center
        return np.einsum("...i,ij,...j->...", d, self.P, d)

    def contains(self, x):
        return self.quadratic(x) <= self.eps1

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "P": self.P.tolist(), "eps1": self.eps1}

    @classmethod
    def from_dict(cls, d) -> "EllipsoidSeed":
        return cls(np.asarray(d["center"], float), np.asarray(d["P"], float), float(d["eps1"]))


@dataclass
class SampleSet:
    points: np.ndarray
    values: np.ndarray
    stop_times: np.ndarray
    seed_meta: EllipsoidSeed
    lambda_u: float
    w: np.ndarray
    rng_seed: int
    equilibrium: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, float))
        self.values = np.asarray(self.values, float).ravel()
        self.stop_times = np.asarray(self.stop_times, float).ravel()
        if not (len(self.points) == len(self.values) == len(self.stop_times)):
            raise ValueError("points, values and stop_times must have equal length")
        if len(self.values) == 0:
            raise EmptySampleSetError("sample set is empty")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sample values must be finite")
        if self.equilibrium is None:
            self.equilibrium = self.seed_meta.center

    def __len__(self):
        return len(self.values)

    @property
    def L(self) -> int:
        return len(self.values)

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.points[idx], self.values[idx], self.stop_times[idx], self.seed_meta,
                         self.lambda_u, self.w, self.rng_seed, self.equilibrium, dict(self.info))

    def to_csv(self, path) -> None:
        """Write ``x0..x{n-1},value,stop_time`` plus a ``.json`` sidecar next to it."""
        n = self.points.shape[1]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"x{i}" for i in range(n)] + ["value", "stop_time"])
            for p, v, s in zip(self.points, self.values, self.stop_times):
                wr.writerow([repr(float(c)) for c in p] + [repr(float(v)), repr(float(s))])
        meta = {
            "lambda_u": self.lambda_u,
            "w": self.w.tolist(),
            "equilibrium": np.asarray(self.equilibrium).tolist(),
            "seed": self.seed_meta.to_dict(),
            "rng_seed": int(self.rng_seed),
            "info": self.info,
        }
        with open(_sidecar(path), "w") as fh:
            json.dump(meta, fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_csv(cls, path) -> "SampleSet":
        with open(_sidecar(path)) as fh:
            meta = json.load(fh)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, :-2], data[:, -2], data[:, -1], EllipsoidSeed.from_dict(meta["seed"]),
                   float(meta["lambda_u"]), np.asarray(meta["w"], float), int(meta["rng_seed"]),
                   np.asarray(meta["equilibrium"], float), meta.get("info", {}))


def _sidecar(path) -> str:
    path = str(path)
    return (path[:-4] if path.endswith(".csv") else path) + ".json"


@dataclass(frozen=True)
class PathIntegralResult:
    value: float
    linear_part: float
    integral_part: float
    t_of_x: float
    converged: bool


def nonlinear_residual(model: SystemModel, eq: EquilibriumPoint, z) -> np.ndarray:
    """``F_n(z) = f(x* + z) - A z`` in coordinates centred on the equilibrium."""
    z = np.asarray(z, float)
    return np.asarray(model.f(eq.x_star + z), float) - eq.jacobian @ z


def seed_ellipsoid(eq: EquilibriumPoint, pair: UnstableEigenpair, eps1: float, aspect: float = 100.0,
                   scale: float = 1.0) -> EllipsoidSeed:
    """Ellipsoid around the saddle, ``sqrt(aspect)`` times thinner along ``w``.

    ``P = scale * (aspect * w w^T + (I - w w^T))``, so the half-width along
    the stable directions is ``sqrt(eps1 / scale)``.
    """
    if not eps1 > 0:
        raise ConfigError("eps1 must be positive")
    if not aspect >= 1:
        raise ConfigError("aspect must be >= 1")
    if not scale > 0:
        raise ConfigError("scale must be positive")
    w = pair.w / np.linalg.norm(pair.w)
    ww = np.outer(w, w)
    P = scale * (aspect * ww + (np.eye(w.size) - ww))
    return EllipsoidSeed(np.array(eq.x_star, float), P, float(eps1))


def sample_seed(seed: EllipsoidSeed, count: int, rng_seed: int) -> np.ndarray:
    """``count`` points uniformly distributed inside the ellipsoid."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    n = seed.center.size
    g = rng.standard_normal((count, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = rng.uniform(size=(count, 1)) ** (1.0 / n)
    ball = g * r
    # P/eps1 = R^T R, so x = c + R^{-1} b maps the unit ball onto the ellipsoid
    R = np.linalg.cholesky(seed.P / seed.eps1).T
    offsets = np.linalg.solve(R, ball.T).T
    return seed.center + offsets


def _projected_residual(model, eq, pair):
    xs, A, w = eq.x_star, eq.jacobian, pair.w
    wA = w @ A
    f = model.f

    def g(x):
        return float(w @ f(x) - wA @ (x - xs))

    return g


def eigenfunction_forward(model: SystemModel, eq: EquilibriumPoint, pair: UnstableEigenpair,
                          seed: EllipsoidSeed, x, cfg: IntegratorConfig | None = None) -> PathIntegralResult:
    """Evaluate the path-integral eigenfunction at ``x`` by flowing forward into ``U_0``."""
    cfg = cfg or IntegratorConfig(t_max=50.0)
    x = np.asarray(x, float)
    lin = float(pair.w @ (x - eq.x_star))
    if seed.contains(x):
        return PathIntegralResult(lin, lin, 0.0, 0.0, True)
    if pair.lambda_u * cfg.t_max > MAX_GROWTH_EXPONENT * 10:
        raise ConfigError("lambda_u * t_max too large for the forward path integral")

    g = _projected_residual(model, eq, pair)
    lam = pair.lambda_u

    def integrand(tau, y):
        return math.exp(-lam * tau) * g(y)

    traj, quad = integrate_with_quadrature(model, x, FORWARD, cfg, integrand, EventSpec.ellipsoid_entry(seed))
    if traj.terminated_by == NUMERICAL_FAILURE:
        raise PathIntegralError(f"integration failed at t={traj.final_time:.6g} from x={x}")
    integral = float(quad[-1])
    return PathIntegralResult(lin + integral, lin, integral, traj.final_time, traj.terminated_by == EVENT)


def _exit_event(seed):
    return EventSpec.zero_crossing(lambda x: float(seed.quadratic(x)) - seed.eps1, direction=1)


def backward_samples_from(model, eq, pair, seed, x0, T, box, stride, cfg):
    """Backward-propagate one seed point; returns (points, values, stop_times)."""
    xs, w, lam = eq.x_star, pair.w, pair.lambda_u
    g = _projected_residual(model, eq, pair)
    pts, vals, stops = [], [], []
    step_counter = 0

    def emit(y, v, s):
        nonlocal step_counter
        if step_counter % stride == 0 and box.contains(y):
            pts.append(y)
            vals.append(v)
            stops.append(s)
        step_counter += 1

    def integrand(tau, y):
        return math.exp(lam * tau) * g(y)

    sigma = 0.0
    y = np.asarray(x0, float)
    inside = bool(seed.contains(y))
    exit_ev, entry_ev, box_ev = _exit_event(seed), EventSpec.ellipsoid_entry(seed), EventSpec.domain_exit(box)
    while T - sigma > 1e-12:
        sub = cfg.replace(t_max=T - sigma)
        if inside:
            tr = integrate(model, y, BACKWARD, sub, [exit_ev, box_ev])
            for yk in tr.states[:-1] if tr.terminated_by == EVENT else tr.states:
                emit(yk, float(w @ (yk - xs)), 0.0)
        else:
            tr, quad = integrate_with_quadrature(model, y, BACKWARD, sub, integrand, [entry_ev, box_ev])
            upto = len(tr.times) - 1 if tr.terminated_by == EVENT else len(tr.times)
            for k in range(upto):
                yk, tk = tr.states[k], tr.times[k]
                emit(yk, float(w @ (yk - xs)) + math.exp(-lam * tk) * quad[k], float(tk))
        if tr.terminated_by != EVENT:
            break
        sigma += tr.final_time
        y = tr.final_state
        inside = not inside
    return pts, vals, stops


def generate_samples_backward(model: SystemModel, eq: EquilibriumPoint, pair: UnstableEigenpair,
                              seed: EllipsoidSeed, count: int, T: float, box: DomainBox, stride: int = 1,
                              cfg: IntegratorConfig | None = None, rng_seed: int = 0) -> SampleSet:
    """Sample the backward-reachable set of ``U_0`` over ``[0, T]`` with eigenfunction values.

    Every ``stride``-th accepted solver step inside ``box`` becomes a sample;
    trajectories stop at the first exit from ``box``.
    """
    if not T > 0:
        raise ConfigError("T must be positive")
    if count < 1 or stride < 1:
        raise ConfigError("count and stride must be >= 1")
    if pair.lambda_u * T > MAX_GROWTH_EXPONENT:
        raise ConfigError(f"lambda_u*T = {pair.lambda_u * T:.3g} exceeds {MAX_GROWTH_EXPONENT}: "
                          "the exp(lambda_u*u) weight of the backward quadrature would overflow precision")
    cfg = cfg or IntegratorConfig()
    seeds = sample_seed(seed, count, rng_seed)
    pts, vals, stops = [], [], []
    for x0 in seeds:
        p, v, s = backward_samples_from(model, eq, pair, seed, x0, T, box, stride, cfg)
        pts.extend(p)
        vals.extend(v)
        stops.extend(s)
    if not pts:
        raise EmptySampleSetError("no backward-propagated point landed inside the domain box")
    info = {"count": count, "T": T, "stride": stride, "box": box.to_dict(),
            "rel_tol": cfg.rel_tol, "abs_tol": cfg.abs_tol, "max_step": _finite_or_none(cfg.max_step)}
    return SampleSet(np.array(pts), np.array(vals), np.array(stops), seed, pair.lambda_u, pair.w.copy(),
                     int(rng_seed), np.array(eq.x_star, float), info)


def _finite_or_none(v):
    return None if math.isinf(v) else v
