"""Equilibrium search, classification and boundary membership.

Roots of ``f`` are found by Newton's method from a grid of seeds, merged,
polished and classified by the signs of the Jacobian eigenvalues.  For the
type-one points the unstable left eigenpair is extracted, and an
unstable-manifold shooting test decides whether a saddle sits on the
boundary of a given stable point's basin.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import NonHyperbolicError, NotTypeOneError, UnsupportedSpectrumError
from .integrate import FORWARD, EventSpec, IntegratorConfig, integrate
from .sysmodel import DomainBox, SystemModel, eval_jacobian

log = logging.getLogger(__name__)

STABLE = "stable"
TYPE_ONE = "type_one"
SOURCE = "source"
OTHER_UNSTABLE = "other_unstable"

HYPERBOLICITY_THRESHOLD = 1e-6


@dataclass(frozen=True)
class EquilibriumPoint:
    x_star: np.ndarray
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    classification: str
    residual: float

    @classmethod
    def from_point(cls, model: SystemModel, x, threshold: float = HYPERBOLICITY_THRESHOLD):
        """Linearize at ``x`` and classify; raises NonHyperbolicError."""
        x = np.asarray(x, dtype=float)
        A = eval_jacobian(model, x)
        ev = np.linalg.eigvals(A)
        ev = ev[np.lexsort((ev.imag, ev.real))]
        if np.min(np.abs(ev.real)) <= threshold:
            raise NonHyperbolicError(f"equilibrium at {x} has eigenvalue(s) near the imaginary axis: {ev}")
        return cls(x, A, ev, classify_spectrum(ev), float(np.linalg.norm(model.f(x))))

    @property
    def n_unstable(self) -> int:
        return int(np.sum(self.eigenvalues.real > 0))

    def to_dict(self) -> dict:
        return {
            "location": self.x_star.tolist(),
            "eigenvalues": [[float(e.real), float(e.imag)] for e in self.eigenvalues],
            "classification": self.classification,
            "residual": self.residual,
        }


@dataclass(frozen=True)
class UnstableEigenpair:
    lambda_u: float
    w: np.ndarray
    lambda_stable_min: float
    right: Optional[np.ndarray] = field(default=None, compare=False)


def classify_spectrum(eigenvalues) -> str:
    re = np.real(eigenvalues)
    n_pos = int(np.sum(re > 0))
    if n_pos == 0:
        return STABLE
    if n_pos == re.size:
        return SOURCE
    if n_pos == 1:
        return TYPE_ONE
    return OTHER_UNSTABLE


def newton_solve(model: SystemModel, x0, tol: float = 1e-10, max_iter: int = 50):
    """Newton iteration with step halving; returns the root or None."""
    x = np.array(x0, dtype=float)
    fx = np.asarray(model.f(x), dtype=float)
    if not np.all(np.isfinite(fx)):
        return None
    nf = np.linalg.norm(fx)
    for _ in range(max_iter):
        if nf <= tol:
            return x
        J = eval_jacobian(model, x) if np.all(np.isfinite(x)) else None
        if J is None or np.linalg.cond(J) > 1e13:
            return None
        dx = np.linalg.solve(J, -fx)
        step = 1.0
        while step > 1e-4:
            x_try = x + step * dx
            f_try = np.asarray(model.f(x_try), dtype=float)
            n_try = np.linalg.norm(f_try) if np.all(np.isfinite(f_try)) else np.inf
            if n_try < nf or step == 1.0 and n_try < 10 * nf:
                break
            step *= 0.5
        else:
            return None
        x, fx, nf = x_try, f_try, n_try
    return x if nf <= tol else None


def _seed_grid(box: DomainBox, grid_per_dim) -> np.ndarray:
    counts = np.broadcast_to(np.asarray(grid_per_dim, dtype=int), (box.dim,))
    axes = []
    for lo, hi, k in zip(box.lower, box.upper, counts):
        if k < 1:
            raise ValueError("grid_per_dim entries must be >= 1")
        axes.append(np.array([0.5 * (lo + hi)]) if k == 1 else np.linspace(lo, hi, k))
    return np.array(list(itertools.product(*axes)))


def find_equilibria(model: SystemModel, box: DomainBox, grid_per_dim=10, newton: dict | None = None,
                    seeds=None, hyperbolicity: float = HYPERBOLICITY_THRESHOLD) -> list[EquilibriumPoint]:
    """All hyperbolic equilibria inside ``box`` reachable by Newton from the seeds.

    ``grid_per_dim`` is an int or a per-axis sequence (``1`` pins that axis to
    the box midpoint).  Explicit ``seeds`` replace the grid.  Roots closer
    than ``1e-6 * diam(box)`` are merged; results are sorted lexicographically.
    """
    opts = {"tol": 1e-10, "max_iter": 50}
    opts.update(newton or {})
    if seeds is None:
        if np.min(grid_per_dim) < 2 and np.ndim(grid_per_dim) == 0:
            raise ValueError("grid_per_dim must be >= 2")
        seeds = _seed_grid(box, grid_per_dim)
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))

    roots = []
    for s in seeds:
        try:
            r = newton_solve(model, s, opts["tol"], opts["max_iter"])
        except (np.linalg.LinAlgError, ArithmeticError):
            r = None
        if r is not None and box.contains(r):
            roots.append(r)
    if not roots:
        return []

    roots = np.array(roots)
    roots = roots[np.lexsort(roots.T[::-1])]
    thresh = 1e-6 * box.diameter
    merged: list[np.ndarray] = []
    for r in roots:
        if all(np.linalg.norm(r - m) > thresh for m in merged):
            merged.append(r)

    out = []
    for r in merged:
        r = _polish(model, r)
        try:
            out.append(EquilibriumPoint.from_point(model, r, hyperbolicity))
        except NonHyperbolicError as exc:
            log.warning("skipping non-hyperbolic root: %s", exc)
    return out


def _polish(model, x):
    # one extra Newton step; keep it only if it does not make things worse
    fx = np.asarray(model.f(x), float)
    try:
        x_new = x - np.linalg.solve(eval_jacobian(model, x), fx)
    except np.linalg.LinAlgError:
        return x
    return x_new if np.linalg.norm(model.f(x_new)) <= np.linalg.norm(fx) else x


def unstable_left_eigenpair(eq: EquilibriumPoint) -> UnstableEigenpair:
    if eq.classification != TYPE_ONE:
        raise NotTypeOneError(f"equilibrium at {eq.x_star} is {eq.classification}, not type_one")
    A = eq.jacobian
    vals, vecs = np.linalg.eig(A.T)
    k = int(np.argmax(vals.real))
    lam = vals[k]
    if abs(lam.imag) > 1e-10 * max(1.0, abs(lam.real)):
        raise UnsupportedSpectrumError(f"unstable eigenvalue {lam} is not real")
    w = np.real(vecs[:, k])
    w = w / np.linalg.norm(w)
    if w[np.argmax(np.abs(w))] < 0:
        w = -w

    rvals, rvecs = np.linalg.eig(A)
    v = np.real(rvecs[:, int(np.argmax(rvals.real))])
    v = v / np.linalg.norm(v)
    stable = vals.real[vals.real < 0]
    return UnstableEigenpair(float(lam.real), w, float(np.min(np.abs(stable))), v)


def on_stability_boundary(model: SystemModel, uep: EquilibriumPoint, sep: EquilibriumPoint,
                          offset: float = 1e-4, t_max: float = 200.0, capture_radius: float = 1e-2,
                          others: Sequence = (), config: IntegratorConfig | None = None) -> Optional[bool]:
    """Shoot along the unstable eigendirection on both sides of ``uep``.

    Returns True if either branch of the unstable manifold is captured by
    ``sep``, False if both branches are captured elsewhere (any point in
    ``others``), and None when neither outcome happens within ``t_max``.
    """
    landed = _shoot_branches(model, uep, sep, offset, t_max, capture_radius, others, config)
    if 0 in landed:
        return True
    if all(i is not None for i in landed):
        return False
    return None


def basin_side_sign(model: SystemModel, uep: EquilibriumPoint, sep: EquilibriumPoint,
                    offset: float = 1e-4, t_max: float = 200.0, capture_radius: float = 1e-2,
                    others: Sequence = (), config: IntegratorConfig | None = None) -> Optional[float]:
    """Sign of ``w.(x - x*)`` on the unstable branch that reaches ``sep``.

    Near the saddle the eigenfunction is ``w.(x - x*)``, so this is the sign
    the eigenfunction takes on the basin side of its zero level.  None when
    neither branch reaches ``sep``.
    """
    pair = unstable_left_eigenpair(uep)
    landed = _shoot_branches(model, uep, sep, offset, t_max, capture_radius, others, config)
    for sgn, idx in zip((1.0, -1.0), landed):
        if idx == 0:
            return float(np.sign(sgn * (pair.w @ pair.right)))
    return None


def _shoot_branches(model, uep, sep, offset, t_max, capture_radius, others, config):
    pair = unstable_left_eigenpair(uep)
    targets = [np.asarray(sep.x_star, float)] + [np.asarray(getattr(o, "x_star", o), float) for o in others]
    cfg = (config or IntegratorConfig(rel_tol=1e-8, abs_tol=1e-10)).replace(t_max=t_max)
    events = [EventSpec.zero_crossing(_ball(c, capture_radius), direction=-1) for c in targets]
    landed = []
    for sgn in (1.0, -1.0):
        x0 = uep.x_star + sgn * offset * pair.right
        landed.append(integrate(model, x0, FORWARD, cfg, events).event_index)
    return landed


def _ball(center, radius):
    r2 = radius * radius
    return lambda x: float((x - center) @ (x - center)) - r2


def equilibria_to_json(eqs: Iterable[EquilibriumPoint], path=None, extra: Sequence[dict] | None = None):
    recs = [e.to_dict() for e in eqs]
    if extra:
        for r, e in zip(recs, extra):
            r.update(e)
    text = json.dumps(recs, indent=2)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return recs


def equilibria_from_json(path_or_recs, model: SystemModel) -> list[EquilibriumPoint]:
    recs = path_or_recs
    if not isinstance(recs, list):
        with open(path_or_recs) as fh:
            recs = json.load(fh)
    return [EquilibriumPoint.from_point(model, r["location"]) for r in recs]
