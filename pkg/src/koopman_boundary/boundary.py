"""Stability boundary as the union of eigenfunction zero-level sets.

Also holds the brute-force basin oracle used to validate the boundary, the
marching-squares contour extraction, and the critical clearing time (the
first time a fault-on trajectory crosses the estimated boundary).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, NoCrossingError
from .fit import FittedEigenfunction, eval_basis
from .integrate import EVENT, FORWARD, EventSpec, IntegratorConfig, Trajectory, integrate
from .sysmodel import DomainBox, SystemModel

IN_BASIN = "in_basin"
OTHER_BASIN = "other_basin"
UNDECIDED = "undecided"


@dataclass
class BoundaryEstimate:
    members: list
    gamma: float
    sep: np.ndarray
    signs: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.members:
            raise ConfigError("a boundary estimate needs at least one member eigenfunction")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        self.sep = np.asarray(self.sep, float)
        if self.signs is not None:
            self.signs = np.asarray(self.signs, float)
            if self.signs.shape != (len(self.members),) or not np.all(np.abs(self.signs) == 1):
                raise ConfigError("signs must hold one +1/-1 entry per member")

    def values(self, x) -> np.ndarray:
        """Member values, shape (n_members,) or (n_members, L)."""
        return np.array([_evaluate(m, x) for m in self.members])

    def on_boundary(self, x):
        return np.any(np.abs(self.values(x)) <= self.gamma, axis=0)

    def inside_signs(self) -> np.ndarray:
        """Sign each member takes on the basin side of its zero level.

        Uses the stored ``signs`` when given (see
        ``equilibria.basin_side_sign``); otherwise falls back to the sign at
        the stable point, which is an extrapolation whenever the stable
        point lies outside a member's fitted region.
        """
        if self.signs is not None:
            return self.signs.copy()
        return np.sign(self.values(self.sep))

    def predict_inside(self, x) -> np.ndarray:
        """True where every member is on its basin side."""
        v = self.values(x)
        s = self.inside_signs()
        s = s.reshape((-1,) + (1,) * (v.ndim - 1))
        return np.all(np.sign(v) == s, axis=0)


class CctResult(NamedTuple):
    cct: float
    crossing_member: int
    trajectory: Trajectory
    refined: bool
    crossing_state: np.ndarray


class Classification(NamedTuple):
    label: str
    index: Optional[int]
    time: float


def _evaluate(fn, x):
    if isinstance(fn, FittedEigenfunction):
        x = np.asarray(x, float)
        return eval_basis(fn.basis, x) @ fn.coeffs
    x = np.asarray(x, float)
    if x.ndim == 1:
        return float(fn(x))
    return np.array([fn(xi) for xi in x])


def level_set_points(fe, candidates, gamma: float) -> np.ndarray:
    """Candidates with ``|fe(x)| <= gamma``."""
    if not gamma > 0:
        raise ConfigError("gamma must be positive")
    pts = np.atleast_2d(np.asarray(candidates, float))
    if pts.size == 0:
        return pts
    return pts[np.abs(_evaluate(fe, pts)) <= gamma]


def auto_gamma(values) -> float:
    """Zero resolution of the sampled values: the larger of the smallest
    positive value and the magnitude of the largest negative value."""
    v = np.asarray(values, float)
    pos = v[v > 0]
    neg = v[v < 0]
    cands = []
    if pos.size:
        cands.append(pos.min())
    if neg.size:
        cands.append(-neg.max())
    if not cands:
        raise ConfigError("cannot derive gamma: all sampled values are zero")
    return float(max(cands))


# --- marching squares --------------------------------------------------------

def _free_axes(n, slice_):
    pinned = dict(slice_ or {})
    free = [i for i in range(n) if i not in pinned]
    if len(free) != 2:
        raise ConfigError(f"contouring needs exactly two free coordinates, got {len(free)}")
    return free, pinned


def grid_contour_2d(fe, box: DomainBox, resolution: int, slice: dict | None = None,
                    mask: Callable[[np.ndarray], np.ndarray] | None = None, n: int | None = None) -> np.ndarray:
    """Zero-level segments of ``fe`` on a ``resolution x resolution`` grid.

    ``slice`` pins all but two coordinates (``{index: value}``); ``box`` may
    be the full n-D box or a 2-D box over the free coordinates.  ``mask``
    optionally drops cells whose centre it rejects (e.g. outside the sampled
    region).  Returns segments of shape (K, 2, n) in full coordinates.
    """
    if n is None:
        n = fe.equilibrium.size if isinstance(fe, FittedEigenfunction) else box.dim
    if resolution < 2:
        raise ConfigError("resolution must be >= 2")
    free, pinned = _free_axes(n, slice)
    lo, hi = (box.lower[free], box.upper[free]) if box.dim == n else (box.lower, box.upper)
    xs = np.linspace(lo[0], hi[0], resolution)
    ys = np.linspace(lo[1], hi[1], resolution)
    X, Y = np.meshgrid(xs, ys, indexing="ij")

    def lift(a, b):
        pts = np.zeros(np.broadcast(a, b).shape + (n,))
        for k, v in pinned.items():
            pts[..., k] = v
        pts[..., free[0]] = a
        pts[..., free[1]] = b
        return pts

    V = np.asarray(_evaluate(fe, lift(X, Y).reshape(-1, n)), float).reshape(X.shape)
    P = V >= 0
    P = P.astype(int)
    case = P[:-1, :-1] | (P[1:, :-1] << 1) | (P[1:, 1:] << 2) | (P[:-1, 1:] << 3)
    active = np.argwhere((case != 0) & (case != 15))
    if mask is not None and active.size:
        cx = 0.5 * (xs[active[:, 0]] + xs[active[:, 0] + 1])
        cy = 0.5 * (ys[active[:, 1]] + ys[active[:, 1] + 1])
        keep = np.asarray(mask(lift(cx, cy)), bool)
        active = active[keep]

    segs = []
    for i, j in active:
        corners = [(xs[i], ys[j]), (xs[i + 1], ys[j]), (xs[i + 1], ys[j + 1]), (xs[i], ys[j + 1])]
        vals = [V[i, j], V[i + 1, j], V[i + 1, j + 1], V[i, j + 1]]
        pts = {}
        for e in range(4):
            a, b = e, (e + 1) % 4
            if (vals[a] >= 0) != (vals[b] >= 0):
                s = vals[a] / (vals[a] - vals[b])
                pts[e] = (corners[a][0] + s * (corners[b][0] - corners[a][0]),
                          corners[a][1] + s * (corners[b][1] - corners[a][1]))
        if len(pts) == 2:
            segs.append(tuple(pts.values()))
            continue
        # ambiguous saddle cell: the sign at the centre decides which corners connect
        centre_pos = np.mean(vals) >= 0
        if centre_pos == (vals[0] >= 0):
            pairs = [(0, 1), (2, 3)]
        else:
            pairs = [(3, 0), (1, 2)]
        for a, b in pairs:
            segs.append((pts[a], pts[b]))

    # a grid node exactly on the level set yields zero-length pieces
    tiny = 1e-9 * max(xs[1] - xs[0], ys[1] - ys[0])
    segs = [sg for sg in segs if np.hypot(sg[0][0] - sg[1][0], sg[0][1] - sg[1][1]) > tiny]
    if not segs:
        return np.zeros((0, 2, n))
    seg = np.array(segs)  # (K, 2, 2)
    return lift(seg[..., 0], seg[..., 1])


def sample_proximity_mask(points, radius: float, axes: Sequence[int] | None = None):
    """Mask for ``grid_contour_2d`` keeping cells within ``radius`` of a sample.

    Distances are measured on ``axes`` only (all coordinates by default), so
    a 2-D slice of a higher-dimensional sample cloud uses its projection.
    The fitted eigenfunction carries no information away from its samples,
    and zero crossings out there are artefacts of the dictionary.
    """
    if not radius > 0:
        raise ConfigError("mask radius must be positive")
    pts = np.atleast_2d(np.asarray(points, float))
    ax = list(range(pts.shape[1])) if axes is None else list(axes)
    tree = cKDTree(pts[:, ax])

    def mask(q):
        q = np.atleast_2d(np.asarray(q, float))
        d, _ = tree.query(q[:, ax], distance_upper_bound=radius)
        return np.isfinite(d)

    return mask


def segments_to_polylines(segments, decimals: int = 12) -> list[np.ndarray]:
    """Chain segments that share endpoints into polylines."""
    segs = [np.asarray(s) for s in segments]
    if not segs:
        return []
    key = lambda p: tuple(np.round(p, decimals))
    ends: dict = {}
    for k, s in enumerate(segs):
        for e in (0, 1):
            ends.setdefault(key(s[e]), []).append((k, e))
    used = [False] * len(segs)

    def walk(k, e):
        line = []
        while True:
            used[k] = True
            p = segs[k][1 - e]
            line.append(p)
            nxt = [(kk, ee) for kk, ee in ends[key(p)] if not used[kk]]
            if not nxt:
                return line
            k, e = nxt[0]

    lines = []
    for k in range(len(segs)):
        if used[k]:
            continue
        fwd = walk(k, 0)
        used[k] = False
        back = walk(k, 1)
        lines.append(np.array(back[::-1] + fwd))
    return lines


def write_contour_csv(path, contours: Sequence[np.ndarray], members: Sequence[int] | None = None) -> None:
    """``member,segment,x0..x{n-1}`` rows, two per segment (one per endpoint).

    ``members`` labels each entry of ``contours``; defaults to 0, 1, ...
    """
    n = next((c.shape[2] for c in contours if len(c)), 2)
    labels = range(len(contours)) if members is None else members
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["member", "segment"] + [f"x{i}" for i in range(n)])
        for m, segs in zip(labels, contours):
            for s, seg in enumerate(segs):
                for p in seg:
                    w.writerow([m, s] + [repr(float(v)) for v in p])


def write_points_csv(path, points, member=None) -> None:
    points = np.atleast_2d(np.asarray(points, float))
    n = points.shape[1] if points.size else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((["member"] if member is not None else []) + [f"x{i}" for i in range(n)])
        for k, p in enumerate(points):
            w.writerow(([int(member[k])] if member is not None else []) + [repr(float(v)) for v in p])


def assemble_boundary(members: Sequence, gamma: float, sep, signs=None) -> BoundaryEstimate:
    return BoundaryEstimate(list(members), float(gamma), np.asarray(sep, float), signs)


# --- brute-force basin oracle --------------------------------------------------

def classify_point(model: SystemModel, x, sep, attractors: Sequence = (), t_max: float = 200.0,
                   capture_radius: float = 1e-2, config: IntegratorConfig | None = None) -> Classification:
    """Forward-simulate ``x`` until it comes within ``capture_radius`` of an attractor."""
    sep = np.asarray(sep, float)
    targets = [np.asarray(a, float) for a in attractors]
    sep_idx = next((k for k, a in enumerate(targets) if np.allclose(a, sep)), None)
    if sep_idx is None:
        targets.insert(0, sep)
        sep_idx = 0
    x = np.asarray(x, float)
    for k, a in enumerate(targets):
        if np.linalg.norm(x - a) <= capture_radius:
            return Classification(IN_BASIN if k == sep_idx else OTHER_BASIN, k, 0.0)
    r2 = capture_radius**2
    events = [EventSpec.zero_crossing(lambda y, a=a: float((y - a) @ (y - a)) - r2, direction=-1) for a in targets]
    cfg = (config or IntegratorConfig(rel_tol=1e-7, abs_tol=1e-9)).replace(t_max=t_max)
    tr = integrate(model, x, FORWARD, cfg, events)
    if tr.event_index is None:
        return Classification(UNDECIDED, None, tr.final_time)
    k = tr.event_index
    return Classification(IN_BASIN if k == sep_idx else OTHER_BASIN, k, tr.final_time)


# --- critical clearing time ------------------------------------------------------

def estimate_cct(fault_model: SystemModel, boundary: BoundaryEstimate, x0=None, t_max: float = 200.0,
                 config: IntegratorConfig | None = None, trusted_only: bool = True) -> CctResult:
    """First time the fault-on trajectory from ``x0`` changes the sign of any member.

    With ``trusted_only`` a crossing counts only where the crossing member
    is inside the region it was fitted on; other sign changes are stepped
    over.  The reported time is bisection-refined to ``config.event_tol``.
    """
    x = np.asarray(boundary.sep if x0 is None else x0, float)
    cfg = config or IntegratorConfig(rel_tol=1e-9, abs_tol=1e-11)
    events = [EventSpec.zero_crossing(lambda y, m=m: float(_evaluate(m, y))) for m in boundary.members]
    t0 = 0.0
    times, states = [], []
    while t0 < t_max:
        tr = integrate(fault_model, x, FORWARD, cfg.replace(t_max=t_max - t0), events)
        times.append(tr.times[:-1] + t0 if tr.event_index is not None else tr.times + t0)
        states.append(tr.states[:-1] if tr.event_index is not None else tr.states)
        if tr.event_index is None:
            break
        t_hit = t0 + tr.final_time
        member = boundary.members[tr.event_index]
        dom = getattr(member, "domain", None)
        if not trusted_only or dom is None or dom.contains(tr.final_state):
            times.append(np.array([t_hit]))
            states.append(tr.final_state[None, :])
            full = Trajectory(np.concatenate(times), np.concatenate(states), EVENT, tr.event_index)
            return CctResult(t_hit, int(tr.event_index), full, True, tr.final_state.copy())
        x, t0 = tr.final_state, t_hit
    raise NoCrossingError(f"fault-on trajectory does not cross the estimated boundary within t_max={t_max}")


def flow_at(model: SystemModel, x0, t: float, config: IntegratorConfig | None = None) -> np.ndarray:
    cfg = (config or IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12)).replace(t_max=t)
    return integrate(model, x0, FORWARD, cfg).final_state


def cct_sandwich(fault_model: SystemModel, post_model: SystemModel, x0, sep, cct: float, margin: float = 1.0,
                 t_max: float = 300.0, capture_radius: float = 1e-2) -> tuple[bool, bool]:
    """(cleared at cct - margin is stable, cleared at cct + margin is stable)."""
    out = []
    for t in (cct - margin, cct + margin):
        xc = flow_at(fault_model, x0, t) if t > 0 else np.asarray(x0, float)
        cls = classify_point(post_model, xc, sep, t_max=t_max, capture_radius=capture_radius)
        out.append(cls.label == IN_BASIN)
    return out[0], out[1]


def cct_to_json(res: CctResult, path=None, meta: dict | None = None) -> dict:
    d = {"cct": res.cct, "crossing_member": res.crossing_member, "refined": res.refined,
         "crossing_state": res.crossing_state.tolist(), "meta": meta or {}}
    if path is not None:
        with open(path, "w") as fh:
            json.dump(d, fh, indent=2)
            fh.write("\n")
    return d
