"""Least-squares approximation of the eigenfunction on a basis dictionary."""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, FitError
from .koopman import SampleSet
from .sysmodel import DomainBox, SystemModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BasisSpec:
    """Dictionary description.

    ``monomial``: all monomials of total degree ``<= max_degree`` (the
    constant only when ``include_constant``).  ``trigonometric``: sin/cos of
    ``trig_coords`` and of the differences ``x_i - x_j`` for ``trig_pairs``.
    ``mixed``: both.  Monomials are expanded in ``x - center`` when a center
    is given, which keeps high degrees well conditioned around the saddle.
    """

    kind: str = "monomial"
    max_degree: int = 1
    trig_coords: tuple = ()
    trig_pairs: tuple = ()
    include_constant: bool = True
    center: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("monomial", "trigonometric", "mixed"):
            raise ConfigError(f"unknown basis kind {self.kind!r}")
        object.__setattr__(self, "trig_coords", tuple(int(i) for i in self.trig_coords))
        object.__setattr__(self, "trig_pairs", tuple(tuple(int(i) for i in p) for p in self.trig_pairs))
        if self.center is not None:
            object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.kind != "trigonometric" and self.max_degree < 0:
            raise ConfigError("max_degree must be >= 0")
        if len(set(self.trig_coords)) != len(self.trig_coords):
            raise ConfigError("duplicate trig coordinates")
        if any(len(p) != 2 or p[0] == p[1] for p in self.trig_pairs):
            raise ConfigError("trig pairs must name two distinct coordinates")

    def exponents(self, n: int) -> list[tuple[int, ...]]:
        if self.kind == "trigonometric":
            return [(0,) * n] if self.include_constant else []
        out = []
        start = 0 if self.include_constant else 1
        for deg in range(start, self.max_degree + 1):
            for combo in itertools.combinations_with_replacement(range(n), deg):
                e = [0] * n
                for i in combo:
                    e[i] += 1
                out.append(tuple(e))
        return out

    def size(self, n: int) -> int:
        trig = 0 if self.kind == "monomial" else 2 * (len(self.trig_coords) + len(self.trig_pairs))
        return len(self.exponents(n)) + trig

    def names(self, n: int) -> list[str]:
        out = []
        for e in self.exponents(n):
            terms = [f"x{i}" + (f"^{k}" if k > 1 else "") for i, k in enumerate(e) if k]
            out.append("*".join(terms) or "1")
        if self.kind != "monomial":
            for i in self.trig_coords:
                out += [f"sin(x{i})", f"cos(x{i})"]
            for i, j in self.trig_pairs:
                out += [f"sin(x{i}-x{j})", f"cos(x{i}-x{j})"]
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trig_coords"] = list(self.trig_coords)
        d["trig_pairs"] = [list(p) for p in self.trig_pairs]
        d["center"] = None if self.center is None else list(self.center)
        return d

    @classmethod
    def from_dict(cls, d) -> "BasisSpec":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown basis keys {sorted(unknown)}")
        return cls(**d)


def eval_basis(spec: BasisSpec, x) -> np.ndarray:
    """Dictionary values; ``x`` of shape (n,) gives (N,), shape (L, n) gives (L, N)."""
    x = np.asarray(x, float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    L, n = X.shape
    cols = []
    exps = spec.exponents(n)
    if exps:
        Xc = X - np.asarray(spec.center) if spec.center is not None else X
        top = max(sum(e) for e in exps)
        powers = [np.ones_like(Xc)]
        for _ in range(max(e for ex in exps for e in ex) if top else 0):
            powers.append(powers[-1] * Xc)
        for e in exps:
            c = np.ones(L)
            for i, k in enumerate(e):
                if k:
                    c = c * powers[k][:, i]
            cols.append(c)
    if spec.kind != "monomial":
        for i in spec.trig_coords:
            cols += [np.sin(X[:, i]), np.cos(X[:, i])]
        for i, j in spec.trig_pairs:
            d = X[:, i] - X[:, j]
            cols += [np.sin(d), np.cos(d)]
    if not cols:
        raise ConfigError("basis dictionary is empty")
    G = np.column_stack(cols)
    return G[0] if single else G


@dataclass
class FitDiagnostics:
    rms_residual: float
    max_residual: float
    rank_G: int
    condition_number: float
    L: int
    N: int
    holdout_rms: Optional[float] = None
    L_holdout: int = 0


@dataclass
class FittedEigenfunction:
    basis: BasisSpec
    coeffs: np.ndarray
    lambda_u: float
    equilibrium: np.ndarray
    domain: DomainBox
    diagnostics: FitDiagnostics
    meta: dict = field(default_factory=dict)

    def __call__(self, x):
        return eval_basis(self.basis, x) @ self.coeffs

    def to_dict(self) -> dict:
        return {
            "basis": self.basis.to_dict(),
            "coeffs": self.coeffs.tolist(),
            "lambda_u": self.lambda_u,
            "equilibrium": np.asarray(self.equilibrium).tolist(),
            "domain": self.domain.to_dict(),
            "diagnostics": asdict(self.diagnostics),
            "meta": self.meta,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d) -> "FittedEigenfunction":
        return cls(BasisSpec.from_dict(d["basis"]), np.asarray(d["coeffs"], float), float(d["lambda_u"]),
                   np.asarray(d["equilibrium"], float), DomainBox.from_dict(d["domain"]),
                   FitDiagnostics(**d["diagnostics"]), d.get("meta", {}))

    @classmethod
    def from_json(cls, path) -> "FittedEigenfunction":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def solve_min_norm(G: np.ndarray, c: np.ndarray):
    """Minimum-norm least-squares solution ``G^+ c`` via SVD; returns (u, rank, cond)."""
    u, _, rank, sv = np.linalg.lstsq(G, c, rcond=None)
    cond = float(sv[0] / sv[-1]) if sv.size and sv[-1] > 0 else float("inf")
    return u, int(rank), cond


def holdout_split(L: int, fraction: float, rng_seed: int):
    if not 0 <= fraction < 1:
        raise ConfigError("holdout fraction must be in [0, 1)")
    perm = np.random.default_rng(rng_seed).permutation(L)
    n_hold = int(round(fraction * L)) if L > 1 else 0
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def fit_least_squares(spec: BasisSpec, samples: SampleSet, holdout: float = 0.1,
                      domain: DomainBox | None = None) -> FittedEigenfunction:
    """Fit ``u* = G^+ c`` on a training split; the rest feeds the hold-out diagnostics."""
    if samples.L < 1:
        raise FitError("need at least one sample")
    train, test = holdout_split(samples.L, holdout, samples.rng_seed)
    G = eval_basis(spec, samples.points[train])
    c = samples.values[train]
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(c))):
        raise FitError("non-finite entries in the regression matrix or targets")
    u, rank, cond = solve_min_norm(G, c)
    N = G.shape[1]
    if rank < N:
        log.warning("regression matrix is rank deficient (rank %d < N = %d); minimum-norm solution used", rank, N)
    res = G @ u - c
    hold = None
    if test.size:
        hold = float(np.sqrt(np.mean((eval_basis(spec, samples.points[test]) @ u - samples.values[test]) ** 2)))
    diag = FitDiagnostics(float(np.sqrt(np.mean(res**2))), float(np.max(np.abs(res))), rank, cond,
                          int(train.size), int(N), hold, int(test.size))
    if domain is None:
        domain = _bounding_box(samples.points)
    meta = {"rng_seed": int(samples.rng_seed), "holdout": holdout, "basis_names": spec.names(samples.points.shape[1])}
    return FittedEigenfunction(spec, u, float(samples.lambda_u), np.asarray(samples.equilibrium, float),
                               domain, diag, meta)


def _bounding_box(points) -> DomainBox:
    lo, hi = points.min(axis=0), points.max(axis=0)
    pad = 1e-9 + 1e-12 * np.abs(hi)
    return DomainBox(lo - pad, hi + pad)


def eval_fitted(fe: FittedEigenfunction, x) -> tuple[float, bool]:
    """Fitted value and whether ``x`` lies outside the fitted domain (extrapolation)."""
    x = np.asarray(x, float)
    return float(eval_basis(fe.basis, x) @ fe.coeffs), not fe.domain.contains(x)


def convergence_study(spec: BasisSpec, samples: SampleSet, fractions: Sequence[float], rng_seed: int | None = None):
    """Refit on nested random subsamples.

    Returns ``[(L_sub, coeffs, rms, drift)]`` where drift is the distance to
    the coefficients fitted on the largest subsample.
    """
    fr = list(fractions)
    if not fr or any(f <= 0 or f > 1 for f in fr) or fr != sorted(fr):
        raise ConfigError("fractions must be ascending values in (0, 1]")
    seed = samples.rng_seed if rng_seed is None else rng_seed
    perm = np.random.default_rng(seed).permutation(samples.L)
    N = spec.size(samples.points.shape[1])
    rows = []
    for f in fr:
        m = max(1, int(round(f * samples.L)))
        if m < N:
            log.warning("subsample of %d points is smaller than the dictionary size %d; skipped", m, N)
            continue
        idx = perm[:m]
        G = eval_basis(spec, samples.points[idx])
        u, _, _ = solve_min_norm(G, samples.values[idx])
        rms = float(np.sqrt(np.mean((G @ u - samples.values[idx]) ** 2)))
        rows.append((m, u, rms))
    if not rows:
        return []
    ref = rows[-1][1]
    return [(m, u, rms, float(np.linalg.norm(u - ref))) for m, u, rms in rows]


def generator_residual(fn, model: SystemModel, lam: float, points, rel_step: float = 1e-6) -> np.ndarray:
    """``|grad(fn) . f - lam*fn|`` at each point, gradients by central differences."""
    points = np.atleast_2d(np.asarray(points, float))
    out = np.empty(len(points))
    n = points.shape[1]
    for k, x in enumerate(points):
        grad = np.empty(n)
        for i in range(n):
            h = max(rel_step, rel_step * abs(x[i]))
            e = np.zeros(n)
            e[i] = h
            grad[i] = (fn(x + e) - fn(x - e)) / (2 * h)
        out[k] = abs(grad @ model.f(x) - lam * fn(x))
    return out
