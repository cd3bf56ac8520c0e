"""Config-driven runner: equilibria, eigenfunction samples, fits, contours, CCT.

Every stage reads the artifacts of the stage before it from the output
directory, so stages can be rerun in isolation.  Artifacts:

* ``equilibria.json``: every equilibrium with its classification, plus the
  boundary verdict and basin-side sign for the type-one points;
* ``samples_<i>.csv`` (+ ``.json`` sidecar): path-integral samples for the
  i-th boundary saddle;
* ``eigenfunction_<i>.json``: the least-squares fit;
* ``contour_<i>.csv``, ``boundary.csv``, ``level_set.csv``: zero-level
  geometry on a 2-D slice, and the sampled points within ``gamma``;
* ``cct.json``: the critical clearing time, when a fault model is configured;
* ``run_manifest.json``: resolved config, package version and artifact hashes.
"""
from __future__ import annotations

import copy
import glob
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import __version__
from .boundary import (assemble_boundary, auto_gamma, cct_sandwich, cct_to_json, estimate_cct,
                       grid_contour_2d, level_set_points, sample_proximity_mask, write_contour_csv,
                       write_points_csv)
from .equilibria import (STABLE, TYPE_ONE, EquilibriumPoint, basin_side_sign, equilibria_from_json,
                         equilibria_to_json, find_equilibria, on_stability_boundary, unstable_left_eigenpair)
from .errors import ConfigError, MissingArtifactError
from .fit import BasisSpec, FittedEigenfunction, fit_least_squares
from .integrate import IntegratorConfig
from .koopman import SampleSet, generate_samples_backward, seed_ellipsoid
from .sysmodel import DomainBox, SystemModel, builtin_system

log = logging.getLogger(__name__)

OUT_ENV = "KOOPMAN_BOUNDARY_OUT"
DEFAULT_OUT = "koopman_out"
STAGES = ("equilibria", "eigfun", "fit", "contour", "cct")

# ``None`` marks a value with no default; nested dicts are checked key by key.
_SCHEMA: dict[str, Any] = {
    "model": {"name": None, "overrides": {}},
    "domain": None,
    "equilibria": {"box": None, "grid_per_dim": 10, "newton": {"tol": 1e-10, "max_iter": 50}},
    "sep": None,
    "saddles": "boundary",
    "shooting": {"offset": 1e-4, "t_max": 200.0, "capture_radius": 1e-2},
    "seed": {"eps1": 0.2, "aspect": 100.0, "scale": 1.0, "count": 500, "rng_seed": 0},
    "backward": {"T": 10.0, "stride": 1, "rel_tol": 1e-8, "abs_tol": 1e-10},
    "basis": {"kind": "monomial", "max_degree": 1},
    "fit": {"holdout": 0.1},
    "gamma": "auto",
    "contour": {"axes": [0, 1], "resolution": 200, "slice": None, "mask_radius": 0.03},
    "cct": None,
    "outputs": None,
}
_CCT_SCHEMA = {"fault_model": None, "x0": None, "t_max": 200.0, "trusted_only": True,
               "rel_tol": 1e-9, "abs_tol": 1e-11, "sandwich_margin": 1.0}
# dicts whose keys are free-form (parameter names, basis fields, pinned coordinates)
_OPAQUE = {("model", "overrides"), ("basis",), ("contour", "slice"), ("domain",), ("equilibria", "box")}

PRESETS: dict[str, dict] = {
    "toggle_switch": {
        "model": {"name": "toggle_switch"},
        "domain": {"lower": [0.0, 0.0], "upper": [3.0, 3.0]},
        "equilibria": {"grid_per_dim": 20},
        "seed": {"eps1": 0.05, "aspect": 100.0, "scale": 1.0},
        "backward": {"T": 8.0},
        "basis": {"kind": "monomial", "max_degree": 1},
        "contour": {"axes": [0, 1], "resolution": 151, "mask_radius": 0.1},
    },
    "speed_control": {
        "model": {"name": "speed_control"},
        "domain": {"lower": [-1.0, -1.0], "upper": [1.0, 1.0]},
        "equilibria": {"box": {"lower": [-1.2, -1.0], "upper": [0.5, 1.0]}, "grid_per_dim": 20},
        "sep": [0.0, 0.0],
        "seed": {"eps1": 0.2, "aspect": 10.0, "scale": 100.0, "count": 500},
        "backward": {"T": 10.0},
        "basis": {"kind": "monomial", "max_degree": 5, "center": "saddle"},
        "gamma": 5e-5,
        "contour": {"axes": [0, 1], "resolution": 200, "mask_radius": 0.03},
    },
    "two_gen_power": {
        "model": {"name": "two_gen_power"},
        "domain": {"lower": [-6.283185307179586, -3.0, -6.283185307179586, -3.0],
                   "upper": [6.283185307179586, 3.0, 6.283185307179586, 3.0]},
        "equilibria": {"box": {"lower": [-3.5, -1.0, -3.5, -1.0], "upper": [3.5, 1.0, 3.5, 1.0]},
                       "grid_per_dim": [25, 1, 25, 1]},
        "sep": [0.02, 0.0, 0.06, 0.0],
        "seed": {"eps1": 0.1, "aspect": 100.0, "scale": 1.0, "count": 500},
        "backward": {"T": 5.0, "rel_tol": 1e-7, "abs_tol": 1e-9},
        "basis": {"kind": "mixed", "max_degree": 1, "trig_coords": [0, 2], "trig_pairs": [[0, 2]]},
        "gamma": 1e-3,
        "contour": {"axes": [0, 2], "resolution": 200, "mask_radius": 0.05},
        "cct": {"fault_model": {"name": "two_gen_power_fault"}, "t_max": 100.0},
    },
}


def _merge(base: dict, over: dict, schema: dict | None, path: tuple = ()) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if schema is not None and k not in schema:
            where = ".".join(path + (k,))
            raise ConfigError(f"unknown config key {where!r}")
        sub = schema.get(k) if schema is not None else None
        if path + (k,) in _OPAQUE:
            out[k] = copy.deepcopy(v)
        elif isinstance(sub, dict) and isinstance(v, dict):
            out[k] = _merge(out.get(k) or {}, v, sub, path + (k,))
        elif k == "cct" and isinstance(v, dict):
            out[k] = _merge(copy.deepcopy(_CCT_SCHEMA) if out.get(k) is None else out[k], v, _CCT_SCHEMA, ("cct",))
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class PipelineConfig:
    """Validated pipeline parameters; ``data`` mirrors the JSON layout."""

    data: dict

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        base = copy.deepcopy(_SCHEMA)
        preset = d.pop("preset", None)
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
            base = _merge(base, PRESETS[preset], _SCHEMA)
        data = _merge(base, d, _SCHEMA)
        cfg = cls(data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def with_overrides(self, **sections) -> "PipelineConfig":
        return PipelineConfig.from_dict(_merge(self.data, sections, _SCHEMA))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def __getitem__(self, key):
        return self.data[key]

    def validate(self) -> None:
        d = self.data
        if not d["model"].get("name"):
            raise ConfigError("model.name is required")
        model = self.model()
        dom = self.domain()
        if dom.dim != model.dim:
            raise ConfigError(f"domain has dimension {dom.dim}, model has {model.dim}")
        s, b = d["seed"], d["backward"]
        if not s["eps1"] > 0 or not s["aspect"] >= 1 or not s["scale"] > 0:
            raise ConfigError("seed needs eps1 > 0, aspect >= 1, scale > 0")
        if int(s["count"]) < 1 or int(s["rng_seed"]) < 0:
            raise ConfigError("seed.count must be >= 1 and seed.rng_seed non-negative")
        if not b["T"] > 0 or int(b["stride"]) < 1:
            raise ConfigError("backward needs T > 0 and stride >= 1")
        self.integrator()
        self.basis_for(np.zeros(model.dim))
        g = d["gamma"]
        if not (g == "auto" or (isinstance(g, (int, float)) and g > 0)):
            raise ConfigError("gamma must be 'auto' or a positive number")
        if not 0 <= d["fit"]["holdout"] < 1:
            raise ConfigError("fit.holdout must be in [0, 1)")
        sad = d["saddles"]
        if not (sad in ("boundary", "all") or (isinstance(sad, list) and all(isinstance(i, int) for i in sad))):
            raise ConfigError("saddles must be 'boundary', 'all' or a list of equilibrium indices")
        c = d["contour"]
        if len(c["axes"]) != 2 or len(set(c["axes"])) != 2 or not all(0 <= a < model.dim for a in c["axes"]):
            raise ConfigError("contour.axes must name two distinct coordinates")
        if int(c["resolution"]) < 2:
            raise ConfigError("contour.resolution must be >= 2")
        if d["cct"] is not None:
            fm = d["cct"].get("fault_model")
            if not isinstance(fm, dict) or "name" not in fm:
                raise ConfigError("cct.fault_model needs a name")
            self.fault_model()

    # --- derived objects ---------------------------------------------------------

    def model(self) -> SystemModel:
        m = self.data["model"]
        return builtin_system(m["name"], m.get("overrides") or {})

    def fault_model(self) -> SystemModel:
        fm = self.data["cct"]["fault_model"]
        over = dict(fm.get("overrides") or {})
        post = self.model()
        # Pm is held at its post-fault value during the fault
        if "Pm" in post.params and "Pm" not in over:
            over["Pm"] = post.params["Pm"]
        unknown = set(fm) - {"name", "overrides"}
        if unknown:
            raise ConfigError(f"unknown config key(s) in cct.fault_model: {sorted(unknown)}")
        return builtin_system(fm["name"], over)

    def domain(self) -> DomainBox:
        d = self.data["domain"]
        if d is None:
            dom = self.model().domain
            if dom is None:
                raise ConfigError("model has no default domain; set 'domain'")
            return dom
        return _box(d, "domain")

    def equilibria_box(self) -> DomainBox:
        b = self.data["equilibria"]["box"]
        return self.domain() if b is None else _box(b, "equilibria.box")

    def integrator(self) -> IntegratorConfig:
        b = self.data["backward"]
        return IntegratorConfig(rel_tol=float(b["rel_tol"]), abs_tol=float(b["abs_tol"]))

    def basis_for(self, x_star) -> BasisSpec:
        d = dict(self.data["basis"])
        if d.get("center") == "saddle":
            d["center"] = [float(v) for v in x_star]
        return BasisSpec.from_dict(d)


def _box(d, name) -> DomainBox:
    if not isinstance(d, dict) or set(d) != {"lower", "upper"}:
        raise ConfigError(f"{name} needs exactly the keys 'lower' and 'upper'")
    return DomainBox(d["lower"], d["upper"])


def resolve_out_dir(cli_out: str | None, cfg: PipelineConfig) -> str:
    return cli_out or cfg["outputs"] or os.environ.get(OUT_ENV) or DEFAULT_OUT


# --- stages ------------------------------------------------------------------------

def _path(out, name):
    return os.path.join(out, name)


def _require(path):
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing upstream artifact {path}")
    return path


def _clear(out, pattern):
    for p in glob.glob(_path(out, pattern)):
        os.remove(p)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _read_json(path):
    with open(_require(path)) as fh:
        return json.load(fh)


def _pick_sep(eqs: list[EquilibriumPoint], hint) -> int:
    stable = [k for k, e in enumerate(eqs) if e.classification == STABLE]
    if not stable:
        raise ConfigError("no stable equilibrium found in the search box")
    if hint is None:
        if len(stable) > 1:
            log.info("several stable equilibria; set 'sep' to choose; using the first")
        return stable[0]
    hint = np.asarray(hint, float)
    return min(stable, key=lambda k: float(np.linalg.norm(eqs[k].x_star - hint)))


def stage_equilibria(cfg: PipelineConfig, out: str) -> list[dict]:
    model = cfg.model()
    e = cfg["equilibria"]
    eqs = find_equilibria(model, cfg.equilibria_box(), e["grid_per_dim"], e["newton"])
    if not eqs:
        raise ConfigError("no equilibria found in the search box")
    sep_k = _pick_sep(eqs, cfg["sep"])
    sep = eqs[sep_k]
    others = [q for k, q in enumerate(eqs) if q.classification == STABLE and k != sep_k]
    sh = cfg["shooting"]
    chosen = cfg["saddles"]
    extra, member = [], 0
    for k, q in enumerate(eqs):
        rec: dict[str, Any] = {"index": k, "is_sep": k == sep_k, "on_boundary": None,
                               "inside_sign": None, "member": None}
        if q.classification == TYPE_ONE:
            verdict = on_stability_boundary(model, q, sep, sh["offset"], sh["t_max"], sh["capture_radius"], others)
            rec["on_boundary"] = verdict
            use = (chosen == "all" or (chosen == "boundary" and verdict is True)
                   or (isinstance(chosen, list) and k in chosen))
            if use:
                sign = basin_side_sign(model, q, sep, sh["offset"], sh["t_max"], sh["capture_radius"], others)
                rec["inside_sign"] = sign
                rec["member"] = member
                member += 1
        elif isinstance(chosen, list) and k in chosen:
            raise ConfigError(f"equilibrium {k} is {q.classification}, not type_one")
        extra.append(rec)
    if member == 0:
        log.warning("no type-one equilibrium selected; later stages have nothing to do")
    os.makedirs(out, exist_ok=True)
    return equilibria_to_json(eqs, _path(out, "equilibria.json"), extra)


def _members(out: str, model: SystemModel):
    recs = _read_json(_path(out, "equilibria.json"))
    eqs = equilibria_from_json(recs, model)
    sep = next((q for q, r in zip(eqs, recs) if r.get("is_sep")), None)
    if sep is None:
        raise ConfigError("equilibria.json does not mark a stable equilibrium")
    mem = sorted(((r["member"], q, r) for q, r in zip(eqs, recs) if r.get("member") is not None),
                 key=lambda t: t[0])
    return sep, mem


def stage_eigfun(cfg: PipelineConfig, out: str) -> list[str]:
    model = cfg.model()
    _, mem = _members(out, model)
    s, b = cfg["seed"], cfg["backward"]
    box, icfg = cfg.domain(), cfg.integrator()
    _clear(out, "samples_*.csv")
    _clear(out, "samples_*.json")
    paths = []
    for i, q, rec in mem:
        pair = unstable_left_eigenpair(q)
        seed = seed_ellipsoid(q, pair, s["eps1"], s["aspect"], s["scale"])
        S = generate_samples_backward(model, q, pair, seed, int(s["count"]), float(b["T"]), box,
                                      int(b["stride"]), icfg, int(s["rng_seed"]))
        S.info.update({"equilibrium_index": rec["index"], "aspect": s["aspect"], "scale": s["scale"]})
        p = _path(out, f"samples_{i}.csv")
        S.to_csv(p)
        paths.append(p)
        log.info("member %d: %d samples", i, S.L)
    return paths


def stage_fit(cfg: PipelineConfig, out: str) -> list[str]:
    model = cfg.model()
    _, mem = _members(out, model)
    _clear(out, "eigenfunction_*.json")
    paths = []
    for i, q, rec in mem:
        S = SampleSet.from_csv(_require(_path(out, f"samples_{i}.csv")))
        fe = fit_least_squares(cfg.basis_for(q.x_star), S, cfg["fit"]["holdout"])
        fe.meta.update({"member": i, "equilibrium_index": rec["index"], "inside_sign": rec["inside_sign"],
                        "gamma_auto": auto_gamma(S.values)})
        p = _path(out, f"eigenfunction_{i}.json")
        fe.to_json(p)
        paths.append(p)
    return paths


def _load_members(out: str, model: SystemModel):
    sep, mem = _members(out, model)
    if not mem:
        raise MissingArtifactError("no boundary saddles recorded in equilibria.json")
    fes = [FittedEigenfunction.from_json(_require(_path(out, f"eigenfunction_{i}.json"))) for i, _, _ in mem]
    return sep, fes


def _gamma(cfg, fes) -> float:
    g = cfg["gamma"]
    return float(g) if g != "auto" else float(max(fe.meta["gamma_auto"] for fe in fes))


def _signs(fes):
    s = [fe.meta.get("inside_sign") for fe in fes]
    return None if any(v is None for v in s) else np.array(s, float)


def stage_contour(cfg: PipelineConfig, out: str) -> list[str]:
    model = cfg.model()
    sep, fes = _load_members(out, model)
    c = cfg["contour"]
    axes = [int(a) for a in c["axes"]]
    pinned = {int(k): float(v) for k, v in (c["slice"] or {}).items()}
    for k in range(model.dim):
        if k not in axes and k not in pinned:
            pinned[k] = float(sep.x_star[k])
    gamma = _gamma(cfg, fes)
    _clear(out, "contour_*.csv")
    box = cfg.domain()
    paths, all_segs, cloud, owner = [], [], [], []
    for i, fe in enumerate(fes):
        S = SampleSet.from_csv(_require(_path(out, f"samples_{i}.csv")))
        mask = sample_proximity_mask(S.points, c["mask_radius"], axes) if c["mask_radius"] else None
        segs = grid_contour_2d(fe, box, int(c["resolution"]), slice=pinned or None, mask=mask, n=model.dim)
        p = _path(out, f"contour_{i}.csv")
        write_contour_csv(p, [segs], members=[i])
        paths.append(p)
        all_segs.append(segs)
        pts = level_set_points(fe, S.points, gamma)
        cloud.append(pts)
        owner += [i] * len(pts)
    write_contour_csv(_path(out, "boundary.csv"), all_segs)
    cloud_arr = np.concatenate(cloud) if owner else np.zeros((0, model.dim))
    write_points_csv(_path(out, "level_set.csv"), cloud_arr, owner)
    return paths + [_path(out, "boundary.csv"), _path(out, "level_set.csv")]


def stage_cct(cfg: PipelineConfig, out: str) -> str:
    if cfg["cct"] is None:
        raise ConfigError("no 'cct' section in the config")
    c = cfg["cct"]
    model = cfg.model()
    fault = cfg.fault_model()
    sep, fes = _load_members(out, model)
    B = assemble_boundary(fes, _gamma(cfg, fes), sep.x_star, _signs(fes))
    x0 = sep.x_star if c["x0"] is None else np.asarray(c["x0"], float)
    icfg = IntegratorConfig(rel_tol=float(c["rel_tol"]), abs_tol=float(c["abs_tol"]))
    res = estimate_cct(fault, B, x0, float(c["t_max"]), icfg, bool(c["trusted_only"]))
    stable_before, stable_after = cct_sandwich(fault, model, x0, sep.x_star, res.cct, float(c["sandwich_margin"]))
    meta = {"x0": x0.tolist(), "x0_is_post_fault_sep": c["x0"] is None,
            "fault_model": fault.name, "fault_params": dict(fault.params),
            "trusted_only": bool(c["trusted_only"]), "sandwich_margin": float(c["sandwich_margin"]),
            "stable_if_cleared_before": bool(stable_before), "stable_if_cleared_after": bool(stable_after)}
    p = _path(out, "cct.json")
    cct_to_json(res, p, meta)
    return p


_STAGE_FN = {"equilibria": stage_equilibria, "eigfun": stage_eigfun, "fit": stage_fit,
             "contour": stage_contour, "cct": stage_cct}


def write_manifest(cfg: PipelineConfig, out: str) -> dict:
    """Resolved config, version and a hash of every artifact present in ``out``."""
    arts = {}
    for p in sorted(glob.glob(_path(out, "*"))):
        name = os.path.basename(p)
        if name == "run_manifest.json" or not os.path.isfile(p):
            continue
        with open(p, "rb") as fh:
            arts[name] = hashlib.sha256(fh.read()).hexdigest()
    man = {"package": "koopman_boundary", "version": __version__, "config": cfg.to_dict(),
           "rng_seed": int(cfg["seed"]["rng_seed"]), "artifacts": arts}
    _write_json(_path(out, "run_manifest.json"), man)
    return man


def run_pipeline(cfg: PipelineConfig, out: str, stage: str = "all") -> dict:
    """Run one stage or all of them; returns the manifest."""
    if stage != "all" and stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}; choose from all, {', '.join(STAGES)}")
    os.makedirs(out, exist_ok=True)
    todo = [s for s in STAGES if s != "cct" or cfg["cct"] is not None] if stage == "all" else [stage]
    for s in todo:
        log.info("stage %s", s)
        _STAGE_FN[s](cfg, out)
    return write_manifest(cfg, out)
