"""Acceptance criteria, one test each; results are summarised at the end of the run."""
import json
import math
import os
import time

import numpy as np
import pytest

import conftest
from koopman_boundary import (BasisSpec, DomainBox, EquilibriumPoint, IntegratorConfig, builtin_system,
                              classify_point, convergence_study, eigenfunction_forward, eval_basis,
                              find_equilibria, fit_least_squares, flow, generate_samples_backward, linear_system,
                              seed_ellipsoid, unstable_left_eigenpair)
from koopman_boundary.boundary import IN_BASIN
from koopman_boundary.equilibria import TYPE_ONE
from koopman_boundary.fit import FittedEigenfunction, holdout_split, solve_min_norm
from koopman_boundary.pipeline import PipelineConfig, run_pipeline

FWD = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12, t_max=50.0)
POWER_SADDLES = [(3.24, 0.31), (3.04, 3.24), (0.03, 3.10), (-3.03, 0.31), (-3.24, -3.03), (0.03, -3.17)]


def _record(name, ok, detail):
    conftest.ACCEPTANCE_ROWS.append((name, bool(ok), detail))
    assert ok, f"{name}: {detail}"


def _load(out, name):
    with open(os.path.join(out, name)) as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def speed_pipeline(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("speed_accept"))
    t0 = time.perf_counter()
    run_pipeline(PipelineConfig.from_dict({"preset": "speed_control"}), out)
    return out, time.perf_counter() - t0


def test_1_toggle_saddle():
    t0 = time.perf_counter()
    m = builtin_system("toggle_switch")
    eqs = find_equilibria(m, DomainBox([0.0, 0.0], [3.0, 3.0]), 20)
    sad = [e for e in eqs if e.classification == TYPE_ONE]
    pair = unstable_left_eigenpair(sad[0])
    dt = time.perf_counter() - t0
    w = pair.w if pair.w[1] < 0 else -pair.w
    ev = np.sort(sad[0].eigenvalues.real)[::-1]
    ok = (len(sad) == 1 and np.max(np.abs(sad[0].x_star - 1.0)) <= 1e-6
          and np.max(np.abs(ev - [0.3850, -1.3850])) <= 1e-3
          and np.max(np.abs(w - [0.7061, -0.7081])) <= 1e-3 and dt < 1.0)
    _record("1 toggle saddle", ok, f"x*={sad[0].x_star.round(8).tolist()}, eig={ev.round(4).tolist()}, "
                                   f"w={w.round(4).tolist()}, {dt:.2f}s")


def test_2_speed_control_equilibria():
    t0 = time.perf_counter()
    m = builtin_system("speed_control")
    eqs = find_equilibria(m, DomainBox([-1.2, -1.0], [0.5, 1.0]), 20)
    sad = next(e for e in eqs if e.classification == TYPE_ONE)
    pair = unstable_left_eigenpair(sad)
    dt = time.perf_counter() - t0
    xs = sorted(e.x_star[0] for e in eqs)
    ev = np.sort(sad.eigenvalues.real)[::-1]
    ok = (len(xs) == 3 and np.max(np.abs(np.array(xs) - [-0.7886, -0.21135, 0.0])) <= 1e-3
          and np.max(np.abs(ev - [0.4309, -1.6990])) <= 1e-3 and abs(pair.lambda_u - 0.4309) <= 1e-3 and dt < 1.0)
    _record("2 speed-control equilibria", ok, f"x1={np.round(xs, 5).tolist()}, eig={ev.round(4).tolist()}, {dt:.2f}s")


def test_3_power_saddles():
    t0 = time.perf_counter()
    m = builtin_system("two_gen_power")
    eqs = find_equilibria(m, m.domain, [25, 1, 25, 1])
    dt = time.perf_counter() - t0
    ones = [e for e in eqs if e.classification == TYPE_ONE]
    worst = max(min(np.hypot(e.x_star[0] - d1, e.x_star[2] - d2) for e in ones) for d1, d2 in POWER_SADDLES)
    ok = worst <= 2e-2 and dt < 30.0
    _record("3 power type-one saddles", ok, f"worst distance {worst:.4f}, {len(ones)} type-one found, {dt:.1f}s")


def test_4_speed_control_boundary_probes(speed_pipeline):
    out, elapsed = speed_pipeline
    t0 = time.perf_counter()
    model = builtin_system("speed_control")
    recs = _load(out, "equilibria.json")
    sep = next(np.array(r["location"]) for r in recs if r["is_sep"])
    attractors = [np.array(r["location"]) for r in recs if r["classification"] == "stable"]
    fe = FittedEigenfunction.from_json(os.path.join(out, "eigenfunction_0.json"))
    sign = fe.meta["inside_sign"]
    rows = np.loadtxt(os.path.join(out, "boundary.csv"), delimiter=",", skiprows=1)
    segs = rows[:, 2:].reshape(-1, 2, 2)
    pick = np.linspace(0, len(segs) - 1, 100).round().astype(int)
    agree = 0
    for s in segs[pick]:
        mid = s.mean(axis=0)
        t = s[1] - s[0]
        nv = np.array([-t[1], t[0]]) / np.linalg.norm(t)
        for side in (1.0, -1.0):
            q = mid + 0.1 * side * nv
            truth = classify_point(model, q, sep, attractors).label == IN_BASIN
            agree += (np.sign(fe(q)) == sign) == truth
    frac = agree / 200
    total = elapsed + time.perf_counter() - t0
    _record("4 speed-control boundary probes", frac >= 0.95 and total < 120.0,
            f"{agree}/200 agree, pipeline {elapsed:.1f}s, total {total:.1f}s")


def test_5_power_cct(power_run):
    rec = _load(power_run.out, "cct.json")
    before, after = rec["meta"]["stable_if_cleared_before"], rec["meta"]["stable_if_cleared_after"]
    cct = rec["cct"]
    ok = before and not after and abs(cct - 43.7) <= 0.1 * 43.7 and power_run.elapsed < 300.0
    _record("5 power CCT", ok, f"CCT={cct:.3f}s, stable at CCT-1 {before}, at CCT+1 {after}, "
                               f"{power_run.elapsed:.0f}s")


def _linear_setup():
    m = linear_system([[0.5, 0.3], [0.0, -1.0]])
    eq = EquilibriumPoint.from_point(m, [0.0, 0.0])
    pair = unstable_left_eigenpair(eq)
    return m, eq, pair


def test_6a_linear_exactness():
    m, eq, pair = _linear_setup()
    S = generate_samples_backward(m, eq, pair, seed_ellipsoid(eq, pair, 0.01), 50, 4.0,
                                  DomainBox([-2.0, -2.0], [2.0, 2.0]))
    integral = np.max(np.abs(S.values - S.points @ pair.w))
    fe = fit_least_squares(BasisSpec("monomial", 1, include_constant=False), S)
    err = np.max(np.abs(fe.coeffs - pair.w))
    _record("6a linear exactness", integral <= 1e-10 and err <= 1e-8,
            f"max integral part {integral:.1e}, coefficient error {err:.1e}")


def test_6b_semigroup(speed):
    S, lam, dt = speed.samples, speed.pair.lambda_u, 0.05
    idx = np.random.default_rng(1).choice(np.flatnonzero(S.stop_times > dt), 50, replace=False)
    worst = 0.0
    for i in idx:
        a = eigenfunction_forward(speed.model, speed.saddle, speed.pair, speed.seed, S.points[i], FWD).value
        b = eigenfunction_forward(speed.model, speed.saddle, speed.pair, speed.seed,
                                  flow(speed.model, S.points[i], dt), FWD).value
        worst = max(worst, abs(b - math.exp(lam * dt) * a) / abs(math.exp(lam * dt) * a))
    _record("6b semigroup identity", worst <= 1e-4, f"worst relative error {worst:.1e} on 50 points")


def test_6c_generator_pde(speed):
    S, lam = speed.samples, speed.pair.lambda_u
    _, test = holdout_split(S.L, 0.1, S.rng_seed)
    test = test[S.stop_times[test] > 0.1]
    idx = np.random.default_rng(0).choice(test, 100, replace=False)

    def phi(x):
        return eigenfunction_forward(speed.model, speed.saddle, speed.pair, speed.seed, x, FWD).value

    worst, h = 0.0, 1e-5
    for i in idx:
        x = S.points[i]
        grad = np.array([(phi(x + h * e) - phi(x - h * e)) / (2 * h) for e in np.eye(2)])
        v = phi(x)
        worst = max(worst, abs(grad @ speed.model.f(x) - lam * v) / abs(lam * v))
    _record("6c generator PDE residual", worst <= 1e-2, f"worst relative residual {worst:.1e} at 100 held-out points")


def test_6d_forward_backward(speed):
    S = speed.samples
    idx = np.random.default_rng(2).choice(np.flatnonzero(S.stop_times > 0), 50, replace=False)
    worst = 0.0
    for i in idx:
        r = eigenfunction_forward(speed.model, speed.saddle, speed.pair, speed.seed, S.points[i], FWD)
        worst = max(worst, abs(r.value - S.values[i]) / abs(S.values[i]))
    _record("6d forward/backward agreement", worst <= 1e-4, f"worst relative gap {worst:.1e} on 50 points")


def test_6e_least_squares():
    rng = np.random.default_rng(3)
    B = rng.normal(size=(30, 3))
    G = np.column_stack([B, B[:, 0] + B[:, 1]])
    c = rng.normal(size=30)
    u, rank, _ = solve_min_norm(G, c)
    null = np.array([1.0, 1.0, 0.0, -1.0]) / np.sqrt(3)
    min_norm = rank == 3 and abs(u @ null) <= 1e-10 and np.allclose(u, np.linalg.pinv(G) @ c, atol=1e-10)
    spec = BasisSpec("monomial", 3)
    X = rng.uniform(-1, 1, size=(200, 2))
    u0 = rng.normal(size=spec.size(2))
    v, _, _ = solve_min_norm(eval_basis(spec, X), eval_basis(spec, X) @ u0)
    err = np.max(np.abs(v - u0))
    _record("6e least squares", min_norm and err <= 1e-10,
            f"min-norm {'ok' if min_norm else 'violated'}, recovery error {err:.1e}")


def test_6f_coefficient_drift(speed):
    fr = [0.02, 0.05, 0.1, 0.2, 0.4, 1.0]
    drift = np.mean([[r[3] for r in convergence_study(speed.basis, speed.samples, fr, rng_seed=s)]
                     for s in range(10)], axis=0)
    ok = bool(np.all(np.diff(drift) < 0))
    _record("6f coefficient drift decreasing in L", ok, "mean drift " + ", ".join(f"{d:.2f}" for d in drift))


def test_6g_reproducibility(speed_pipeline, tmp_path):
    out, _ = speed_pipeline
    run_pipeline(PipelineConfig.from_dict({"preset": "speed_control"}), str(tmp_path))
    arts = _load(out, "run_manifest.json")["artifacts"]
    same = all(open(os.path.join(out, n), "rb").read() == open(os.path.join(tmp_path, n), "rb").read() for n in arts)
    _record("6g bitwise reproducibility", same and len(arts) > 0, f"{len(arts)} artifacts compared")
