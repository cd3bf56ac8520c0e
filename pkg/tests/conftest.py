import numpy as np
import pytest

from koopman_boundary import (BasisSpec, DomainBox, builtin_system, find_equilibria, fit_least_squares,
                              generate_samples_backward, seed_ellipsoid, unstable_left_eigenpair)
from koopman_boundary.equilibria import STABLE, TYPE_ONE

# (criterion, passed, detail) rows collected by test_acceptance.py
ACCEPTANCE_ROWS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_ROWS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_ROWS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")


class SpeedControl:
    """Shared speed-control setup: the saddle, its eigenpair and one fitted sample set."""

    def __init__(self):
        self.model = builtin_system("speed_control")
        self.eqs = find_equilibria(self.model, DomainBox([-1.2, -1.0], [0.5, 1.0]), 20)
        self.saddle = next(e for e in self.eqs if e.classification == TYPE_ONE)
        self.stable = [e for e in self.eqs if e.classification == STABLE]
        self.sep = next(e for e in self.stable if np.linalg.norm(e.x_star) < 1e-6)
        self.pair = unstable_left_eigenpair(self.saddle)
        self.box = DomainBox([-1.0, -1.0], [1.0, 1.0])
        self.seed = seed_ellipsoid(self.saddle, self.pair, 0.2, aspect=10.0, scale=100.0)
        self.samples = generate_samples_backward(self.model, self.saddle, self.pair, self.seed, 500, 10.0,
                                                 self.box, rng_seed=0)
        self.basis = BasisSpec("monomial", 5, center=tuple(self.saddle.x_star))
        self.fit = fit_least_squares(self.basis, self.samples)


@pytest.fixture(scope="session")
def speed():
    return SpeedControl()


class PipelineRun:
    def __init__(self, out, elapsed, manifest):
        self.out, self.elapsed, self.manifest = out, elapsed, manifest


@pytest.fixture(scope="session")
def power_run(tmp_path_factory):
    """The two-generator preset, run once end to end; the elapsed time feeds the CCT criterion."""
    import time
    from koopman_boundary.pipeline import PipelineConfig, run_pipeline
    out = str(tmp_path_factory.mktemp("power"))
    t0 = time.perf_counter()
    man = run_pipeline(PipelineConfig.from_dict({"preset": "two_gen_power"}), out)
    return PipelineRun(out, time.perf_counter() - t0, man)
