"""Genetic toggle switch: the separatrix between the two stable nodes.

The system is close to symmetric, so the boundary hugs the diagonal
x1 = x2 through the saddle at (1, 1).  A linear dictionary captures it.

    python demos/toggle_switch.py
"""
import numpy as np

from koopman_boundary import (BasisSpec, DomainBox, builtin_system, classify_point, find_equilibria,
                              fit_least_squares, generate_samples_backward, grid_contour_2d, seed_ellipsoid,
                              unstable_left_eigenpair)
from koopman_boundary.equilibria import STABLE, TYPE_ONE

model = builtin_system("toggle_switch")
box = DomainBox([0.0, 0.0], [3.0, 3.0])

eqs = find_equilibria(model, box, 20)
for e in eqs:
    print(f"{e.classification:>10}  x* = {np.round(e.x_star, 4)}  eig = {np.round(e.eigenvalues.real, 4)}")
saddle = next(e for e in eqs if e.classification == TYPE_ONE)
nodes = [e.x_star for e in eqs if e.classification == STABLE]

pair = unstable_left_eigenpair(saddle)
print(f"\nlambda_u = {pair.lambda_u:.4f}, w = {np.round(pair.w, 4)}")

# backward sampling from a thin ellipsoid around the saddle
seed = seed_ellipsoid(saddle, pair, 0.05)
samples = generate_samples_backward(model, saddle, pair, seed, 500, 8.0, box)
print(f"{samples.L} samples, values in [{samples.values.min():.3f}, {samples.values.max():.3f}]")

fe = fit_least_squares(BasisSpec("monomial", 1), samples)
print(f"fitted coefficients (1, x1, x2): {np.round(fe.coeffs, 4)}")
print(f"rms residual {fe.diagnostics.rms_residual:.2e}")

segs = grid_contour_2d(fe, box, 151)
pts = segs.reshape(-1, 2)
print(f"\nzero level: {len(segs)} segments, max |x1 - x2| = {np.max(np.abs(pts[:, 0] - pts[:, 1])):.3f}")

# spot check against simulation: each side of the diagonal goes to a different node
for x in ([2.0, 1.5], [1.5, 2.0]):
    res = classify_point(model, x, nodes[0], nodes)
    print(f"x = {x}: phi = {fe(np.array(x)):+.3f}, converges to {np.round(nodes[res.index], 3)}")
