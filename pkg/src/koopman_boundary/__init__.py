"""Stability boundaries from principal Koopman eigenfunctions of saddle points.

The boundary of a stable equilibrium's basin is the union of the stable
manifolds of the type-one saddles on it, and each of those manifolds is the
zero level of the saddle's unstable principal eigenfunction.  The package
computes that eigenfunction with a path integral along trajectories, fits it
on a basis dictionary, and uses the zero levels for basin tests and
critical-clearing-time estimates.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, EmptySampleSetError, FitError, KoopmanBoundaryError, MissingArtifactError,
                     NoCrossingError, NonHyperbolicError, NotTypeOneError, NumericalDomainError, PathIntegralError,
                     UnknownModelError, UnsupportedSpectrumError)
from .sysmodel import (BUILTIN_NAMES, DomainBox, SystemModel, builtin_system, eval_jacobian, eval_vector_field,
                       linear_system)
from .integrate import (BACKWARD, FORWARD, EventSpec, IntegratorConfig, Trajectory, flow, integrate,
                        integrate_with_quadrature)
from .equilibria import (EquilibriumPoint, UnstableEigenpair, basin_side_sign, find_equilibria,
                         on_stability_boundary, unstable_left_eigenpair)
from .koopman import (EllipsoidSeed, PathIntegralResult, SampleSet, eigenfunction_forward,
                      generate_samples_backward, nonlinear_residual, sample_seed, seed_ellipsoid)
from .fit import (BasisSpec, FitDiagnostics, FittedEigenfunction, convergence_study, eval_basis, eval_fitted,
                  fit_least_squares)
from .boundary import (BoundaryEstimate, CctResult, assemble_boundary, auto_gamma, classify_point, estimate_cct,
                       grid_contour_2d, level_set_points)

__all__ = [name for name in dir() if not name.startswith("_")]
