"""pamlab: a numerical laboratory for the parabolic Anderson model on Z^d.

The heat equation with a random potential, du/dt = kappa * (lattice
Laplacian) u + xi u, concentrates its mass on a sparse set of islands as t
grows.  This package samples potentials, evolves the equation, and checks
the measured growth rates, eigenvalue localisation, and island geometry
against the asymptotic theory.

Module map: lattice (boxes, fields, snapshot files), potentials (xi
ensembles and their cumulant scales), solver (direct evolution plus random
walk estimators), spectral (principal eigenvalues and the rank-one curve
mu(r)), variational (the chi constants and optimal shapes), scaling
(annealed vs quenched scale functions), intermittency (trend diagnostics
and island extraction), catalytic (a moving single catalyst), service
(the HTTP interface), and cli (the pam command).
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ConvergenceError,
    DivergentMomentError,
    MethodDisagreement,
    NonMonotoneError,
    NumericFailure,
    PamError,
    SingularSiteError,
    SnapshotFormatError,
    StabilityError,
    TruncationError,
)
from .lattice import Box, Field, constant_field, delta_field, load_field, save_field
from .potentials import PotentialSpec, sample_field

__all__ = [
    "Box",
    "ConfigError",
    "ConvergenceError",
    "DivergentMomentError",
    "Field",
    "MethodDisagreement",
    "NonMonotoneError",
    "NumericFailure",
    "PamError",
    "PotentialSpec",
    "SingularSiteError",
    "SnapshotFormatError",
    "StabilityError",
    "TruncationError",
    "__version__",
    "constant_field",
    "delta_field",
    "load_field",
    "sample_field",
    "save_field",
]
