"""driftlab: simulation and verification laboratory for reversible
diffusions in periodic and random environments under a small constant
forcing.

Subpackages:
    environment   coefficient fields a, b = (1/2) div a and functionals f
    sde           vectorized Euler/Milstein path integration
    regeneration  first-passage regeneration skeleton and cycle harvest
    estimators    ergodic, covariance and response estimators
    homogenize    deterministic periodic-cell solver (the exact oracle)
    cli           named verification experiments and the console entry point
"""

from .environment import (Environment, FunctionalSpec, make_constant,
                          make_functional, make_periodic, make_random_bumps,
                          zero_functional)
from .errors import DriftlabError
from .homogenize import TorusGrid, TorusSolution
from .regeneration import RegenConfig, RegenerationRecord
from .sde import IntegratorConfig, PathRecord

__version__ = "0.1.0"

__all__ = [
    "Environment", "FunctionalSpec", "make_constant", "make_functional",
    "make_periodic", "make_random_bumps", "zero_functional",
    "DriftlabError", "TorusGrid", "TorusSolution", "RegenConfig",
    "RegenerationRecord", "IntegratorConfig", "PathRecord", "__version__",
]
