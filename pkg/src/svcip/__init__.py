"""Divergence-free Scott-Vogelius finite elements for the incompressible
Navier-Stokes equations with continuous interior penalty stabilization.

The typical entry points are :func:`svcip.timeloop.run_transient` for one
simulation and the ``svcip`` command line for convergence studies.
"""

from .config import RunConfig, SCHEMES
from .timeloop import run_transient

__all__ = ["RunConfig", "SCHEMES", "run_transient"]
__version__ = "0.1.0"
