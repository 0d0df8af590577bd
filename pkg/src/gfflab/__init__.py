"""gfflab: a numerical laboratory for the Gaussian free field over
uniformly elliptic random conductances on Z^d, d >= 3.

Submodules: lattice geometry, conductance environments, discrete
potential theory, exact field sampling and tilting, level-set
percolation estimators, porous-interface diagnostics, homogenization
experiments, and a config-driven command-line runner.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    lattice,
    environment,
    potential,
    gff,
    percolation,
    interfaces,
    homogenization,
    streams,
)
