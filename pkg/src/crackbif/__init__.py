"""Bifurcation analysis of a Mode III crack in a square lattice.

Modules
-------
lattice       geometry of the cracked lattice, gradients and the energy inner product
model         pair potential, continuum predictor and the energy with its variations
solvers       Newton, bordered solves, inertia and the smallest generalized eigenpair
continuation  pseudo-arclength tracing, fold brackets, refinement and certification
analysis      decay envelopes, Hausdorff path distance, order fits, Richardson limits
io            CSV/JSON writers
cli           ``crackbif`` command-line front end
"""
from .errors import CrackBifError
from .lattice import Domain, Field, SiteIndex, build_domain, h1_inner
from .model import Model, PairPotential, Predictor

__version__ = "0.1.0"

__all__ = [
    "CrackBifError",
    "Domain",
    "Field",
    "SiteIndex",
    "build_domain",
    "h1_inner",
    "Model",
    "PairPotential",
    "Predictor",
    "__version__",
]
