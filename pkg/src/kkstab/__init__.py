"""Numerical laboratory for the stability machinery of product spacetimes.

Modules
-------
geometry      hyperboloidal foliation, vector-field generators
internal      internal-manifold spectra and elliptic equivalence
fields        mode fields, slice data, norms, snapshot I/O
evolve        radial Klein-Gordon and quasilinear evolutions
energy        hyperboloidal energies, identities, estimate verification
schwarzschild harmonic-gauge exteriors and geodesic probes
cli           experiment runner
"""

__version__ = "0.1.0"

from .geometry import HyperboloidSlice, make_slice  # noqa: F401
from .internal import FlatTorus, lichnerowicz_spectrum  # noqa: F401
from .fields import ModeField, SliceData  # noqa: F401
from .evolve import EvolutionConfig, evolve_kg_radial  # noqa: F401
