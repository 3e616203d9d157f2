"""Geometric measure theory lab.

Signed-distance domain oracles, Whitney and metric-cube decompositions,
sawtooth subdomains, Monte Carlo harmonic measure, and a fractal
counterexample assembly, with verification-style checks throughout.
"""

__version__ = "0.1.0"

from . import scenes, geometry, whitney, boundary_cubes, sawtooth, harmonic, counterexample

__all__ = [
    "scenes",
    "geometry",
    "whitney",
    "boundary_cubes",
    "sawtooth",
    "harmonic",
    "counterexample",
]
