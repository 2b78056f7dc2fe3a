"""Structure-preserving simulation of the 1D stochastic Landau-Lifschitz-Gilbert
equation with sphere-valued magnetization, plus diagnostics for its energy
identities, invariant measures and long-time behaviour."""

from .params import AnisotropyParams
from .fields import Grid1D, SphereField
from .noise import BrownianPath, NoiseShape, RoughDriverSample
from .spde import BlowUpError, GateError, SolverConfig, TrajectoryRecord

__all__ = [
    "AnisotropyParams",
    "BlowUpError",
    "BrownianPath",
    "GateError",
    "Grid1D",
    "NoiseShape",
    "RoughDriverSample",
    "SolverConfig",
    "SphereField",
    "TrajectoryRecord",
]
__version__ = "0.1.0"
