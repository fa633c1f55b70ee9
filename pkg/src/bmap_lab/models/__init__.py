"""Data models for branching Markov additive processes and their populations."""

from .model_spec import DiscreteLaw, ModelSpec, MotionSpec, TypeSpec, validate
from .population import Particle, PopulationSnapshot, SimConfig

__all__ = [
    "DiscreteLaw",
    "ModelSpec",
    "MotionSpec",
    "TypeSpec",
    "validate",
    "Particle",
    "PopulationSnapshot",
    "SimConfig",
]
