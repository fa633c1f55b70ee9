"""Value types produced and consumed by the particle simulator."""

import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

# Ulam-Harris label: the root is (), the k-th child of u is u + (k,)
Label = Tuple[int, ...]


@dataclass(frozen=True)
class Particle:
    """One alive particle at an observation time."""

    label: Label
    position: float
    type_index: int
    birth_time: float

    @property
    def depth(self) -> int:
        """Generation of the particle (number of branch events on its ancestral line)."""
        return len(self.label)

    @property
    def parent_label(self) -> Label:
        return self.label[:-1]


@dataclass(frozen=True)
class PopulationSnapshot:
    """The alive population at one observation time."""

    time: float
    particles: Tuple[Particle, ...]
    d: int
    min_position: float = field(init=False)
    counts_by_type: Tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "particles", tuple(self.particles))
        counts = [0] * self.d
        for particle in self.particles:
            counts[particle.type_index] += 1
        object.__setattr__(self, "counts_by_type", tuple(counts))
        object.__setattr__(
            self,
            "min_position",
            min((p.position for p in self.particles), default=math.inf),
        )

    @property
    def size(self) -> int:
        return len(self.particles)

    @property
    def is_extinct(self) -> bool:
        return not self.particles

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.particles], dtype=float)

    @property
    def types(self) -> np.ndarray:
        return np.array([p.type_index for p in self.particles], dtype=int)

    def shifted(self, offset: float) -> "PopulationSnapshot":
        """Same population translated by ``offset`` (start-position invariance)."""
        moved = tuple(
            Particle(p.label, p.position + offset, p.type_index, p.birth_time)
            for p in self.particles
        )
        return PopulationSnapshot(time=self.time, particles=moved, d=self.d)


@dataclass(frozen=True)
class SimConfig:
    """Replica and horizon settings for Monte Carlo runs."""

    horizon: float
    observation_times: Tuple[float, ...] = ()
    max_particles: int = 1_000_000
    master_seed: int = 0
    replicas: int = 1
    workers: int = 1

    def __post_init__(self) -> None:
        times = tuple(float(t) for t in self.observation_times) or (float(self.horizon),)
        object.__setattr__(self, "observation_times", times)

    def violations(self) -> List[str]:
        problems: List[str] = []
        if not (self.horizon > 0.0 and math.isfinite(self.horizon)):
            problems.append("horizon must be a positive finite number")
        times = list(self.observation_times)
        if times != sorted(times):
            problems.append("observation_times must be sorted")
        if times and (times[0] < 0.0 or times[-1] > self.horizon):
            problems.append("observation_times must lie in [0, horizon]")
        if self.max_particles <= 0:
            problems.append("max_particles must be positive")
        if self.replicas < 1:
            problems.append("replicas must be at least 1")
        if self.workers < 1:
            problems.append("workers must be at least 1")
        if not (0 <= self.master_seed < 2**64):
            problems.append("master_seed must be a 64-bit unsigned integer")
        return problems
