"""Exact event-driven Monte Carlo of the branching Markov additive process.

Events are generated by a global Gillespie clock over type counts: with ``n_j`` alive
particles of type ``j`` and per-particle event rate ``rho_j = beta_j + q_j + r_j``, the
next event fires after an exponential time of rate ``sum_j n_j rho_j``. Brownian
increments are applied lazily, only when a particle is touched or observed.
"""

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..errors import (
    AllExtinctError,
    ConvergenceError,
    DomainError,
    ModelValidationError,
    PopulationCapError,
)
from ..models.model_spec import ModelSpec, validate
from ..models.population import Label, Particle, PopulationSnapshot, SimConfig
from ..utils.replicas import ReplicaRunner, replica_rng
from ..utils.sampling import DiscreteSampler, switch_target_samplers
from ..utils.stats import estimate, quantile_summary
from .spectral import SpectralReport, v_prime as spectral_v_prime

logger = logging.getLogger(__name__)

Start = Tuple[float, int]

# RNG stream index used by the population simulator
POPULATION_STREAM = 0


class _Record:
    """Mutable particle record inside one replica."""

    __slots__ = ("label", "position", "last_time", "birth_time")

    def __init__(self, label: Label, position: float, last_time: float, birth_time: float) -> None:
        self.label = label
        self.position = position
        self.last_time = last_time
        self.birth_time = birth_time


class _Dynamics:
    """Per-type rates and samplers, precomputed once per model."""

    def __init__(self, model: ModelSpec) -> None:
        d = model.d
        self.d = d
        self.drifts = [t.motion.drift for t in model.types]
        self.sigmas = [math.sqrt(t.motion.sigma2) for t in model.types]
        self.branch = [t.branch_rate for t in model.types]
        self.switch = [float(r) for r in model.switch_rates]
        self.jump = [t.motion.jump_rate for t in model.types]
        self.rates = [self.branch[j] + self.switch[j] + self.jump[j] for j in range(d)]
        self.offspring = [DiscreteSampler(t.offspring) for t in model.types]
        self.jumps = [DiscreteSampler(t.motion.jump_law) for t in model.types]
        self.targets = switch_target_samplers(model.q_matrix)
        self.u_samplers = [[DiscreteSampler(model.u_law(i, j)) for j in range(d)] for i in range(d)]

    def advance(self, record: _Record, type_index: int, time: float, rng: np.random.Generator) -> None:
        dt = time - record.last_time
        if dt <= 0.0:
            return
        record.position += self.drifts[type_index] * dt
        sigma = self.sigmas[type_index]
        if sigma > 0.0:
            record.position += sigma * math.sqrt(dt) * float(rng.standard_normal())
        record.last_time = time


def _check_start(model: ModelSpec, start: Start) -> Tuple[float, int]:
    x, i = float(start[0]), int(start[1])
    if not math.isfinite(x):
        raise DomainError(f"start position must be finite, got {x}")
    if not 0 <= i < model.d:
        raise DomainError(f"start type {i} outside [0, {model.d})")
    return x, i


def _observe(
    population: List[List[_Record]],
    time: float,
    dynamics: _Dynamics,
    rng: np.random.Generator,
) -> PopulationSnapshot:
    particles: List[Particle] = []
    for j, records in enumerate(population):
        for record in records:
            dynamics.advance(record, j, time, rng)
            particles.append(Particle(record.label, record.position, j, record.birth_time))
    return PopulationSnapshot(time=time, particles=tuple(particles), d=dynamics.d)


def _firing_type(weights: Sequence[float], u: float) -> int:
    """Bucket of the cumulative weights containing ``u``.

    Rounding can leave ``u`` past the last bucket; the last type with positive weight fires then.
    """
    last = -1
    for j, weight in enumerate(weights):
        if weight <= 0.0:
            continue
        last = j
        if u < weight:
            return j
        u -= weight
    if last < 0:
        raise ConvergenceError("no particle type has a positive event rate")
    return last


def simulate_population(
    model: ModelSpec,
    start: Start,
    times: Sequence[float],
    max_particles: int,
    rng: np.random.Generator,
) -> List[PopulationSnapshot]:
    """Simulate one replica and return the population at each of ``times``."""
    x0, i0 = _check_start(model, start)
    dynamics = _Dynamics(model)
    d = model.d
    population: List[List[_Record]] = [[] for _ in range(d)]
    population[i0].append(_Record((), x0, 0.0, 0.0))
    count = 1

    snapshots: List[PopulationSnapshot] = []
    pending = list(times)
    k = 0
    t = 0.0
    while k < len(pending):
        total = math.fsum(len(population[j]) * dynamics.rates[j] for j in range(d))
        t_event = t + float(rng.exponential(1.0 / total)) if total > 0.0 else math.inf
        while k < len(pending) and pending[k] <= t_event:
            snapshots.append(_observe(population, pending[k], dynamics, rng))
            k += 1
        if k == len(pending):
            break
        t = t_event

        # Which type fires, then which particle of that type
        weights = [len(population[c]) * dynamics.rates[c] for c in range(d)]
        j = _firing_type(weights, float(rng.random()) * total)
        index = int(rng.integers(len(population[j])))
        record = population[j][index]
        dynamics.advance(record, j, t, rng)

        v = float(rng.random()) * dynamics.rates[j]
        if v < dynamics.branch[j]:
            children = int(dynamics.offspring[j].sample(rng))
            population[j][index] = population[j][-1]
            population[j].pop()
            for c in range(children):
                population[j].append(_Record(record.label + (c,), record.position, t, t))
            count += children - 1
        elif v < dynamics.branch[j] + dynamics.switch[j]:
            target_sampler = dynamics.targets[j]
            assert target_sampler is not None
            target = int(target_sampler.sample(rng))
            record.position += dynamics.u_samplers[j][target].sample(rng)
            population[j][index] = population[j][-1]
            population[j].pop()
            population[target].append(record)
        else:
            record.position += dynamics.jumps[j].sample(rng)

        if count > max_particles:
            raise PopulationCapError(t, count, max_particles)
    return snapshots


def simulate(
    model: ModelSpec, start: Start, config: SimConfig, replica_index: int = 0
) -> List[PopulationSnapshot]:
    """Exact simulation of one replica, recorded at ``config.observation_times``.

    Deterministic given ``(config.master_seed, replica_index)``.
    """
    violations = validate(model) + config.violations()
    if violations:
        raise ModelValidationError(violations)
    rng = replica_rng(config.master_seed, replica_index, POPULATION_STREAM)
    return simulate_population(
        model, start, config.observation_times, config.max_particles, rng
    )


def _simulate_task(
    model: ModelSpec, start: Start, config: SimConfig, replica_index: int
) -> List[PopulationSnapshot]:
    rng = replica_rng(config.master_seed, replica_index, POPULATION_STREAM)
    return simulate_population(model, start, config.observation_times, config.max_particles, rng)


def simulate_replicas(
    model: ModelSpec, start: Start, config: SimConfig
) -> List[List[PopulationSnapshot]]:
    """All replicas of ``config``, ordered by replica index."""
    violations = validate(model) + config.violations()
    if violations:
        raise ModelValidationError(violations)
    logger.info(
        f"Simulating {config.replicas} replicas of '{model.name}' to t={config.horizon}"
    )
    runner = ReplicaRunner(config.workers)
    return runner.map(functools.partial(_simulate_task, model, start, config), config.replicas)


def _check_dimensions(snapshot: PopulationSnapshot, spectral: SpectralReport) -> None:
    if snapshot.d != spectral.d:
        raise DomainError(f"snapshot has d={snapshot.d} but spectral data has d={spectral.d}")


def additive_martingale(snapshot: PopulationSnapshot, spectral: SpectralReport) -> float:
    """W_theta(t) = sum_u exp(-theta X_u - lambda t) V_{J_u}."""
    _check_dimensions(snapshot, spectral)
    if snapshot.is_extinct:
        return 0.0
    exponents = -spectral.theta * snapshot.positions - spectral.lambda_ * snapshot.time
    return float(np.exp(exponents) @ spectral.v_right[snapshot.types])


def derivative_martingale(
    snapshot: PopulationSnapshot, spectral: SpectralReport, v_prime: np.ndarray
) -> float:
    """Z_theta(t) = sum_u exp(-theta X_u - lambda t) [V_J (X_u + lambda' t) - V'_J]."""
    _check_dimensions(snapshot, spectral)
    v_prime = np.asarray(v_prime, dtype=float)
    if v_prime.shape != (spectral.d,):
        raise DomainError(f"v_prime must have length {spectral.d}")
    if snapshot.is_extinct:
        return 0.0
    positions = snapshot.positions
    types = snapshot.types
    weights = np.exp(-spectral.theta * positions - spectral.lambda_ * snapshot.time)
    brackets = spectral.v_right[types] * (positions + spectral.lambda_prime * snapshot.time)
    return float(weights @ (brackets - v_prime[types]))


def census_weights(snapshot: PopulationSnapshot, theta: float) -> np.ndarray:
    """Per-type sums of exp(-theta X_u); their mean is a row of exp(t M(theta))."""
    weights = np.zeros(snapshot.d)
    if not snapshot.is_extinct:
        np.add.at(weights, snapshot.types, np.exp(-theta * snapshot.positions))
    return weights


# Mean population kept this many times below the particle cap
CAP_HEADROOM = 20.0


def cap_limited_horizon(growth: float, max_particles: int, horizon: float) -> float:
    """Largest T <= horizon with exp(growth T) <= max_particles / CAP_HEADROOM."""
    if not growth > 0.0:
        return horizon
    budget = max_particles / CAP_HEADROOM
    if budget <= 1.0:
        raise DomainError(f"max_particles={max_particles} leaves no room for growth")
    return min(horizon, math.log(budget) / growth)


def leftmost_log_correction(theta_star: float, horizon: float) -> float:
    """Lag 3 log(T) / (2 theta* T) of the leftmost particle behind the linear speed at time T."""
    if not (theta_star > 0.0 and horizon > 0.0):
        raise DomainError("theta_star and horizon must be positive")
    return 3.0 * math.log(horizon) / (2.0 * theta_star * horizon)


def _leftmost_task(model: ModelSpec, start: Start, config: SimConfig, replica_index: int) -> float:
    rng = replica_rng(config.master_seed, replica_index, POPULATION_STREAM)
    final = simulate_population(model, start, (config.horizon,), config.max_particles, rng)[-1]
    return final.min_position


def velocity_estimate(
    model: ModelSpec, config: SimConfig, start: Start = (0.0, 0)
) -> Tuple[float, float]:
    """Mean of min_u X_u(T)/T over surviving replicas, with its standard error."""
    violations = validate(model) + config.violations()
    if violations:
        raise ModelValidationError(violations)
    runner = ReplicaRunner(config.workers)
    minima = runner.map(
        functools.partial(_leftmost_task, model, start, config), config.replicas
    )
    survivors = [(m - start[0]) / config.horizon for m in minima if math.isfinite(m)]
    logger.info(f"Velocity run: {len(survivors)}/{config.replicas} replicas survived")
    if not survivors:
        raise AllExtinctError(f"all {config.replicas} replicas went extinct")
    result = estimate(survivors)
    return result.mean, result.stderr


@dataclass
class MartingaleTrajectory:
    """Per-replica (W, Z) series at the observation times, with cross-replica summaries."""

    theta: float
    times: Tuple[float, ...]
    w0: float
    z0: float
    rows: List[Dict[str, Any]] = field(default_factory=list)
    z_stabilized: bool = True

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def _surviving(self, column: str, t: float) -> np.ndarray:
        frame = self.to_frame()
        chosen = frame[(frame["t"] == t) & (frame["population"] > 0)]
        return chosen[column].to_numpy(dtype=float)

    def median_w(self, t: float) -> float:
        values = self._surviving("W", t)
        return float(np.median(values)) if values.size else math.nan

    def median_z(self, t: float) -> float:
        values = self._surviving("Z", t)
        return float(np.median(values)) if values.size else math.nan

    def summary(self) -> Dict[str, Any]:
        frame = self.to_frame()
        per_time = []
        for t in self.times:
            at_t = frame[frame["t"] == t]
            per_time.append(
                {
                    "t": t,
                    "W_mean": estimate(at_t["W"]).to_dict(),
                    "Z_mean": estimate(at_t["Z"]).to_dict(),
                    "W_quantiles": quantile_summary(at_t["W"].to_numpy()),
                    "Z_quantiles": quantile_summary(at_t["Z"].to_numpy()),
                    "survivors": int((at_t["population"] > 0).sum()),
                }
            )
        return {
            "theta": self.theta,
            "W0": self.w0,
            "Z0": self.z0,
            "z_stabilized": self.z_stabilized,
            "times": per_time,
        }


def snapshot_row(
    replica: int,
    snapshot: PopulationSnapshot,
    spectral: Optional[SpectralReport] = None,
    v_prime: Optional[np.ndarray] = None,
) -> Dict[str, Any]:
    """One CSV row: replica, t, count per type, min_position, W, Z."""
    row: Dict[str, Any] = {"replica": replica, "t": snapshot.time}
    for j, n in enumerate(snapshot.counts_by_type):
        row[f"count_{j}"] = n
    row["population"] = snapshot.size
    row["min_position"] = snapshot.min_position
    if spectral is not None:
        row["W"] = additive_martingale(snapshot, spectral)
        if v_prime is not None:
            row["Z"] = derivative_martingale(snapshot, spectral, v_prime)
    return row


def _stabilization_gate(medians: List[float], times: Sequence[float], horizon: float) -> bool:
    """Relative change of the median over the last quarter of the horizon stays below 10%."""
    tail = [m for m, t in zip(medians, times) if t >= 0.75 * horizon and math.isfinite(m)]
    if len(tail) < 2:
        return True
    reference = max(abs(tail[-1]), 1e-12)
    return (max(tail) - min(tail)) / reference < 0.1


def martingale_trajectory(
    model: ModelSpec,
    start: Start,
    spectral: SpectralReport,
    config: SimConfig,
    v_prime: Optional[np.ndarray] = None,
) -> MartingaleTrajectory:
    """Evaluate W_theta and Z_theta at every observation time of every replica."""
    if v_prime is None:
        v_prime = spectral_v_prime(model, spectral.theta)
    x, i = _check_start(model, start)
    w0 = math.exp(-spectral.theta * x) * float(spectral.v_right[i])
    z0 = math.exp(-spectral.theta * x) * float(spectral.v_right[i] * x - v_prime[i])

    replicas = simulate_replicas(model, start, config)
    trajectory = MartingaleTrajectory(
        theta=spectral.theta, times=config.observation_times, w0=w0, z0=z0
    )
    for replica, snapshots in enumerate(replicas):
        for snapshot in snapshots:
            trajectory.rows.append(snapshot_row(replica, snapshot, spectral, v_prime))

    medians = [trajectory.median_z(t) for t in config.observation_times]
    trajectory.z_stabilized = _stabilization_gate(
        medians, config.observation_times, config.horizon
    )
    if not trajectory.z_stabilized:
        logger.warning(
            f"Derivative martingale median has not stabilized by t={config.horizon}"
        )
    return trajectory
