"""Spine (tilted) dynamics and the identities that tie them to the branching system."""

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..errors import DomainError, ModelValidationError
from ..models.model_spec import (
    DiscreteLaw,
    ModelSpec,
    MotionSpec,
    TypeSpec,
    size_biased,
    switch_transform,
    validate,
)
from ..models.population import PopulationSnapshot
from ..utils.linalg import pf_eigenpair, stationary_distribution
from ..utils.replicas import ReplicaRunner, replica_rng
from ..utils.sampling import DiscreteSampler, switch_target_samplers
from ..utils.stats import Estimate, estimate, two_sample_z
from .simulator import POPULATION_STREAM, Start, simulate_population
from .spectral import SpectralReport, map_exponent, pf_lambda, spectral_report

logger = logging.getLogger(__name__)

SPINE_STREAM = 1
MAP_STREAM = 2

TestFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class TiltedModel:
    """Characteristics of the spine MAP at parameter theta."""

    theta: float
    q_tilde: np.ndarray
    u_tilde: Tuple[Tuple[DiscreteLaw, ...], ...]
    motion_tilde: Tuple[MotionSpec, ...]
    spine_branch_rate: np.ndarray
    spine_offspring: Tuple[DiscreteLaw, ...]

    @property
    def d(self) -> int:
        return len(self.motion_tilde)

    def as_map(self) -> ModelSpec:
        """The tilted MAP as a model without branching."""
        return ModelSpec(
            d=self.d,
            types=tuple(TypeSpec(motion=m) for m in self.motion_tilde),
            q=tuple(tuple(row) for row in self.q_tilde.tolist()),
            u_laws=self.u_tilde,
            name=f"tilted(theta={self.theta:g})",
        )

    def stationary(self) -> np.ndarray:
        return stationary_distribution(self.q_tilde)


@dataclass(frozen=True, eq=False)
class SpinePath:
    """One MAP trajectory sampled at its event times, plus fission marks."""

    times: np.ndarray
    positions: np.ndarray
    types: np.ndarray
    fission_marks: Tuple[Tuple[float, int], ...] = ()

    def __post_init__(self) -> None:
        if not (len(self.times) == len(self.positions) == len(self.types)) or len(self.times) == 0:
            raise DomainError("path times, positions and types must be aligned and non-empty")

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def final_position(self) -> float:
        return float(self.positions[-1])

    @property
    def final_type(self) -> int:
        return int(self.types[-1])

    def to_frame(self) -> pd.DataFrame:
        fissions = dict(self.fission_marks)
        return pd.DataFrame(
            {
                "time": self.times,
                "position": self.positions,
                "type": self.types,
                "fission": [int(fissions.get(float(t), 0)) for t in self.times],
            }
        )


def tilt_model(model: ModelSpec, spectral: SpectralReport) -> TiltedModel:
    """Tilted switching, jump laws and motions, with size-biased fission data."""
    theta = spectral.theta
    if not theta > 0.0:
        raise DomainError(f"tilting requires theta > 0, got {theta}")
    if spectral.d != model.d:
        raise DomainError(f"spectral data has d={spectral.d}, model has d={model.d}")
    d = model.d
    v = spectral.v_right
    g = switch_transform(model, theta)
    q = model.q_matrix

    q_tilde = np.zeros((d, d))
    for k in range(d):
        for j in range(d):
            if j != k:
                q_tilde[k, j] = q[k, j] * v[j] * g[k, j] / v[k]
        q_tilde[k, k] = -q_tilde[k].sum()

    u_tilde = tuple(
        tuple(
            model.u_law(k, j).tilted(theta) if j != k else DiscreteLaw.point_mass()
            for j in range(d)
        )
        for k in range(d)
    )

    motions = []
    for spec in model.types:
        motion = spec.motion
        jump_rate = 0.0
        jump_law = motion.jump_law
        if motion.jump_rate > 0.0:
            jump_rate = motion.jump_rate * motion.jump_law.laplace(theta)
            jump_law = motion.jump_law.tilted(theta)
        motions.append(
            MotionSpec(
                sigma2=motion.sigma2,
                drift=motion.drift - theta * motion.sigma2,
                jump_rate=jump_rate,
                jump_law=jump_law,
            )
        )

    return TiltedModel(
        theta=theta,
        q_tilde=q_tilde,
        u_tilde=u_tilde,
        motion_tilde=tuple(motions),
        spine_branch_rate=model.branch_rates * model.offspring_means,
        spine_offspring=tuple(size_biased(t.offspring) for t in model.types),
    )


def _simulate_map_path(
    motions: Sequence[MotionSpec],
    q: np.ndarray,
    u_laws: Sequence[Sequence[DiscreteLaw]],
    fission_rates: np.ndarray,
    fission_laws: Sequence[DiscreteLaw],
    start: Start,
    horizon: float,
    rng: np.random.Generator,
) -> SpinePath:
    d = len(motions)
    x, i = float(start[0]), int(start[1])
    if not 0 <= i < d:
        raise DomainError(f"start type {i} outside [0, {d})")
    switch_rates = -np.diag(q)
    jump_samplers = [DiscreteSampler(m.jump_law) for m in motions]
    fission_samplers = [DiscreteSampler(law) for law in fission_laws]
    u_samplers = [[DiscreteSampler(u_laws[k][j]) for j in range(d)] for k in range(d)]
    target_samplers = switch_target_samplers(q)
    sigmas = [math.sqrt(m.sigma2) for m in motions]

    times, positions, types = [0.0], [x], [i]
    marks: List[Tuple[float, int]] = []
    t = 0.0
    while True:
        rate = switch_rates[i] + motions[i].jump_rate + fission_rates[i]
        t_next = t + float(rng.exponential(1.0 / rate)) if rate > 0.0 else math.inf
        step_end = min(t_next, horizon)
        dt = step_end - t
        x += motions[i].drift * dt
        if sigmas[i] > 0.0:
            x += sigmas[i] * math.sqrt(dt) * float(rng.standard_normal())
        t = step_end
        if t_next > horizon:
            times.append(t)
            positions.append(x)
            types.append(i)
            break

        v = float(rng.random()) * rate
        if v < switch_rates[i]:
            target_sampler = target_samplers[i]
            assert target_sampler is not None
            target = int(target_sampler.sample(rng))
            x += u_samplers[i][target].sample(rng)
            i = target
        elif v < switch_rates[i] + motions[i].jump_rate:
            x += jump_samplers[i].sample(rng)
        else:
            marks.append((t, int(fission_samplers[i].sample(rng))))
        times.append(t)
        positions.append(x)
        types.append(i)

    return SpinePath(
        times=np.array(times),
        positions=np.array(positions),
        types=np.array(types, dtype=int),
        fission_marks=tuple(marks),
    )


def simulate_spine(
    tilted: TiltedModel, start: Start, horizon: float, seed: int, replica_index: int = 0
) -> SpinePath:
    """Tilted MAP path with fission marks at rate beta_i m_i (subtrees are not grown)."""
    if not horizon >= 0.0:
        raise DomainError(f"horizon must be >= 0, got {horizon}")
    rng = replica_rng(seed, replica_index, SPINE_STREAM)
    return _simulate_map_path(
        tilted.motion_tilde,
        tilted.q_tilde,
        tilted.u_tilde,
        tilted.spine_branch_rate,
        tilted.spine_offspring,
        start,
        horizon,
        rng,
    )


def simulate_map_path(
    model: ModelSpec, start: Start, horizon: float, rng: np.random.Generator
) -> SpinePath:
    """Untilted MAP trajectory of the model, ignoring branching."""
    return _simulate_map_path(
        [t.motion for t in model.types],
        model.q_matrix,
        [[model.u_law(k, j) for j in range(model.d)] for k in range(model.d)],
        np.zeros(model.d),
        [DiscreteLaw.point_mass(1.0)] * model.d,
        start,
        horizon,
        rng,
    )


def _spine_endpoint_task(
    tilted: TiltedModel, start: Start, horizon: float, seed: int, replica_index: int
) -> Tuple[float, int]:
    path = simulate_spine(tilted, start, horizon, seed, replica_index)
    return path.final_position, path.final_type


def spine_endpoints(
    tilted: TiltedModel,
    start: Start,
    horizon: float,
    replicas: int,
    seed: int,
    workers: Optional[int] = 1,
) -> List[Tuple[float, int]]:
    runner = ReplicaRunner(workers)
    return runner.map(
        functools.partial(_spine_endpoint_task, tilted, start, horizon, seed), replicas
    )


def spine_speed(
    tilted: TiltedModel,
    horizon: float,
    replicas: int,
    seed: int,
    start: Start = (0.0, 0),
    workers: Optional[int] = 1,
) -> Tuple[float, float]:
    """Mean of X_spine(T)/T over ``replicas`` paths, with its standard error."""
    if not horizon > 0.0:
        raise DomainError(f"horizon must be > 0, got {horizon}")
    endpoints = spine_endpoints(tilted, start, horizon, replicas, seed, workers)
    result = estimate((x - start[0]) / horizon for x, _ in endpoints)
    logger.info(f"Spine speed at theta={tilted.theta:g}: {result.mean:.6g} +/- {result.stderr:.2g}")
    return result.mean, result.stderr


def tilted_spectral_check(
    model: ModelSpec, theta: float, alpha_grid: Optional[Sequence[float]] = None
) -> float:
    """max over alpha of |PF(F_tilde(alpha)) - (lambda(alpha + theta) - lambda(theta))|."""
    report = spectral_report(model, theta)
    tilted = tilt_model(model, report)
    tilted_map = tilted.as_map()
    if alpha_grid is None:
        alpha_grid = np.linspace(-0.45 * theta, 0.45 * theta, 11)
    deviation = 0.0
    for alpha in alpha_grid:
        shifted, _, _ = pf_eigenpair(map_exponent(tilted_map, float(alpha)))
        expected = pf_lambda(model, float(alpha) + theta) - report.lambda_
        deviation = max(deviation, abs(shifted - expected))
    logger.debug(f"Tilted spectral check at theta={theta:g}: max deviation {deviation:.3e}")
    return deviation


def tilt_weight(path: SpinePath, model: ModelSpec, spectral: SpectralReport) -> float:
    """Xi_theta(t) / Xi_theta(0) along an untilted MAP trajectory."""
    if spectral.d != model.d:
        raise DomainError(f"spectral data has d={spectral.d}, model has d={model.d}")
    if np.any(np.diff(path.times) < 0.0):
        raise DomainError("path times must be non-decreasing")
    if np.any((path.types < 0) | (path.types >= model.d)):
        raise DomainError("path types outside the model's type range")
    growth = model.growth_rates
    durations = np.diff(path.times)
    integral = float(growth[path.types[:-1]] @ durations)
    exponent = (
        -spectral.theta * (path.final_position - float(path.positions[0]))
        - spectral.lambda_ * (path.horizon - float(path.times[0]))
        + integral
    )
    v = spectral.v_right
    return math.exp(exponent) * float(v[path.final_type] / v[int(path.types[0])])


def _one(positions: np.ndarray, types: np.ndarray) -> np.ndarray:
    return np.ones_like(positions)


def _exp_abs(positions: np.ndarray, types: np.ndarray) -> np.ndarray:
    return np.exp(-np.abs(positions)) / (types + 1.0)


def _type_indicator(j: int) -> TestFunction:
    def indicator(positions: np.ndarray, types: np.ndarray) -> np.ndarray:
        return (types == j).astype(float)

    return indicator


# Versioned catalog of many-to-one test functions g(x, j)
TEST_FUNCTION_CATALOG_VERSION = 1
TEST_FUNCTIONS = ("one", "type_indicator:<j>", "exp_abs")


def catalog_function(function_id: str, d: int) -> TestFunction:
    """Resolve a catalog id: ``one``, ``type_indicator:<j>`` or ``exp_abs``."""
    if function_id == "one":
        return _one
    if function_id == "exp_abs":
        return _exp_abs
    if function_id.startswith("type_indicator:"):
        try:
            j = int(function_id.split(":", 1)[1])
        except ValueError:
            raise DomainError(f"bad type index in test function id {function_id!r}") from None
        if not 0 <= j < d:
            raise DomainError(f"type index {j} outside [0, {d})")
        return _type_indicator(j)
    raise DomainError(f"unknown test function {function_id!r}; expected one of {TEST_FUNCTIONS}")


@dataclass
class ManyToOneResult:
    """Population-side and spine-side estimates of the many-to-one identity."""

    test_function: str
    theta: float
    t: float
    lhs: Estimate
    rhs: Estimate
    z_score: float
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "test_function": self.test_function,
            "catalog_version": TEST_FUNCTION_CATALOG_VERSION,
            "theta": self.theta,
            "t": self.t,
            "lhs": self.lhs.to_dict(),
            "rhs": self.rhs.to_dict(),
            "z_score": self.z_score,
            **self.extra,
        }


def _weighted_sum_task(
    model: ModelSpec,
    start: Start,
    t: float,
    max_particles: int,
    seed: int,
    function_id: str,
    theta: float,
    lam: float,
    v: np.ndarray,
    replica_index: int,
) -> float:
    rng = replica_rng(seed, replica_index, POPULATION_STREAM)
    snapshot: PopulationSnapshot = simulate_population(model, start, (t,), max_particles, rng)[-1]
    if snapshot.is_extinct:
        return 0.0
    g = catalog_function(function_id, model.d)
    positions, types = snapshot.positions, snapshot.types
    weights = np.exp(-theta * positions - lam * t) * v[types]
    return float(g(positions, types) @ weights)


def many_to_one_check(
    model: ModelSpec,
    theta: float,
    t: float,
    test_function_id: str,
    replicas: int,
    seed: int,
    start: Start = (0.0, 0),
    workers: Optional[int] = 1,
    max_particles: int = 1_000_000,
) -> ManyToOneResult:
    """Compare the population sum against the spine marginal for one catalog g."""
    violations = validate(model)
    if violations:
        raise ModelValidationError(violations)
    g = catalog_function(test_function_id, model.d)
    report = spectral_report(model, theta)
    tilted = tilt_model(model, report)
    x, i = float(start[0]), int(start[1])
    runner = ReplicaRunner(workers)

    sums = runner.map(
        functools.partial(
            _weighted_sum_task,
            model,
            start,
            t,
            max_particles,
            seed,
            test_function_id,
            theta,
            report.lambda_,
            report.v_right,
        ),
        replicas,
    )
    scale = math.exp(theta * x) / float(report.v_right[i])
    lhs = estimate(scale * s for s in sums)

    endpoints = spine_endpoints(tilted, start, t, replicas, seed, workers)
    positions = np.array([p for p, _ in endpoints])
    types = np.array([j for _, j in endpoints], dtype=int)
    rhs = estimate(g(positions, types))

    z = two_sample_z(lhs, rhs)
    logger.info(
        f"Many-to-one [{test_function_id}] theta={theta:g} t={t:g}: "
        f"lhs={lhs.mean:.5g} rhs={rhs.mean:.5g} z={z:.2f}"
    )
    return ManyToOneResult(test_function_id, theta, t, lhs, rhs, z)


def _tilt_weight_task(
    model: ModelSpec,
    spectral: SpectralReport,
    start: Start,
    t: float,
    seed: int,
    replica_index: int,
) -> float:
    rng = replica_rng(seed, replica_index, MAP_STREAM)
    return tilt_weight(simulate_map_path(model, start, t, rng), model, spectral)


def tilt_weight_mean(
    model: ModelSpec,
    spectral: SpectralReport,
    t: float,
    replicas: int,
    seed: int,
    start: Start = (0.0, 0),
    workers: Optional[int] = 1,
) -> Estimate:
    """Monte Carlo mean of Xi_theta(t)/Xi_theta(0) over untilted MAP paths (should be 1)."""
    runner = ReplicaRunner(workers)
    return estimate(
        runner.map(
            functools.partial(_tilt_weight_task, model, spectral, start, t, seed), replicas
        )
    )


def spine_occupancy(
    tilted: TiltedModel, start: Start, t: float, replicas: int, seed: int
) -> np.ndarray:
    """Empirical law of J_spine(t), to be compared with rows of exp(t q_tilde)."""
    counts = np.zeros(tilted.d)
    for _, j in spine_endpoints(tilted, start, t, replicas, seed):
        counts[j] += 1
    return counts / replicas

