"""Monte Carlo cross-checks between the particle system and the FKPP solver."""

import functools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import DomainError, ModelValidationError
from ..models.model_spec import ModelSpec, validate
from ..models.population import SimConfig
from ..utils.replicas import ReplicaRunner, replica_rng
from ..utils.stats import estimate, z_score
from .fkpp_solver import (
    DEFAULT_FKPP_OPTIONS,
    FkppOptions,
    Grid1D,
    InitialCondition,
    field_from_condition,
    initial_condition,
    solve,
)
from .simulator import POPULATION_STREAM, Start, martingale_trajectory, simulate_population
from .spectral import Regime, regime_report, spectral_report, v_prime

logger = logging.getLogger(__name__)


@dataclass
class WaveProfile:
    """Monte Carlo travelling-wave profile on a grid of evaluation points, one row per type."""

    theta: float
    x: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    extinction_frequency: np.ndarray
    uses_derivative: bool
    stabilized: bool = True
    warnings: List[str] = field(default_factory=list)

    @property
    def d(self) -> int:
        return int(self.values.shape[0])

    def as_condition(self, extinction: np.ndarray) -> InitialCondition:
        """The profile as interpolated initial data, clipped to [0, 1]."""
        return InitialCondition(
            "wave_candidate",
            extinction,
            profile_x=self.x.copy(),
            profile=np.clip(self.values, 0.0, 1.0),
        )

    def squared(self) -> "WaveProfile":
        """Phi^2 as a negative control.

        With M_t the wave product, prod Phi^2 = M_t^2 is a strict submartingale by
        Jensen, so its mean drifts above Phi(x)^2 by Var(M_t).
        """
        return replace(
            self,
            values=self.values ** 2,
            stderr=2.0 * np.abs(self.values) * self.stderr,
            warnings=list(self.warnings),
        )

    def to_rows(self) -> List[Dict[str, Any]]:
        return [
            {
                "x": float(x),
                "type": i,
                "phi_mc": float(self.values[i, k]),
                "stderr": float(self.stderr[i, k]),
            }
            for i in range(self.d)
            for k, x in enumerate(self.x)
        ]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "theta": self.theta,
            "uses_derivative": self.uses_derivative,
            "stabilized": self.stabilized,
            "warnings": self.warnings,
            "extinction_frequency": self.extinction_frequency.tolist(),
            "x": self.x.tolist(),
            "values": self.values.tolist(),
            "stderr": self.stderr.tolist(),
        }


def wave_profile_mc(
    model: ModelSpec,
    theta: float,
    x_points: Sequence[float],
    replicas: int,
    horizon: float,
    seed: int,
    workers: Optional[int] = 1,
    max_particles: int = 1_000_000,
) -> WaveProfile:
    """Phi(x, i) = E_{0,i}[exp(-e^{-theta x} M)], with M = W_theta(T) or Z_theta*(T) at theta*."""
    regimes = regime_report(model).require_growth()
    regime = regimes.regime_of(theta)
    if regime is Regime.SUBCRITICAL:
        raise DomainError(f"theta={theta:g} exceeds theta*={regimes.theta_star:g}: no wave")
    uses_derivative = regime is Regime.CRITICAL
    if uses_derivative:
        theta = regimes.theta_star
    spectral = spectral_report(model, theta)
    derivative = v_prime(model, theta)

    points = np.asarray(x_points, dtype=float)
    scales = np.exp(-theta * points)
    times = tuple(np.linspace(0.5 * horizon, horizon, 6).tolist())
    config = SimConfig(
        horizon=horizon,
        observation_times=times,
        max_particles=max_particles,
        master_seed=seed,
        replicas=replicas,
        workers=workers or 1,
    )
    column = "Z" if uses_derivative else "W"
    values = np.empty((model.d, points.size))
    stderr = np.empty((model.d, points.size))
    extinct = np.empty(model.d)
    warnings: List[str] = []
    stabilized = True

    for i in range(model.d):
        trajectory = martingale_trajectory(model, (0.0, i), spectral, config, derivative)
        frame = trajectory.to_frame()
        final = frame[frame["t"] == times[-1]]
        limits = final[column].to_numpy(dtype=float)
        extinct[i] = float((final["population"] == 0).mean())
        for k, scale in enumerate(scales):
            result = estimate(np.exp(-scale * limits))
            values[i, k] = result.mean
            stderr[i, k] = result.stderr
        medians = [
            trajectory.median_z(t) if uses_derivative else trajectory.median_w(t) for t in times
        ]
        tail = [m for m in medians[-3:] if math.isfinite(m)]
        if len(tail) >= 2 and (max(tail) - min(tail)) > 0.1 * max(abs(tail[-1]), 1e-12):
            stabilized = False
            message = f"type {i}: {column} median not stabilized by t={horizon:g}"
            warnings.append(message)
            logger.warning(message)

    return WaveProfile(
        theta=theta,
        x=points,
        values=values,
        stderr=stderr,
        extinction_frequency=extinct,
        uses_derivative=uses_derivative,
        stabilized=stabilized,
        warnings=warnings,
    )


def _product_task(
    model: ModelSpec,
    start: Start,
    times: Tuple[float, ...],
    max_particles: int,
    seed: int,
    condition: InitialCondition,
    speed: float,
    replica_index: int,
) -> List[float]:
    rng = replica_rng(seed, replica_index, POPULATION_STREAM)
    snapshots = simulate_population(model, start, times, max_particles, rng)
    products = []
    for snapshot in snapshots:
        if snapshot.is_extinct:
            products.append(1.0)
            continue
        shifted = snapshot.positions + speed * snapshot.time
        products.append(float(np.prod(condition(shifted, snapshot.types))))
    return products


def _product_means(
    model: ModelSpec,
    start: Start,
    times: Sequence[float],
    condition: InitialCondition,
    speed: float,
    replicas: int,
    seed: int,
    workers: Optional[int],
    max_particles: int,
) -> np.ndarray:
    """Replica-by-time array of products over the population of condition(X + speed t, J)."""
    runner = ReplicaRunner(workers)
    task = functools.partial(
        _product_task, model, start, tuple(times), max_particles, seed, condition, speed
    )
    return np.array(runner.map(task, replicas), dtype=float)


def martingale_problem_check(
    model: ModelSpec,
    theta: float,
    profile: WaveProfile,
    t_list: Sequence[float],
    replicas: int,
    seed: int,
    start: Start = (0.0, 0),
    workers: Optional[int] = 1,
    max_particles: int = 1_000_000,
) -> List[Dict[str, Any]]:
    """z-scores of E_{x,i}[prod Phi(X_u(t) + rho t, J_u(t))] against Phi(x, i)."""
    violations = validate(model)
    if violations:
        raise ModelValidationError(violations)
    regimes = regime_report(model).require_growth()
    if regimes.regime_of(theta) is Regime.CRITICAL:
        theta = regimes.theta_star
    report = spectral_report(model, theta)
    speed = report.speed
    condition = profile.as_condition(regimes.extinction)
    x, i = float(start[0]), int(start[1])
    target = float(condition(np.array([x]), np.array([i]))[0])

    products = _product_means(
        model, start, sorted(t_list), condition, speed, replicas, seed, workers, max_particles
    )
    results = []
    for column, t in enumerate(sorted(t_list)):
        result = estimate(products[:, column])
        z = z_score(result.mean - target, result.stderr)
        results.append(
            {"t": t, "mean": result.mean, "stderr": result.stderr, "target": target, "z": z}
        )
    logger.info(
        f"Martingale problem at theta={theta:g}: z = {[round(r['z'], 2) for r in results]}"
    )
    return results


@dataclass
class RepresentationResult:
    """Monte Carlo product estimate against the PDE field at sample points."""

    t: float
    rows: List[Dict[str, Any]]
    max_gap: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_gap <= self.tolerance

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t": self.t,
            "points": self.rows,
            "max_gap": self.max_gap,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def representation_check(
    model: ModelSpec,
    kind: str,
    t: float,
    points: Sequence[Tuple[float, int]],
    replicas: int,
    seed: int,
    options: FkppOptions = DEFAULT_FKPP_OPTIONS,
    theta: Optional[float] = None,
    value: Optional[Sequence[float]] = None,
    workers: Optional[int] = 1,
    max_particles: int = 1_000_000,
) -> RepresentationResult:
    """max |E_{x,i}[prod u0(X_u(t), J_u(t))] - u(t, x, i)| over the points."""
    if not t >= 0.0:
        raise DomainError(f"t must be >= 0, got {t}")
    if not points:
        raise DomainError("representation_check needs at least one point")
    condition = initial_condition(model, kind, theta=theta, value=value)

    xs = [float(x) for x, _ in points]
    margin = 20.0 + options.padding + model.max_abs_jump
    grid = Grid1D.from_spacing(min(xs) - margin, max(xs) + margin, options.dx)
    current = field_from_condition(grid, model, condition)
    final = solve(current, model, t, options.dt, max(1, int(round(t / options.dt))), options).final

    rows = []
    worst_se = 0.0
    for index, (x, i) in enumerate(points):
        if t == 0.0:
            pde = float(condition(np.array([x]), np.array([i]))[0])
        else:
            pde = final.at(x, i)
        products = _product_means(
            model, (x, i), (t,), condition, 0.0, replicas, seed + index, workers, max_particles
        )
        mc = estimate(products[:, 0])
        worst_se = max(worst_se, mc.stderr if math.isfinite(mc.stderr) else 0.0)
        rows.append(
            {
                "x": x,
                "type": i,
                "mc": mc.mean,
                "stderr": mc.stderr,
                "pde": pde,
                "gap": abs(mc.mean - pde),
            }
        )
    max_gap = max(r["gap"] for r in rows)
    tolerance = max(0.02, 4.0 * worst_se)
    logger.info(f"Representation check ({kind}, t={t:g}): max gap {max_gap:.4g} vs {tolerance:.4g}")
    return RepresentationResult(t=t, rows=rows, max_gap=max_gap, tolerance=tolerance)
