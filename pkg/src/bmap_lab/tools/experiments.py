"""Experiment configuration and orchestration shared by the CLI and the MCP server."""

import asyncio
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple, get_args

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..data_sources.model_catalog import get_model_catalog
from ..data_sources.model_file import load_model, model_digest
from ..data_sources.results_writer import ResultsWriter
from ..errors import AssumptionError, DomainError, GateFailure
from ..models.model_spec import ModelSpec
from ..models.population import SimConfig
from ..utils.replicas import default_workers
from ..utils.stats import estimate, z_score
from .fkpp_solver import (
    DEFAULT_FKPP_OPTIONS,
    FkppField,
    FkppOptions,
    Grid1D,
    default_level,
    front_grid,
    front_position,
    front_speed,
    init_field,
    solve,
)
from .simulator import (
    cap_limited_horizon,
    leftmost_log_correction,
    martingale_trajectory,
    simulate_replicas,
    snapshot_row,
    velocity_estimate,
)
from .spectral import (
    Regime,
    RegimeReport,
    map_mean_velocity,
    map_velocity_from_exponent,
    regime_report,
    spectral_report,
    v_prime,
)
from .spine import many_to_one_check, simulate_spine, spine_speed, tilt_model, tilted_spectral_check
from .wave_checks import martingale_problem_check, representation_check, wave_profile_mc

logger = logging.getLogger(__name__)

Command = Literal[
    "spectral-report",
    "simulate",
    "velocity",
    "martingales",
    "many-to-one",
    "spine-speed",
    "fkpp-front",
    "wave-compare",
    "representation-check",
]
COMMANDS: Tuple[str, ...] = get_args(Command)


def parse_grid(text: str) -> Grid1D:
    """Parse ``"xmin,xmax,n"``."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"grid must be 'xmin,xmax,n', got {text!r}")
    try:
        return Grid1D(float(parts[0]), float(parts[1]), int(parts[2]))
    except DomainError as e:
        raise ValueError(str(e)) from e


def model_reference_exists(reference: str) -> bool:
    return Path(reference).is_file() or get_model_catalog().get(reference) is not None


class ExperimentConfig(BaseModel):
    """Validated options of one experiment run."""

    model_config = ConfigDict(extra="forbid")

    command: Command
    model: str
    theta: Optional[float] = Field(None, gt=0.0)
    horizon: float = Field(10.0, gt=0.0, le=1e4)
    replicas: int = Field(1000, ge=1, le=10_000_000)
    seed: int = Field(0, ge=0, lt=2**64)
    grid: Optional[str] = None
    dt: Optional[float] = Field(None, gt=0.0)
    out: Path = Path("results")
    workers: int = Field(default_factory=default_workers, ge=1)
    gate: bool = False
    kind: Literal["step", "exp_tail", "constant"] = "step"
    test_function: str = "one"
    t_window: Tuple[float, float] = (20.0, 40.0)
    t_list: List[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0])
    start_type: int = Field(0, ge=0)
    level: Optional[float] = Field(None, gt=0.0, lt=1.0)
    max_particles: int = Field(1_000_000, ge=1)

    @field_validator("grid")
    @classmethod
    def _check_grid(cls, value: Optional[str]) -> Optional[str]:
        if value is not None:
            parse_grid(value)
        return value

    @field_validator("t_window")
    @classmethod
    def _check_window(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if not value[1] > value[0] >= 0.0:
            raise ValueError("t_window must satisfy t2 > t1 >= 0")
        return value

    @field_validator("t_list")
    @classmethod
    def _check_times(cls, value: List[float]) -> List[float]:
        if not value or any(t < 0.0 for t in value):
            raise ValueError("t_list must be a non-empty list of non-negative times")
        return sorted(value)

    @model_validator(mode="after")
    def _check_model(self) -> "ExperimentConfig":
        if not model_reference_exists(self.model):
            raise ValueError(f"model {self.model!r} is neither a file nor a bundled model")
        return self

    @property
    def parsed_grid(self) -> Optional[Grid1D]:
        return parse_grid(self.grid) if self.grid else None

    def fkpp_options(self) -> FkppOptions:
        grid = self.parsed_grid
        return FkppOptions(
            dx=grid.dx if grid else DEFAULT_FKPP_OPTIONS.dx,
            dt=self.dt or DEFAULT_FKPP_OPTIONS.dt,
            level=self.level,
        )


async def resolve_model(reference: str) -> ModelSpec:
    """A model file path or the name of a bundled model."""
    if Path(reference).is_file():
        return await load_model(reference)
    model = get_model_catalog().get(reference)
    if model is None:
        raise FileNotFoundError(f"Model not found: {reference}")
    return model


@dataclass
class ExperimentOutcome:
    command: str
    summary: Dict[str, Any]
    gate_passed: Optional[bool]
    files: List[str] = field(default_factory=list)
    wall_time_s: float = 0.0

    def check_gate(self) -> None:
        if self.gate_passed is False:
            raise GateFailure(f"{self.command}: acceptance gate failed")


@dataclass
class _Result:
    summary: Dict[str, Any]
    gate_passed: Optional[bool] = None
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)


class ExperimentRunner:
    """Runs one named experiment and writes its artifacts."""

    Z_GATE = 4.0
    SPEED_TOLERANCE = 0.08
    VELOCITY_TOLERANCE = 0.15
    WAVE_TOLERANCE = 0.05
    THETA_STAR_TOLERANCE = 1e-8
    CONTROL_Z = 6.0

    def __init__(self, config: ExperimentConfig) -> None:
        self.config = config
        self._handlers: Dict[str, Callable[[ModelSpec], _Result]] = {
            "spectral-report": self._spectral_report,
            "simulate": self._simulate,
            "velocity": self._velocity,
            "martingales": self._martingales,
            "many-to-one": self._many_to_one,
            "spine-speed": self._spine_speed,
            "fkpp-front": self._fkpp_front,
            "wave-compare": self._wave_compare,
            "representation-check": self._representation_check,
        }

    async def run(self) -> ExperimentOutcome:
        config = self.config
        model = await resolve_model(config.model)
        logger.info(f"Running {config.command} on model '{model.name or config.model}'")
        started = time.perf_counter()
        result = await asyncio.to_thread(self._handlers[config.command], model)
        wall_time = time.perf_counter() - started

        writer = ResultsWriter(config.out)
        for name, frame in result.tables.items():
            await writer.write_csv(name, frame)
        summary = dict(result.summary)
        summary["command"] = config.command
        summary["gate_passed"] = result.gate_passed
        await writer.write_json(f"{config.command.replace('-', '_')}.json", summary)
        await writer.write_manifest(
            command=config.command,
            inputs=config.model_dump(mode="json"),
            model_sha256=model_digest(model),
            seeds={"master_seed": config.seed, "replicas": config.replicas},
            wall_time_s=wall_time,
        )
        logger.info(f"{config.command} finished in {wall_time:.2f}s (gate: {result.gate_passed})")
        return ExperimentOutcome(
            command=config.command,
            summary=summary,
            gate_passed=result.gate_passed,
            files=sorted(writer.written),
            wall_time_s=wall_time,
        )

    # Helpers

    def _sim_config(self, times: Tuple[float, ...], horizon: Optional[float] = None) -> SimConfig:
        config = self.config
        return SimConfig(
            horizon=config.horizon if horizon is None else horizon,
            observation_times=times,
            max_particles=config.max_particles,
            master_seed=config.seed,
            replicas=config.replicas,
            workers=config.workers,
        )

    def _start(self, model: ModelSpec) -> Tuple[float, int]:
        if self.config.start_type >= model.d:
            raise DomainError(f"start_type {self.config.start_type} outside [0, {model.d})")
        return 0.0, self.config.start_type

    def _regimes(self, model: ModelSpec) -> RegimeReport:
        return regime_report(model).require_growth()

    def _theta(self, model: ModelSpec) -> float:
        if self.config.theta is not None:
            return self.config.theta
        return self._regimes(model).theta_star

    # Commands

    def _spectral_report(self, model: ModelSpec) -> _Result:
        summary: Dict[str, Any] = {}
        gate: Optional[bool] = None
        try:
            regimes = self._regimes(model)
        except AssumptionError as e:
            if self.config.theta is None:
                raise
            regimes = None
            summary["assumption_error"] = str(e)
        theta = self.config.theta if self.config.theta is not None else regimes.theta_star  # type: ignore[union-attr]
        report = spectral_report(model, theta)
        summary["spectral"] = report.to_dict()
        summary["map_velocity"] = {
            "stationary_mean": map_mean_velocity(model),
            "from_exponent": map_velocity_from_exponent(model),
        }
        if regimes is not None:
            star = spectral_report(model, regimes.theta_star)
            residual = abs(star.lambda_ - regimes.theta_star * star.lambda_prime)
            summary["regime"] = regimes.to_dict()
            summary["regime_of_theta"] = regimes.regime_of(theta).value
            summary["additive_l1_convergent"] = regimes.additive_l1_convergent(theta)
            summary["theta_star_residual"] = residual
            gate = residual <= self.THETA_STAR_TOLERANCE * max(1.0, abs(star.lambda_))
        return _Result(summary, gate)

    def _spectral_or_none(self, model: ModelSpec) -> Optional[Tuple[Any, np.ndarray]]:
        try:
            theta = self._theta(model)
        except AssumptionError as e:
            logger.warning(f"Martingale columns skipped: {e}")
            return None
        return spectral_report(model, theta), v_prime(model, theta)

    def _simulate(self, model: ModelSpec) -> _Result:
        times = tuple(np.linspace(0.0, self.config.horizon, 11).tolist())
        config = self._sim_config(times)
        spectral = self._spectral_or_none(model)
        replicas = simulate_replicas(model, self._start(model), config)
        extra = spectral or ()
        rows = [
            snapshot_row(replica, snapshot, *extra)
            for replica, snapshots in enumerate(replicas)
            for snapshot in snapshots
        ]
        frame = pd.DataFrame(rows)
        final = frame[frame["t"] == times[-1]]
        summary = {
            "replicas": config.replicas,
            "horizon": config.horizon,
            "survival_fraction": float((final["population"] > 0).mean()),
            "mean_final_population": float(final["population"].mean()),
        }
        return _Result(summary, None, {"simulate.csv": frame})

    def _velocity(self, model: ModelSpec) -> _Result:
        regimes = self._regimes(model)
        horizon = cap_limited_horizon(regimes.lambda0, self.config.max_particles, self.config.horizon)
        if horizon < self.config.horizon:
            logger.warning(
                f"Velocity horizon capped at {horizon:.3g} (requested {self.config.horizon:g})"
            )
        config = self._sim_config((horizon,), horizon)
        speed, stderr = velocity_estimate(model, config, self._start(model))
        expected = -regimes.critical_speed
        corrected = expected + leftmost_log_correction(regimes.theta_star, horizon)
        relative = abs(speed - corrected) / abs(expected)
        summary = {
            "speed_hat": speed,
            "stderr": stderr,
            "horizon": horizon,
            "cap_limited": horizon < self.config.horizon,
            "expected": expected,
            "expected_at_horizon": corrected,
            "relative_error": relative,
            "relative_error_uncorrected": abs(speed - expected) / abs(expected),
            "tolerance": self.VELOCITY_TOLERANCE,
        }
        return _Result(summary, relative <= self.VELOCITY_TOLERANCE)

    def _martingales(self, model: ModelSpec) -> _Result:
        theta = self._theta(model)
        horizon = self.config.horizon
        gated = [t for t in self.config.t_list if t <= horizon]
        grid_times = np.linspace(0.0, horizon, 21).tolist()
        times = tuple(sorted(set(grid_times) | set(gated)))
        spectral = spectral_report(model, theta)
        trajectory = martingale_trajectory(
            model, self._start(model), spectral, self._sim_config(times)
        )
        summary = trajectory.summary()
        frame = trajectory.to_frame()
        checks = []
        for t in gated:
            at_t = frame[frame["t"] == t]
            checks.append(
                {
                    "t": t,
                    "W_z": estimate(at_t["W"]).z_against(trajectory.w0),
                    "Z_z": estimate(at_t["Z"]).z_against(trajectory.z0),
                }
            )
        summary["mean_checks"] = checks
        passed = all(
            abs(c["W_z"]) <= self.Z_GATE and abs(c["Z_z"]) <= self.Z_GATE for c in checks
        )
        return _Result(summary, passed, {"martingales.csv": frame})

    def _many_to_one(self, model: ModelSpec) -> _Result:
        theta = self._theta(model)
        result = many_to_one_check(
            model,
            theta,
            self.config.horizon,
            self.config.test_function,
            self.config.replicas,
            self.config.seed,
            start=self._start(model),
            workers=self.config.workers,
            max_particles=self.config.max_particles,
        )
        return _Result(result.to_dict(), abs(result.z_score) <= self.Z_GATE)

    def _spine_speed(self, model: ModelSpec) -> _Result:
        theta = self._theta(model)
        report = spectral_report(model, theta)
        tilted = tilt_model(model, report)
        start = self._start(model)
        speed, stderr = spine_speed(
            tilted,
            self.config.horizon,
            self.config.replicas,
            self.config.seed,
            start=start,
            workers=self.config.workers,
        )
        expected = -report.lambda_prime
        z = z_score(speed - expected, stderr)
        path = simulate_spine(tilted, start, self.config.horizon, self.config.seed)
        summary = {
            "theta": theta,
            "speed_hat": speed,
            "stderr": stderr,
            "expected": expected,
            "z_score": z,
            "tilted_spectral_deviation": tilted_spectral_check(model, theta),
            "q_tilde": tilted.q_tilde.tolist(),
        }
        return _Result(summary, abs(z) <= self.Z_GATE, {"spine_path.csv": path.to_frame()})

    def _fkpp_front(self, model: ModelSpec) -> _Result:
        kind = self.config.kind
        if kind == "constant":
            raise DomainError("fkpp-front needs step or exp_tail initial data")
        theta = self.config.theta if kind == "exp_tail" else None
        if kind == "exp_tail" and theta is None:
            raise DomainError("exp_tail initial data needs --theta")
        result = front_speed(
            model,
            kind,
            self.config.t_window,
            self.config.fkpp_options(),
            theta=theta,
            grid=self.config.parsed_grid,
        )
        relative = np.abs(result.speeds - result.theoretical_speed) / result.theoretical_speed
        summary = result.to_dict()
        summary["relative_errors"] = relative.tolist()
        summary["tolerance"] = self.SPEED_TOLERANCE
        passed = bool(np.all(relative <= self.SPEED_TOLERANCE)) and result.clamp_count == 0
        return _Result(summary, passed, {"fronts.csv": pd.DataFrame(result.fit_rows())})

    def _wave_compare(self, model: ModelSpec) -> _Result:
        regimes = self._regimes(model)
        theta = self._theta(model)
        supercritical = regimes.regime_of(theta) is Regime.SUPERCRITICAL
        point_grid = self.config.parsed_grid or Grid1D(-10.0, 10.0, 41)
        profile = wave_profile_mc(
            model,
            theta,
            point_grid.nodes,
            self.config.replicas,
            self.config.horizon,
            self.config.seed,
            workers=self.config.workers,
            max_particles=self.config.max_particles,
        )

        # Travelling PDE profile, aligned on the Monte Carlo front
        options = self.config.fkpp_options()
        t_end = self.config.t_window[1]
        kind = "exp_tail" if supercritical else "step"
        speed = regimes.critical_speed if not supercritical else spectral_report(model, theta).speed
        grid = front_grid(model, speed, t_end, options)
        current = init_field(
            grid, model, kind, theta=theta if supercritical else None, extinction=regimes.extinction
        )
        final = solve(current, model, t_end, options.dt, max(1, int(round(t_end / options.dt))), options).final
        level = options.level if options.level is not None else default_level(regimes.extinction)
        mc_field = FkppField.from_values(
            point_grid,
            0.0,
            np.clip(profile.values, 0.0, 1.0),
            regimes.extinction,
            np.ones(model.d),
        )
        offset = float(front_position(final, level)[0] - front_position(mc_field, level)[0])
        rows = []
        gaps = []
        for row in profile.to_rows():
            shifted = final.at(row["x"] + offset, row["type"])
            rows.append({**row, "phi_pde_shifted": shifted})
            gaps.append(abs(row["phi_mc"] - shifted))

        front_x = float(front_position(mc_field, level)[0])
        checks = martingale_problem_check(
            model,
            theta,
            profile,
            self.config.t_list,
            self.config.replicas,
            self.config.seed + 1,
            start=(front_x, 0),
            workers=self.config.workers,
            max_particles=self.config.max_particles,
        )
        control = martingale_problem_check(
            model,
            theta,
            profile.squared(),
            self.config.t_list,
            self.config.replicas,
            self.config.seed + 2,
            start=(front_x, 0),
            workers=self.config.workers,
            max_particles=self.config.max_particles,
        )
        control_z = max(abs(c["z"]) for c in control)
        tolerance = self.WAVE_TOLERANCE + 4.0 * float(np.max(profile.stderr))
        summary = {
            "profile": profile.to_dict(),
            "alignment_offset": offset,
            "max_gap": max(gaps),
            "tolerance": tolerance,
            "martingale_problem": checks,
            "negative_control": {
                "transform": "squared",
                "checks": control,
                "max_abs_z": control_z,
                "required_abs_z": self.CONTROL_Z,
            },
        }
        passed = (
            profile.stabilized
            and max(gaps) <= tolerance
            and all(abs(c["z"]) <= self.Z_GATE for c in checks)
            and control_z > self.CONTROL_Z
        )
        return _Result(summary, passed, {"wave_compare.csv": pd.DataFrame(rows)})

    def _representation_check(self, model: ModelSpec) -> _Result:
        kind = self.config.kind
        theta = None
        value = None
        if kind == "exp_tail":
            theta = self.config.theta or 0.5 * self._regimes(model).theta_star
        elif kind == "constant":
            value = [0.5] * model.d
        points = [(float(x), k % model.d) for k, x in enumerate(np.linspace(-2.0, 2.0, 5))]
        result = representation_check(
            model,
            kind,
            self.config.horizon,
            points,
            self.config.replicas,
            self.config.seed,
            self.config.fkpp_options(),
            theta=theta,
            value=value,
            workers=self.config.workers,
            max_particles=self.config.max_particles,
        )
        return _Result(result.to_dict(), result.passed, {"representation.csv": pd.DataFrame(result.rows)})


async def run_experiment(config: ExperimentConfig) -> ExperimentOutcome:
    return await ExperimentRunner(config).run()
