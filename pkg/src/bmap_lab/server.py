"""bmap-lab MCP server: branching Markov additive process experiments as tools."""

import asyncio
import logging
from typing import Any, Dict, List, Optional

from fastmcp import FastMCP
from pydantic import ValidationError

from .data_sources.model_catalog import get_model_catalog
from .data_sources.model_file import model_from_dict, model_to_dict
from .errors import AssumptionError, BmapLabError, ModelValidationError
from .models.population import SimConfig
from .tools.experiments import ExperimentConfig, resolve_model, run_experiment
from .tools.fkpp_solver import FkppOptions, front_speed
from .tools.simulator import leftmost_log_correction, velocity_estimate
from .tools.spectral import map_mean_velocity, regime_report, spectral_report

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# Initialize FastMCP server
mcp = FastMCP("Branching MAP Lab")

catalog = get_model_catalog()


def _error(kind: str, error: Exception) -> Dict[str, Any]:
    result: Dict[str, Any] = {"error": kind, "message": str(error)}
    if isinstance(error, ModelValidationError):
        result["violations"] = error.violations
    return result


@mcp.tool()
async def list_bundled_models() -> Dict[str, Any]:
    """
    List the example models shipped with the server.

    Returns:
        Model names with their description and number of types
    """
    models = [
        {"name": name, "description": description, "d": d}
        for name, description, d in catalog.entries()
    ]
    return {"models": models, "count": len(models)}


@mcp.tool()
async def validate_model(model: Dict[str, Any]) -> Dict[str, Any]:
    """
    Check a model document ``{d, types, q, u_laws}`` for structural errors.

    Args:
        model: Model as a JSON object (same schema as model files)

    Returns:
        ``valid`` flag plus the normalized model, or the list of violations
    """
    try:
        spec = model_from_dict(model)
    except ModelValidationError as e:
        return {"valid": False, "violations": e.violations}
    return {"valid": True, "model": model_to_dict(spec)}


@mcp.tool()
async def get_spectral_report(model: str, theta: Optional[float] = None) -> Dict[str, Any]:
    """
    Perron-Frobenius data of M(theta) and the model's regime constants.

    Args:
        model: Bundled model name or path to a model file
        theta: Tilt parameter (default: theta*)

    Returns:
        lambda, V, Y, lambda', theta*, critical speed, extinction vector
    """
    logger.info(f"Spectral report: model={model}, theta={theta}")
    try:
        spec = await resolve_model(model)
        regimes = await asyncio.to_thread(regime_report, spec)
        chosen = regimes.require_growth().theta_star if theta is None else theta
        report = await asyncio.to_thread(spectral_report, spec, chosen)
        return {
            "spectral": report.to_dict(),
            "regime": regimes.to_dict(),
            "regime_of_theta": regimes.regime_of(chosen).value,
            "map_mean_velocity": map_mean_velocity(spec),
        }
    except FileNotFoundError as e:
        return _error("model_not_found", e)
    except AssumptionError as e:
        return _error("assumption_failed", e)
    except BmapLabError as e:
        return _error("spectral_failed", e)


@mcp.tool()
async def estimate_velocity(
    model: str,
    horizon: float = 10.0,
    replicas: int = 200,
    seed: int = 0,
) -> Dict[str, Any]:
    """
    Monte Carlo speed of the leftmost particle, against -lambda'(theta*).

    Args:
        model: Bundled model name or path to a model file
        horizon: Simulation horizon T
        replicas: Number of independent populations
        seed: Master seed

    Returns:
        Estimated speed with standard error and the theoretical value
    """
    logger.info(f"Velocity: model={model}, T={horizon}, replicas={replicas}")
    try:
        spec = await resolve_model(model)
        config = SimConfig(
            horizon=horizon, observation_times=(horizon,), master_seed=seed, replicas=replicas
        )
        speed, stderr = await asyncio.to_thread(velocity_estimate, spec, config)
        regimes = (await asyncio.to_thread(regime_report, spec)).require_growth()
        expected = -regimes.critical_speed
        return {
            "speed_hat": speed,
            "stderr": stderr,
            "expected": expected,
            "expected_at_horizon": expected + leftmost_log_correction(regimes.theta_star, horizon),
        }
    except FileNotFoundError as e:
        return _error("model_not_found", e)
    except BmapLabError as e:
        return _error("simulation_failed", e)


@mcp.tool()
async def fkpp_front_speed(
    model: str,
    kind: str = "step",
    theta: Optional[float] = None,
    t_window: List[float] = [20.0, 40.0],
    dx: float = 0.05,
    dt: float = 0.01,
) -> Dict[str, Any]:
    """
    Front speed of the coupled FKPP system from step or exponential-tail data.

    Args:
        model: Bundled model name or path to a model file
        kind: "step" or "exp_tail"
        theta: Tail exponent for exp_tail data
        t_window: [t1, t2] fitting window
        dx: Grid spacing
        dt: Time step

    Returns:
        Fitted speeds per type with the theoretical speed
    """
    logger.info(f"FKPP front: model={model}, kind={kind}, theta={theta}")
    try:
        spec = await resolve_model(model)
        options = FkppOptions(dx=dx, dt=dt)
        result = await asyncio.to_thread(
            front_speed, spec, kind, (t_window[0], t_window[1]), options, theta
        )
        return result.to_dict()
    except FileNotFoundError as e:
        return _error("model_not_found", e)
    except BmapLabError as e:
        return _error("fkpp_failed", e)


@mcp.tool()
async def run_named_experiment(options: Dict[str, Any]) -> Dict[str, Any]:
    """
    Run one experiment and write its artifacts, as the CLI would.

    Args:
        options: ExperimentConfig fields, e.g. {"command": "many-to-one", "model": "bbm_single",
            "replicas": 2000, "out": "results/m2o"}

    Returns:
        Experiment summary, gate verdict and written files
    """
    try:
        config = ExperimentConfig.model_validate(options)
    except ValidationError as e:
        return {"error": "invalid_options", "message": str(e)}
    logger.info(f"Experiment: {config.command} on {config.model}")
    try:
        outcome = await run_experiment(config)
    except BmapLabError as e:
        return _error("experiment_failed", e)
    except Exception as e:
        logger.exception("Error running experiment")
        return {"error": "experiment_failed", "message": str(e)}
    return {
        "command": outcome.command,
        "gate_passed": outcome.gate_passed,
        "files": outcome.files,
        "out": str(config.out),
        "wall_time_s": outcome.wall_time_s,
        "summary": outcome.summary,
    }


def main() -> None:
    """Entry point for the MCP server."""
    mcp.run()


if __name__ == "__main__":
    main()
