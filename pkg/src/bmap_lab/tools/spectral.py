"""Matrix exponent, Perron-Frobenius structure, critical parameter and extinction vector."""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from ..errors import AssumptionError, ConvergenceError, DomainError, ModelValidationError
from ..models.model_spec import (
    ModelSpec,
    klogk_moment,
    laplace_exponent,
    laplace_exponent_derivative,
    offspring_generating_coefficients,
    switch_transform,
    switch_transform_derivative,
    validate,
)
from ..utils.linalg import pf_eigenpair, stationary_distribution

logger = logging.getLogger(__name__)

# Smallest relative tolerance brentq accepts
BRENT_RTOL = 4.0 * np.finfo(float).eps


@dataclass(frozen=True)
class SpectralOptions:
    """Numerical tolerances of the spectral module (part of the public contract)."""

    pf_tolerance: float = 1e-13
    pf_max_iterations: int = 100_000
    theta_star_tolerance: float = 1e-10
    theta_grid_start: float = 1e-3
    theta_grid_points: int = 41
    critical_band: float = 1e-9
    extinction_tolerance: float = 1e-12
    extinction_max_iterations: int = 1_000_000
    extinction_damping: float = 1.0
    v_prime_step: float = 1e-5
    one_sided_step: float = 1e-6


DEFAULT_OPTIONS = SpectralOptions()


class Regime(Enum):
    """Position of theta relative to the critical parameter."""

    SUPERCRITICAL = "supercritical"
    CRITICAL = "critical"
    SUBCRITICAL = "subcritical"


@dataclass(frozen=True, eq=False)
class SpectralReport:
    """M(theta) with its PF eigenvalue, normalized eigenvectors and lambda'(theta)."""

    theta: float
    m_matrix: np.ndarray
    lambda_: float
    v_right: np.ndarray
    y_left: np.ndarray
    lambda_prime: float
    pi: np.ndarray

    @property
    def d(self) -> int:
        return int(self.v_right.shape[0])

    @property
    def speed(self) -> float:
        """rho_theta = lambda(theta) / theta."""
        return self.lambda_ / self.theta if self.theta != 0.0 else math.inf

    def to_dict(self) -> Dict[str, Any]:
        return {
            "theta": self.theta,
            "m_matrix": self.m_matrix.tolist(),
            "lambda": self.lambda_,
            "v_right": self.v_right.tolist(),
            "y_left": self.y_left.tolist(),
            "lambda_prime": self.lambda_prime,
            "pi": self.pi.tolist(),
        }


@dataclass(frozen=True, eq=False)
class RegimeReport:
    """Critical parameter, extinction vector and regime classification of a model."""

    theta_star: float
    lambda0: float
    extinction: np.ndarray
    critical_speed: float
    klogk: np.ndarray = field(default_factory=lambda: np.zeros(0))
    critical_band: float = DEFAULT_OPTIONS.critical_band

    @property
    def survival_possible(self) -> bool:
        return self.lambda0 > 0.0

    @property
    def degenerate(self) -> bool:
        """No growth at theta = 0: extinction is certain and theta* is undefined."""
        return not self.survival_possible

    def require_growth(self) -> "RegimeReport":
        if self.degenerate:
            raise AssumptionError(
                f"no supercritical growth: lambda(0) = {self.lambda0:.6g} <= 0"
            )
        return self

    def regime_of(self, theta: float) -> Regime:
        if abs(theta - self.theta_star) <= self.critical_band * self.theta_star:
            return Regime.CRITICAL
        return Regime.SUPERCRITICAL if theta < self.theta_star else Regime.SUBCRITICAL

    def additive_l1_convergent(self, theta: float) -> bool:
        """L1 convergence of W_theta: supercritical theta and finite k log k moments."""
        return (
            0.0 <= theta
            and self.regime_of(theta) is Regime.SUPERCRITICAL
            and bool(np.all(np.isfinite(self.klogk)))
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "theta_star": self.theta_star,
            "lambda0": self.lambda0,
            "extinction": self.extinction.tolist(),
            "critical_speed": self.critical_speed,
            "klogk": self.klogk.tolist(),
            "survival_possible": self.survival_possible,
            "degenerate": self.degenerate,
        }


def _require_valid(model: ModelSpec) -> None:
    violations = validate(model)
    if violations:
        raise ModelValidationError(violations)


def matrix_exponent(model: ModelSpec, theta: float) -> np.ndarray:
    """M(theta) = diag(phi_i(theta)) + Q o G(theta) + diag(beta_i m_i - beta_i)."""
    _require_valid(model)
    return _matrix_exponent(model, theta)


def _matrix_exponent(model: ModelSpec, theta: float) -> np.ndarray:
    phis = np.array([laplace_exponent(t.motion, theta) for t in model.types])
    return np.diag(phis) + model.q_matrix * switch_transform(model, theta) + np.diag(
        model.growth_rates
    )


def matrix_exponent_derivative(model: ModelSpec, theta: float) -> np.ndarray:
    """Entrywise derivative M'(theta), assembled analytically."""
    phis = np.array([laplace_exponent_derivative(t.motion, theta) for t in model.types])
    return np.diag(phis) + model.q_matrix * switch_transform_derivative(model, theta)


def map_exponent(model: ModelSpec, alpha: float) -> np.ndarray:
    """Exponent F(alpha) = diag(phi_i(alpha)) + Q o G(alpha) of the MAP without branching."""
    phis = np.array([laplace_exponent(t.motion, alpha) for t in model.types])
    return np.diag(phis) + model.q_matrix * switch_transform(model, alpha)


def model_stationary(model: ModelSpec) -> np.ndarray:
    return stationary_distribution(model.q_matrix)


def model_pf(
    model: ModelSpec, theta: float, options: SpectralOptions = DEFAULT_OPTIONS
) -> Tuple[float, np.ndarray, np.ndarray]:
    """(lambda, V, Y) of M(theta) with pi V = 1 and Y V = 1."""
    m = _matrix_exponent(model, theta)
    return pf_eigenpair(
        m,
        normalizer=model_stationary(model),
        tol=options.pf_tolerance,
        max_iterations=options.pf_max_iterations,
    )


def pf_lambda(model: ModelSpec, theta: float, options: SpectralOptions = DEFAULT_OPTIONS) -> float:
    return model_pf(model, theta, options)[0]


def lambda_prime(
    model: ModelSpec, theta: float, options: SpectralOptions = DEFAULT_OPTIONS
) -> float:
    """lambda'(theta) = Y(theta)^T M'(theta) V(theta) for theta > 0."""
    if not theta > 0.0:
        raise DomainError(f"lambda_prime requires theta > 0, got {theta}")
    _, v, y = model_pf(model, theta, options)
    return float(y @ matrix_exponent_derivative(model, theta) @ v)


def _lambda_prime_any(model: ModelSpec, theta: float, options: SpectralOptions) -> float:
    if theta > 0.0:
        return lambda_prime(model, theta, options)
    # Right derivative at zero by a one-sided difference
    h = options.one_sided_step
    return (pf_lambda(model, theta + h, options) - pf_lambda(model, theta, options)) / h


def spectral_report(
    model: ModelSpec, theta: float, options: SpectralOptions = DEFAULT_OPTIONS
) -> SpectralReport:
    """Full PF structure of M(theta) for a validated model."""
    _require_valid(model)
    lam, v, y = model_pf(model, theta, options)
    return SpectralReport(
        theta=float(theta),
        m_matrix=_matrix_exponent(model, theta),
        lambda_=lam,
        v_right=v,
        y_left=y,
        lambda_prime=_lambda_prime_any(model, theta, options),
        pi=model_stationary(model),
    )


def v_prime(model: ModelSpec, theta: float, options: SpectralOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """V'(theta) by central differences of the pi-normalized right eigenvector."""
    h = options.v_prime_step * max(1.0, abs(theta))
    _, v_plus, _ = model_pf(model, theta + h, options)
    _, v_minus, _ = model_pf(model, theta - h, options)
    return (v_plus - v_minus) / (2.0 * h)


def theta_star(model: ModelSpec, options: SpectralOptions = DEFAULT_OPTIONS) -> float:
    """Unique root of h(theta) = theta lambda'(theta) - lambda(theta) on (0, inf)."""
    _require_valid(model)
    lambda0 = pf_lambda(model, 0.0, options)
    if not lambda0 > 0.0:
        raise AssumptionError(f"no supercritical growth: lambda(0) = {lambda0:.6g} <= 0")

    def h(theta: float) -> float:
        if theta == 0.0:
            return -lambda0
        return theta * lambda_prime(model, theta, options) - pf_lambda(model, theta, options)

    lower = 0.0
    upper: Optional[float] = None
    with np.errstate(over="raise", invalid="raise"):
        for k in range(options.theta_grid_points):
            theta = options.theta_grid_start * 2.0**k
            try:
                value = h(theta)
            except (FloatingPointError, OverflowError, DomainError, ConvergenceError):
                break
            if not math.isfinite(value):
                break
            if value > 0.0:
                upper = theta
                break
            lower = theta
    if upper is None:
        raise AssumptionError(
            "lambda(theta)/theta has no interior minimum: no sign change of h on the grid"
        )

    try:
        root = brentq(h, lower, upper, xtol=1e-15, rtol=BRENT_RTOL, maxiter=500)
    except (ValueError, RuntimeError) as e:
        raise ConvergenceError(f"theta* root search failed on [{lower:.3g}, {upper:.3g}]: {e}") from e
    residual = abs(h(root))
    bound = options.theta_star_tolerance * max(1.0, abs(pf_lambda(model, root, options)))
    if residual > bound:
        raise ConvergenceError(f"theta* residual {residual:.3e} exceeds {bound:.3e}")
    logger.debug(f"theta* = {root:.12g} bracketed in [{lower:.3g}, {upper:.3g}]")
    return float(root)


def extinction_vector(model: ModelSpec, options: SpectralOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """Minimal solution in [0,1]^d of beta_i (g_i(s_i) - s_i) + (Q s)_i = 0.

    Returns the all-ones vector (with a warning) when lambda(0) <= 0.
    """
    _require_valid(model)
    d = model.d
    lambda0 = pf_lambda(model, 0.0, options)
    if not lambda0 > 0.0:
        logger.warning(f"lambda(0) = {lambda0:.6g} <= 0: extinction is certain (degenerate)")
        return np.ones(d)

    q = model.q_matrix
    off_diagonal = q - np.diag(np.diag(q))
    betas = model.branch_rates
    denominators = betas + model.switch_rates
    coefficients = [offspring_generating_coefficients(t.offspring) for t in model.types]
    damping = options.extinction_damping

    s = np.zeros(d)
    for iteration in range(options.extinction_max_iterations):
        generating = np.array(
            [np.polynomial.polynomial.polyval(s[i], coefficients[i]) for i in range(d)]
        )
        with np.errstate(divide="ignore", invalid="ignore"):
            mapped = np.where(
                denominators > 0.0,
                (betas * generating + off_diagonal @ s) / denominators,
                s,
            )
        updated = (1.0 - damping) * s + damping * mapped
        if np.abs(updated - s).max() <= options.extinction_tolerance:
            logger.debug(f"Extinction iteration converged after {iteration + 1} steps")
            return np.minimum(updated, 1.0)
        s = updated
    raise ConvergenceError(
        f"extinction iteration did not converge in {options.extinction_max_iterations} steps"
    )


def klogk_moments(model: ModelSpec) -> np.ndarray:
    return np.array([klogk_moment(t.offspring) for t in model.types])


def regime_report(model: ModelSpec, options: SpectralOptions = DEFAULT_OPTIONS) -> RegimeReport:
    """theta*, lambda(0), extinction vector and critical speed lambda(theta*)/theta*.

    When lambda(0) <= 0 the report is degenerate: theta* and the critical speed are NaN.
    """
    _require_valid(model)
    lambda0 = pf_lambda(model, 0.0, options)
    if not lambda0 > 0.0:
        return RegimeReport(
            theta_star=math.nan,
            lambda0=lambda0,
            extinction=extinction_vector(model, options),
            critical_speed=math.nan,
            klogk=klogk_moments(model),
            critical_band=options.critical_band,
        )
    star = theta_star(model, options)
    return RegimeReport(
        theta_star=star,
        lambda0=lambda0,
        extinction=extinction_vector(model, options),
        critical_speed=pf_lambda(model, star, options) / star,
        klogk=klogk_moments(model),
        critical_band=options.critical_band,
    )


def regime_of(
    model: ModelSpec,
    theta: float,
    star: Optional[float] = None,
    options: SpectralOptions = DEFAULT_OPTIONS,
) -> Regime:
    """Supercritical below theta*, critical within the band, subcritical above."""
    if star is None:
        star = theta_star(model, options)
    if abs(theta - star) <= options.critical_band * star:
        return Regime.CRITICAL
    return Regime.SUPERCRITICAL if theta < star else Regime.SUBCRITICAL


def map_mean_velocity(model: ModelSpec) -> float:
    """Strong-law velocity E_pi[chi(1)] of the underlying MAP."""
    pi = model_stationary(model)
    q = model.q_matrix
    total = 0.0
    for i, spec in enumerate(model.types):
        switching = math.fsum(
            q[i, j] * model.u_law(i, j).mean() for j in range(model.d) if j != i
        )
        total += pi[i] * (spec.motion.mean_velocity + switching)
    return float(total)


def map_velocity_from_exponent(
    model: ModelSpec, options: SpectralOptions = DEFAULT_OPTIONS
) -> float:
    """-gamma'(0+) for the PF eigenvalue gamma of the MAP exponent, one-sided difference."""
    h = options.one_sided_step
    pi = model_stationary(model)
    gamma_h, _, _ = pf_eigenpair(map_exponent(model, h), normalizer=pi, tol=options.pf_tolerance)
    gamma_0, _, _ = pf_eigenpair(map_exponent(model, 0.0), normalizer=pi, tol=options.pf_tolerance)
    return -(gamma_h - gamma_0) / h


def lambda_grid(
    model: ModelSpec, thetas: List[float], options: SpectralOptions = DEFAULT_OPTIONS
) -> np.ndarray:
    return np.array([pf_lambda(model, theta, options) for theta in thetas])
