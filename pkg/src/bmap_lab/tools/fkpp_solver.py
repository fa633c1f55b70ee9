"""IMEX method-of-lines solver for the coupled multitype FKPP system.

For each type ``i`` the field obeys

    du_i/dt = sigma2_i/2 u_i'' + drift_i u_i' + r_i sum_k p_k (u_i(x + y_k) - u_i)
              + sum_j q_ij (E[u_j(x + U_ij)] - u_i) + beta_i (g_i(u_i) - u_i)

Diffusion is implicit (tridiagonal solve) or explicit under a CFL bound; every other
term is explicit. Drift is upwinded on its sign, shifted evaluations use linear
interpolation, and Dirichlet values are held at both ends.

The solver evolves w = 1 - u. Every linear term keeps its form on w and the reaction
becomes beta_i (1 - g_i(1 - w_i) - w_i), so exponential tails far ahead of the front
are carried at full relative precision instead of rounding u to 1.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import Polynomial

from ..errors import CflViolationError, ConvergenceError, DomainError, FrontLostError
from ..models.model_spec import ModelSpec, offspring_generating_coefficients
from ..utils.linalg import tridiagonal_solve
from .spectral import (
    extinction_vector,
    model_pf,
    pf_lambda,
    regime_report,
)

logger = logging.getLogger(__name__)

INIT_KINDS = ("step", "exp_tail", "wave_candidate", "constant")


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid of ``n`` nodes on [x_min, x_max]."""

    x_min: float
    x_max: float
    n: int

    def __post_init__(self) -> None:
        if self.n < 3:
            raise DomainError(f"grid needs at least 3 nodes, got {self.n}")
        if not self.x_max > self.x_min:
            raise DomainError(f"grid needs x_max > x_min, got [{self.x_min}, {self.x_max}]")

    @classmethod
    def from_spacing(cls, x_min: float, x_max: float, dx: float) -> "Grid1D":
        """Grid starting at x_min with spacing exactly ``dx``, covering at least x_max."""
        n = int(math.ceil((x_max - x_min) / dx - 1e-9)) + 1
        return cls(x_min, x_min + (n - 1) * dx, n)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n)


@dataclass(frozen=True)
class FkppOptions:
    """Numerical settings of the FKPP solver."""

    dx: float = 0.05
    dt: float = 0.01
    implicit_diffusion: bool = True
    padding: float = 10.0
    level: Optional[float] = None
    clamp_tolerance: float = 1e-9
    cfl_factor: float = 0.4
    max_fit_residual: float = 0.5


DEFAULT_FKPP_OPTIONS = FkppOptions()


@dataclass(eq=False)
class FkppField:
    """u(t, x_k, i) on a grid for all types, with the Dirichlet values at both ends.

    The field is held as its complement w = 1 - u so the tail where u rounds to 1
    keeps full relative precision; ``values`` and the boundary properties give u.
    """

    grid: Grid1D
    t: float
    complement: np.ndarray
    complement_left: np.ndarray
    complement_right: np.ndarray
    clamp_count: int = 0

    @classmethod
    def from_values(
        cls,
        grid: Grid1D,
        t: float,
        values: np.ndarray,
        boundary_left: np.ndarray,
        boundary_right: np.ndarray,
    ) -> "FkppField":
        return cls(
            grid,
            t,
            1.0 - np.asarray(values, dtype=float),
            1.0 - np.asarray(boundary_left, dtype=float),
            1.0 - np.asarray(boundary_right, dtype=float),
        )

    @property
    def values(self) -> np.ndarray:
        return 1.0 - self.complement

    @property
    def boundary_left(self) -> np.ndarray:
        return 1.0 - self.complement_left

    @property
    def boundary_right(self) -> np.ndarray:
        return 1.0 - self.complement_right

    @property
    def d(self) -> int:
        return int(self.complement.shape[0])

    def copy(self) -> "FkppField":
        return replace(self, complement=self.complement.copy())

    def at(self, x: float, type_index: int) -> float:
        """Value at an arbitrary point by linear interpolation."""
        return float(np.interp(x, self.grid.nodes, self.values[type_index]))


@dataclass(frozen=True, eq=False)
class InitialCondition:
    """Analytic initial data u(0, x, i), usable on the grid and by Monte Carlo.

    Step data takes the value ``level`` at x0 itself (the midpoint between the
    extinction value and 1 when no level is given), so its front starts exactly at x0.
    """

    kind: str
    extinction: np.ndarray
    theta: Optional[float] = None
    x0: float = 0.0
    v_right: Optional[np.ndarray] = None
    value: Optional[np.ndarray] = None
    profile_x: Optional[np.ndarray] = None
    profile: Optional[np.ndarray] = None
    level: Optional[float] = None

    @property
    def boundary_left(self) -> np.ndarray:
        if self.kind == "constant":
            assert self.value is not None
            return self.value.copy()
        return self.extinction.copy()

    @property
    def boundary_right(self) -> np.ndarray:
        if self.kind == "constant":
            assert self.value is not None
            return self.value.copy()
        return np.ones_like(self.extinction)

    def _step_midpoint(self, types: np.ndarray) -> np.ndarray:
        low = self.extinction[types]
        if self.level is None:
            return 0.5 * (1.0 + low)
        return np.clip(self.level, low, 1.0)

    def __call__(self, x: np.ndarray, types: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        types = np.asarray(types, dtype=int)
        if self.kind == "step":
            return np.where(
                x < self.x0,
                self.extinction[types],
                np.where(x > self.x0, 1.0, self._step_midpoint(types)),
            )
        if self.kind == "exp_tail":
            assert self.theta is not None and self.v_right is not None
            with np.errstate(over="ignore"):
                return np.exp(-np.exp(-self.theta * x) * self.v_right[types])
        if self.kind == "constant":
            assert self.value is not None
            return self.value[types] * np.ones_like(x)
        assert self.profile_x is not None and self.profile is not None
        out = np.empty_like(x)
        for j in np.unique(types):
            mask = types == j
            out[mask] = np.interp(x[mask], self.profile_x, self.profile[j])
        return out

    def complement(self, x: np.ndarray, types: np.ndarray) -> np.ndarray:
        """1 - u(0, x, i), exact in the tail where u rounds to 1."""
        if self.kind == "exp_tail":
            assert self.theta is not None and self.v_right is not None
            x = np.asarray(x, dtype=float)
            types = np.asarray(types, dtype=int)
            with np.errstate(over="ignore"):
                return -np.expm1(-np.exp(-self.theta * x) * self.v_right[types])
        return 1.0 - self(x, types)


def initial_condition(
    model: ModelSpec,
    kind: str,
    *,
    theta: Optional[float] = None,
    x0: float = 0.0,
    value: Optional[Sequence[float]] = None,
    profile_x: Optional[Sequence[float]] = None,
    profile: Optional[np.ndarray] = None,
    extinction: Optional[np.ndarray] = None,
    level: Optional[float] = None,
) -> InitialCondition:
    """Resolve an initial-data kind against a model."""
    if kind not in INIT_KINDS:
        raise DomainError(f"unknown initial kind {kind!r}; expected one of {INIT_KINDS}")
    if extinction is None:
        extinction = extinction_vector(model)
    d = model.d
    if kind == "exp_tail":
        if theta is None or not theta > 0.0:
            raise DomainError("exp_tail needs theta > 0")
        _, v, _ = model_pf(model, theta)
        return InitialCondition(kind, extinction, theta=float(theta), v_right=v)
    if kind == "constant":
        if value is None:
            raise DomainError("constant initial data needs a value")
        values = np.broadcast_to(np.asarray(value, dtype=float), (d,)).copy()
        if np.any(values < 0.0) or np.any(values > 1.0):
            raise DomainError("constant initial value must lie in [0, 1]")
        return InitialCondition(kind, extinction, value=values)
    if kind == "wave_candidate":
        if profile is None or profile_x is None:
            raise DomainError("wave_candidate needs profile_x and profile")
        grid_x = np.asarray(profile_x, dtype=float)
        array = np.asarray(profile, dtype=float)
        if array.shape != (d, grid_x.size):
            raise DomainError(f"profile must have shape ({d}, {grid_x.size}), got {array.shape}")
        if np.any(array < 0.0) or np.any(array > 1.0) or not np.all(np.isfinite(array)):
            raise DomainError("profile values must lie in [0, 1]")
        return InitialCondition(kind, extinction, profile_x=grid_x, profile=array)
    return InitialCondition(kind, extinction, x0=float(x0), level=level)


def init_field(
    grid: Grid1D,
    model: ModelSpec,
    kind: str,
    **kwargs: Any,
) -> FkppField:
    """FkppField at t = 0 for one of the initial kinds (step, exp_tail, wave_candidate, constant)."""
    return field_from_condition(grid, model, initial_condition(model, kind, **kwargs))


def field_from_condition(grid: Grid1D, model: ModelSpec, condition: InitialCondition) -> FkppField:
    nodes = grid.nodes
    complement = np.vstack(
        [condition.complement(nodes, np.full(grid.n, i, dtype=int)) for i in range(model.d)]
    )
    return FkppField(
        grid=grid,
        t=0.0,
        complement=complement,
        complement_left=1.0 - condition.boundary_left,
        complement_right=1.0 - condition.boundary_right,
    )


def complement_generating_coefficients(coefficients: np.ndarray) -> np.ndarray:
    """Coefficients of 1 - g(1 - w) in increasing degree of w, with zero constant term."""
    shifted = Polynomial(coefficients)(Polynomial([1.0, -1.0])).coef
    out = -np.asarray(shifted, dtype=float)
    # g(1) = 1
    out[0] = 0.0
    return out


class _Stepper:
    """Operator data for one (model, grid, dt) combination."""

    def __init__(self, model: ModelSpec, grid: Grid1D, dt: float, options: FkppOptions) -> None:
        if not dt > 0.0:
            raise DomainError(f"dt must be > 0, got {dt}")
        self.model = model
        self.grid = grid
        self.dt = dt
        self.options = options
        self.nodes = grid.nodes
        dx = grid.dx
        self.dx = dx
        d = model.d

        for i, spec in enumerate(model.types):
            if spec.motion.jump_rate > 0.0:
                for y, _ in spec.motion.jump_law.atoms:
                    if abs(y) > options.padding:
                        raise DomainError(
                            f"jump atom {y} of type {i} exceeds the padding margin {options.padding}"
                        )
        q = model.q_matrix
        for i in range(d):
            for j in range(d):
                if i != j and q[i, j] > 0.0:
                    for y, _ in model.u_law(i, j).atoms:
                        if abs(y) > options.padding:
                            raise DomainError(
                                f"transitional jump atom {y} ({i}->{j}) exceeds the padding "
                                f"margin {options.padding}"
                            )

        sigma2 = np.array([t.motion.sigma2 for t in model.types])
        max_sigma2 = float(sigma2.max())
        self.implicit = options.implicit_diffusion
        if not self.implicit and max_sigma2 > 0.0:
            bound = options.cfl_factor * dx * dx / max_sigma2
            if dt > bound:
                raise CflViolationError(
                    f"explicit diffusion needs dt <= {bound:.4g} (dx={dx:g}), got dt={dt:g}"
                )
        self.sigma2 = sigma2
        self.drifts = [t.motion.drift for t in model.types]
        self.branch = model.branch_rates
        self.q = q
        self.coefficients = [
            complement_generating_coefficients(offspring_generating_coefficients(t.offspring))
            for t in model.types
        ]
        self.jumps = [
            (t.motion.jump_rate, t.motion.jump_law.atoms) if t.motion.jump_rate > 0.0 else (0.0, ())
            for t in model.types
        ]
        self.switches = [
            [(j, q[i, j], model.u_law(i, j).atoms) for j in range(d) if j != i and q[i, j] > 0.0]
            for i in range(d)
        ]

        n = grid.n
        self.banded: List[Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]]] = []
        for i in range(d):
            c = dt * sigma2[i] / (2.0 * dx * dx)
            if not self.implicit or c == 0.0:
                self.banded.append(None)
                continue
            lower = np.full(n - 1, -c)
            upper = np.full(n - 1, -c)
            diagonal = np.full(n, 1.0 + 2.0 * c)
            diagonal[0] = diagonal[-1] = 1.0
            upper[0] = 0.0
            lower[-1] = 0.0
            self.banded.append((lower, diagonal, upper))

    def _shifted(self, u: np.ndarray, y: float) -> np.ndarray:
        if y == 0.0:
            return u
        return np.interp(self.nodes + y, self.nodes, u)

    def rates(self, complement: np.ndarray) -> np.ndarray:
        """Explicit right-hand side for w = 1 - u on every node (boundary rows are overwritten later).

        Motion, jump and switching terms are linear and vanish on constants, so they act
        on w unchanged; the reaction becomes beta (1 - g(1 - w) - w).
        """
        dx = self.dx
        out = np.zeros_like(complement)
        for i in range(complement.shape[0]):
            w = complement[i]
            rate = out[i]
            drift = self.drifts[i]
            if drift > 0.0:
                rate[:-1] += drift * (w[1:] - w[:-1]) / dx
            elif drift < 0.0:
                rate[1:] += drift * (w[1:] - w[:-1]) / dx
            if not self.implicit and self.sigma2[i] > 0.0:
                rate[1:-1] += 0.5 * self.sigma2[i] * (w[2:] - 2.0 * w[1:-1] + w[:-2]) / (dx * dx)
            jump_rate, atoms = self.jumps[i]
            for y, p in atoms:
                rate += jump_rate * p * (self._shifted(w, y) - w)
            for j, q_ij, u_atoms in self.switches[i]:
                expected = np.zeros_like(w)
                for y, p in u_atoms:
                    expected += p * self._shifted(complement[j], y)
                rate += q_ij * (expected - w)
            if self.branch[i] > 0.0:
                reaction = np.polynomial.polynomial.polyval(w, self.coefficients[i])
                rate += self.branch[i] * (reaction - w)
        return out

    def __call__(self, current: FkppField) -> FkppField:
        complement = current.complement + self.dt * self.rates(current.complement)
        complement[:, 0] = current.complement_left
        complement[:, -1] = current.complement_right
        for i, banded in enumerate(self.banded):
            if banded is not None:
                complement[i] = tridiagonal_solve(*banded, complement[i])

        tol = self.options.clamp_tolerance
        outside = int(np.count_nonzero((complement < -tol) | (complement > 1.0 + tol)))
        if outside:
            logger.warning(f"Clamped {outside} FKPP values outside [0, 1] at t={current.t + self.dt:.4g}")
        np.clip(complement, 0.0, 1.0, out=complement)
        return FkppField(
            grid=current.grid,
            t=current.t + self.dt,
            complement=complement,
            complement_left=current.complement_left,
            complement_right=current.complement_right,
            clamp_count=current.clamp_count + outside,
        )


def step(
    current: FkppField, model: ModelSpec, dt: float, options: FkppOptions = DEFAULT_FKPP_OPTIONS
) -> FkppField:
    """Advance the field by one IMEX step of size ``dt``."""
    if current.d != model.d:
        raise DomainError(f"field has d={current.d}, model has d={model.d}")
    return _Stepper(model, current.grid, dt, options)(current)


def default_level(extinction: np.ndarray) -> float:
    return 0.5 * (1.0 + float(np.max(extinction)))


def _crossing(nodes: np.ndarray, w: np.ndarray, level: float, type_index: int) -> float:
    # u >= level is w <= 1 - level
    above = np.flatnonzero(w <= 1.0 - level)
    if above.size == 0 or above[0] == 0:
        raise FrontLostError(
            f"type {type_index}: no crossing of level {level:g}; the front left the domain",
            type_index=type_index,
        )
    k = int(above[0])
    lo, hi = 1.0 - w[k - 1], 1.0 - w[k]
    fraction = (level - lo) / (hi - lo)
    return float(nodes[k - 1] + fraction * (nodes[k] - nodes[k - 1]))


def front_position(current: FkppField, level: float) -> np.ndarray:
    """First crossing of ``level`` per type, by linear interpolation between nodes."""
    nodes = current.grid.nodes
    return np.array([_crossing(nodes, current.complement[i], level, i) for i in range(current.d)])


@dataclass
class FrontSummary:
    """Compact per-observation record of a solve."""

    t: float
    fronts: List[Optional[float]]
    width: List[float]
    monotone_violations: int
    clamp_count: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t": self.t,
            "fronts": self.fronts,
            "width": self.width,
            "monotone_violations": self.monotone_violations,
            "clamp_count": self.clamp_count,
        }


@dataclass
class FkppRun:
    summaries: List[FrontSummary]
    final: FkppField
    fields: Dict[float, FkppField] = field(default_factory=dict)

    def front_table(self) -> List[Dict[str, Any]]:
        """Long-format (t, type, front_x) rows."""
        return [
            {"t": s.t, "type": i, "front_x": x}
            for s in self.summaries
            for i, x in enumerate(s.fronts)
        ]


def _summarize(current: FkppField, level: float) -> FrontSummary:
    nodes = current.grid.nodes
    fronts: List[Optional[float]] = []
    for i in range(current.d):
        try:
            fronts.append(_crossing(nodes, current.complement[i], level, i))
        except FrontLostError:
            fronts.append(None)
    steps = np.diff(current.complement, axis=1)
    width = [float(current.grid.dx * np.count_nonzero(np.abs(row) > 1e-8)) for row in steps]
    violations = int(np.count_nonzero(steps > 1e-10))
    return FrontSummary(current.t, fronts, width, violations, current.clamp_count)


def solve(
    current: FkppField,
    model: ModelSpec,
    t_end: float,
    dt: float,
    observe_every: int = 1,
    options: FkppOptions = DEFAULT_FKPP_OPTIONS,
    keep_times: Sequence[float] = (),
    level: Optional[float] = None,
) -> FkppRun:
    """Step from ``current.t`` to ``t_end`` with a whole number of steps of size ``dt``."""
    if t_end < current.t:
        raise DomainError(f"t_end={t_end} precedes the field time {current.t}")
    if observe_every < 1:
        raise DomainError("observe_every must be >= 1")
    if level is None:
        level = options.level if options.level is not None else default_level(current.boundary_left)
    steps = int(round((t_end - current.t) / dt))
    stepper = _Stepper(model, current.grid, dt, options) if steps else None
    keep = sorted(keep_times)
    logger.info(
        f"FKPP solve: {steps} steps of dt={dt:g} on {current.grid.n} nodes, d={model.d}"
    )

    summaries = [_summarize(current, level)]
    fields: Dict[float, FkppField] = {}
    if keep and abs(keep[0] - current.t) <= 0.5 * dt:
        fields[keep.pop(0)] = current.copy()
    start_t = current.t
    for k in range(1, steps + 1):
        assert stepper is not None
        current = stepper(current)
        # t comes from the step counter, not accumulated dt
        current.t = start_t + k * dt
        if k % observe_every == 0 or k == steps:
            summaries.append(_summarize(current, level))
        while keep and abs(keep[0] - current.t) <= 0.5 * dt:
            fields[keep.pop(0)] = current.copy()
    return FkppRun(summaries=summaries, final=current, fields=fields)


@dataclass
class FrontSpeedResult:
    """Least-squares front speeds over a time window."""

    kind: str
    speeds: np.ndarray
    residuals: np.ndarray
    times: np.ndarray
    fronts: np.ndarray
    level: float
    grid: Grid1D
    theoretical_speed: float
    clamp_count: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "speeds": self.speeds.tolist(),
            "fit_residuals": self.residuals.tolist(),
            "level": self.level,
            "theoretical_speed": self.theoretical_speed,
            "grid": {"x_min": self.grid.x_min, "x_max": self.grid.x_max, "n": self.grid.n},
            "clamp_count": self.clamp_count,
        }

    def fit_rows(self) -> List[Dict[str, Any]]:
        """(t, type, front_x, fit_line) rows for plotting."""
        rows = []
        for i in range(self.fronts.shape[1]):
            slope, intercept = np.polyfit(self.times, self.fronts[:, i], 1)
            for t, x in zip(self.times, self.fronts[:, i]):
                rows.append(
                    {"t": float(t), "type": i, "front_x": float(x), "fit_line": float(slope * t + intercept)}
                )
        return rows


def theoretical_speed(model: ModelSpec, kind: str, theta: Optional[float] = None) -> float:
    """Critical speed for step data, lambda(theta)/theta for supercritical exponential tails."""
    regime = regime_report(model).require_growth()
    if kind == "exp_tail" and theta is not None and theta < regime.theta_star:
        return pf_lambda(model, theta) / theta
    return regime.critical_speed


def front_grid(
    model: ModelSpec, speed: float, t_end: float, options: FkppOptions
) -> Grid1D:
    """Domain padded so a front starting near 0 stays interior up to ``t_end``."""
    margin = options.padding + model.max_abs_jump
    x_min = -(20.0 + margin)
    x_max = max(speed, 0.0) * t_end + 30.0 + margin
    return Grid1D.from_spacing(x_min, x_max, options.dx)


def front_speed(
    model: ModelSpec,
    kind: str = "step",
    t_window: Tuple[float, float] = (20.0, 40.0),
    options: FkppOptions = DEFAULT_FKPP_OPTIONS,
    theta: Optional[float] = None,
    grid: Optional[Grid1D] = None,
) -> FrontSpeedResult:
    """Slope of the front position over ``t_window`` for step or exp_tail initial data."""
    t1, t2 = t_window
    if not t2 > t1 >= 0.0:
        raise DomainError(f"t_window must satisfy t2 > t1 >= 0, got {t_window}")
    if kind not in ("step", "exp_tail"):
        raise DomainError(f"front_speed supports step and exp_tail data, got {kind!r}")
    expected = theoretical_speed(model, kind, theta)
    if grid is None:
        grid = front_grid(model, expected, t2, options)
    extinction = extinction_vector(model)
    level = options.level if options.level is not None else default_level(extinction)
    current = init_field(grid, model, kind, theta=theta, extinction=extinction, level=level)
    observe_every = max(1, int(round(0.25 / options.dt)))
    run = solve(current, model, t2, options.dt, observe_every, options, level=level)

    window = [s for s in run.summaries if t1 - 1e-9 <= s.t <= t2 + 1e-9]
    if len(window) < 2:
        raise DomainError("t_window contains fewer than two observations")
    for s in window:
        for i, x in enumerate(s.fronts):
            if x is None:
                raise FrontLostError(f"type {i}: front left the domain by t={s.t:g}", type_index=i)
    times = np.array([s.t for s in window])
    fronts = np.array([s.fronts for s in window], dtype=float)

    speeds = np.empty(model.d)
    residuals = np.empty(model.d)
    for i in range(model.d):
        coefficients = np.polyfit(times, fronts[:, i], 1)
        speeds[i] = coefficients[0]
        residuals[i] = float(np.sqrt(np.mean((np.polyval(coefficients, times) - fronts[:, i]) ** 2)))
    if np.any(residuals > options.max_fit_residual):
        raise ConvergenceError(
            f"front fit residual {residuals.max():.3g} exceeds {options.max_fit_residual}"
        )
    logger.info(f"Front speed ({kind}): {speeds.tolist()} vs theoretical {expected:.6g}")
    return FrontSpeedResult(
        kind=kind,
        speeds=speeds,
        residuals=residuals,
        times=times,
        fronts=fronts,
        level=level,
        grid=grid,
        theoretical_speed=expected,
        clamp_count=run.final.clamp_count,
    )
