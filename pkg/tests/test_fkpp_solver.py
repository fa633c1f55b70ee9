"""Tests for the multitype FKPP solver and its front diagnostics."""

import math
import pytest
import numpy as np
from pathlib import Path
import sys

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from bmap_lab.data_sources.model_catalog import get_model_catalog
from bmap_lab.errors import AssumptionError, CflViolationError, DomainError, FrontLostError
from bmap_lab.models.model_spec import DiscreteLaw, ModelSpec, MotionSpec, TypeSpec
from bmap_lab.tools.fkpp_solver import (
    FkppField,
    FkppOptions,
    Grid1D,
    complement_generating_coefficients,
    default_level,
    front_position,
    front_speed,
    init_field,
    initial_condition,
    solve,
    step,
    theoretical_speed,
)
from bmap_lab.tools.spectral import extinction_vector, regime_report


def bundled(name: str) -> ModelSpec:
    return get_model_catalog().get(name)


@pytest.fixture
def coarse():
    """Coarse but stable settings for front-speed runs."""
    return FkppOptions(dx=0.1, dt=0.02)


class TestGrid:
    """Tests for Grid1D."""

    def test_spacing(self):
        grid = Grid1D(-1.0, 1.0, 21)
        assert grid.dx == pytest.approx(0.1)
        assert grid.nodes[0] == -1.0 and grid.nodes[-1] == 1.0

    def test_from_spacing_keeps_dx(self):
        grid = Grid1D.from_spacing(0.0, 1.05, 0.1)
        assert grid.dx == pytest.approx(0.1)
        assert grid.x_max >= 1.05
        assert grid.n == 12

    @pytest.mark.parametrize("args", [(0.0, 1.0, 2), (1.0, 1.0, 10), (2.0, 1.0, 10)])
    def test_invalid(self, args):
        with pytest.raises(DomainError):
            Grid1D(*args)


class TestInitialData:
    """Tests for initial conditions."""

    def test_step(self):
        grid = Grid1D(-2.0, 2.0, 5)
        current = init_field(grid, bundled("bbm_death"), "step")
        np.testing.assert_allclose(current.values[0], [1 / 3, 1 / 3, 2 / 3, 1.0, 1.0], atol=1e-9)
        np.testing.assert_allclose(current.boundary_left, [1 / 3], atol=1e-9)
        np.testing.assert_allclose(current.boundary_right, [1.0])

    def test_step_front_starts_at_x0(self):
        model = bundled("bbm_death")
        extinction = extinction_vector(model)
        current = init_field(Grid1D(-2.0, 2.0, 41), model, "step", x0=0.0)
        assert front_position(current, default_level(extinction))[0] == pytest.approx(0.0, abs=1e-12)

    def test_step_at_given_level(self):
        model = bundled("bbm_single")
        current = init_field(Grid1D(-2.0, 2.0, 41), model, "step", x0=0.5, level=0.7)
        assert current.at(0.5, 0) == pytest.approx(0.7)
        assert front_position(current, 0.7)[0] == pytest.approx(0.5, abs=1e-12)

    def test_exp_tail(self):
        grid = Grid1D(-2.0, 2.0, 5)
        current = init_field(grid, bundled("bbm_single"), "exp_tail", theta=0.5)
        np.testing.assert_allclose(current.values[0], np.exp(-np.exp(-0.5 * grid.nodes)))
        np.testing.assert_allclose(current.complement[0], -np.expm1(-np.exp(-0.5 * grid.nodes)))

    def test_exp_tail_keeps_relative_precision(self):
        """Far in the tail u rounds to 1 but 1 - u is still e^{-x}."""
        grid = Grid1D.from_spacing(-10.0, 60.0, 0.05)
        current = init_field(grid, bundled("bbm_single"), "exp_tail", theta=1.0)
        assert current.values[0, -1] == 1.0
        k = int(np.argmin(np.abs(grid.nodes - 40.0)))
        assert current.complement[0, k] == pytest.approx(math.exp(-grid.nodes[k]), rel=1e-12)

    def test_wave_candidate_interpolates(self):
        model = bundled("bbm_single")
        condition = initial_condition(
            model, "wave_candidate", profile_x=[0.0, 1.0], profile=np.array([[0.2, 0.6]])
        )
        assert condition(np.array([0.5]), np.array([0]))[0] == pytest.approx(0.4)

    @pytest.mark.parametrize(
        "kind,kwargs",
        [
            ("ramp", {}),
            ("exp_tail", {}),
            ("exp_tail", {"theta": -1.0}),
            ("constant", {}),
            ("constant", {"value": [1.5]}),
            ("wave_candidate", {"profile_x": [0.0, 1.0], "profile": np.array([[0.2, 0.6, 0.9]])}),
        ],
    )
    def test_rejected(self, kind, kwargs):
        with pytest.raises(DomainError):
            initial_condition(bundled("bbm_single"), kind, **kwargs)


class TestStep:
    """Tests for single IMEX steps and short solves."""

    def test_fixed_point_constant_is_stationary(self):
        """The extinction probability 1/3 is an equilibrium of the reaction term."""
        model = bundled("bbm_death")
        current = init_field(Grid1D(-5.0, 5.0, 51), model, "constant", value=[1.0 / 3.0])
        run = solve(current, model, 2.0, 0.01, observe_every=50)
        np.testing.assert_allclose(run.final.values, 1.0 / 3.0, atol=1e-9)

    def test_constant_follows_logistic_ode(self):
        """u' = u^2 - u from 1/2 gives u(t) = 1 / (1 + e^t) away from the ends."""
        model = bundled("bbm_single")
        grid = Grid1D(-20.0, 20.0, 401)
        current = init_field(grid, model, "constant", value=[0.5])
        run = solve(current, model, 1.0, 0.005, observe_every=200)
        assert run.final.t == pytest.approx(1.0)
        assert run.final.at(0.0, 0) == pytest.approx(1.0 / (1.0 + math.e), abs=5e-3)

    def test_complement_reaction(self):
        """For g(s) = 1/4 + 3/4 s^2, 1 - g(1 - w) = 3/2 w - 3/4 w^2."""
        coefficients = complement_generating_coefficients(np.array([0.25, 0.0, 0.75]))
        np.testing.assert_allclose(coefficients, [0.0, 1.5, -0.75], atol=1e-15)

    def test_dirichlet_values_held(self):
        model = bundled("bbm_death")
        current = init_field(Grid1D(-5.0, 5.0, 51), model, "step")
        after = step(current, model, 0.01)
        assert after.values[0, 0] == pytest.approx(1.0 / 3.0)
        assert after.values[0, -1] == 1.0
        assert after.t == pytest.approx(0.01)

    def test_values_stay_in_unit_interval(self):
        model = bundled("general_map")
        current = init_field(Grid1D.from_spacing(-20.0, 30.0, 0.1), model, "step")
        run = solve(current, model, 3.0, 0.02, observe_every=25, keep_times=(1.0, 3.0))
        assert np.all((run.final.values >= 0.0) & (run.final.values <= 1.0))
        assert run.final.clamp_count == 0
        assert sorted(run.fields) == [1.0, 3.0]
        assert run.summaries[-1].t == pytest.approx(3.0)
        table = run.front_table()
        assert len(table) == 2 * len(run.summaries) == 14
        assert {row["type"] for row in table} == {0, 1}

    def test_cfl_violation(self):
        model = bundled("bbm_single")
        current = init_field(Grid1D.from_spacing(-5.0, 5.0, 0.1), model, "step")
        explicit = FkppOptions(dx=0.1, dt=0.02, implicit_diffusion=False)
        with pytest.raises(CflViolationError):
            step(current, model, 0.02, explicit)
        # Within the bound the explicit scheme runs
        step(current, model, 0.002, explicit)

    def test_jump_beyond_padding(self):
        model = bundled("general_map")
        current = init_field(Grid1D(-5.0, 5.0, 101), model, "step")
        with pytest.raises(DomainError):
            step(current, model, 0.01, FkppOptions(padding=0.5))

    def test_dimension_mismatch(self):
        current = init_field(Grid1D(-5.0, 5.0, 11), bundled("bbm_single"), "step")
        with pytest.raises(DomainError):
            step(current, bundled("champneys"), 0.01)


class TestSolverProperties:
    """Structural properties of the discrete solution operator."""

    @pytest.mark.parametrize("name", ["bbm_single", "bbm_death", "general_map"])
    def test_constant_fixed_points(self, name):
        """u = 1 and u = q move by at most 1e-12 per step over 10^4 steps."""
        model = bundled(name)
        grid = Grid1D(-5.0, 5.0, 51)
        for value in (np.ones(model.d), extinction_vector(model)):
            current = init_field(grid, model, "constant", value=value)
            largest = 0.0
            for _ in range(10_000):
                after = step(current, model, 0.01)
                largest = max(largest, float(np.max(np.abs(after.values - current.values))))
                current = after
            assert largest <= 1e-12
            np.testing.assert_allclose(current.values, np.repeat(value[:, None], grid.n, axis=1), atol=1e-10)
        assert np.all(current.complement >= 0.0)

    def test_full_field_is_exact(self):
        model = bundled("general_map")
        current = init_field(Grid1D(-5.0, 5.0, 51), model, "constant", value=[1.0, 1.0])
        run = solve(current, model, 100.0, 0.01, observe_every=10_000)
        assert np.all(run.final.complement == 0.0)

    def test_comparison(self):
        """Ordered initial data stay ordered."""
        model = bundled("general_map")
        grid = Grid1D.from_spacing(-20.0, 20.0, 0.1)
        lower = init_field(grid, model, "step", x0=grid.nodes[210])
        upper = init_field(grid, model, "step", x0=grid.nodes[190])
        assert np.all(lower.values <= upper.values)
        u = solve(lower, model, 3.0, 0.01, observe_every=100).final
        v = solve(upper, model, 3.0, 0.01, observe_every=100).final
        assert np.all(u.values <= v.values + 1e-12)
        assert np.any(u.values < v.values - 1e-3)

    def test_translation_equivariance(self):
        """Shifting step data by k grid cells shifts the solution by k cells."""
        model = bundled("general_map")
        grid = Grid1D.from_spacing(-20.0, 20.0, 0.1)
        k = 10
        base = solve(init_field(grid, model, "step", x0=grid.nodes[200]), model, 1.0, 0.01).final
        moved = solve(init_field(grid, model, "step", x0=grid.nodes[200 + k]), model, 1.0, 0.01).final
        interior = slice(60, grid.n - 60)
        shifted = slice(60 + k, grid.n - 60 + k)
        np.testing.assert_allclose(moved.values[:, shifted], base.values[:, interior], atol=1e-10)

    def test_semigroup(self):
        """Solving to t1 and then on to t2 matches one solve to t2."""
        model = bundled("champneys")
        current = init_field(Grid1D.from_spacing(-15.0, 15.0, 0.1), model, "step")
        direct = solve(current, model, 2.0, 0.01, observe_every=50)
        first = solve(current, model, 0.8, 0.01, observe_every=50)
        second = solve(first.final, model, 2.0, 0.01, observe_every=50)
        assert second.final.t == pytest.approx(2.0)
        np.testing.assert_array_equal(second.final.complement, direct.final.complement)

    def test_grid_refinement(self):
        """Errors against a fine reference shrink as dx is halved."""
        model = bundled("bbm_death")
        points = np.linspace(-4.0, 4.0, 33)

        def profile(dx: float) -> np.ndarray:
            grid = Grid1D.from_spacing(-20.0, 20.0, dx)
            final = solve(init_field(grid, model, "step"), model, 2.0, 0.01, observe_every=200).final
            return np.array([final.at(x, 0) for x in points])

        reference = profile(0.0125)
        errors = [float(np.max(np.abs(profile(dx) - reference))) for dx in (0.2, 0.1, 0.05)]
        assert errors[0] > errors[1] > errors[2]
        assert errors[2] < 1e-2


class TestFrontPosition:
    """Tests for level-crossing fronts."""

    def test_linear_interpolation(self):
        grid = Grid1D(0.0, 3.0, 4)
        current = FkppField.from_values(grid, 0.0, np.array([[0.0, 0.25, 0.75, 1.0]]), np.zeros(1), np.ones(1))
        assert front_position(current, 0.5)[0] == pytest.approx(1.5)

    def test_lost_front(self):
        grid = Grid1D(0.0, 3.0, 4)
        current = FkppField.from_values(grid, 0.0, np.ones((2, 4)), np.zeros(2), np.ones(2))
        with pytest.raises(FrontLostError) as info:
            front_position(current, 0.5)
        assert info.value.type_index == 0

    def test_default_level(self):
        assert default_level(np.array([0.0])) == 0.5
        assert default_level(np.array([0.2, 0.6])) == pytest.approx(0.8)


class TestFrontSpeed:
    """Long-time front speeds against the spectral prediction."""

    def test_bbm_step(self, coarse):
        result = front_speed(bundled("bbm_single"), "step", (20.0, 40.0), coarse)
        assert result.theoretical_speed == pytest.approx(math.sqrt(2.0))
        assert result.speeds[0] == pytest.approx(math.sqrt(2.0), rel=0.08)
        assert result.clamp_count == 0
        rows = result.fit_rows()
        assert set(rows[0]) == {"t", "type", "front_x", "fit_line"}

    def test_bbm_exp_tail(self):
        """The tail exp(-x) travels at lambda(1) / 1 = 1.5."""
        options = FkppOptions(dx=0.05, dt=0.01)
        result = front_speed(bundled("bbm_single"), "exp_tail", (20.0, 40.0), options, theta=1.0)
        assert result.theoretical_speed == pytest.approx(1.5)
        assert result.speeds[0] == pytest.approx(1.5, rel=0.08)
        assert result.clamp_count == 0

    def test_two_type_step(self):
        """On-off model: both fronts reach lambda(theta*) / theta* from below."""
        model = bundled("on_off_variant_1")
        regimes = regime_report(model)
        result = front_speed(model, "step", (20.0, 40.0), FkppOptions(dx=0.05, dt=0.01))
        expected = regimes.critical_speed
        assert result.theoretical_speed == pytest.approx(expected)
        np.testing.assert_allclose(result.speeds, expected, rtol=0.08)
        # Pulled fronts lag by 3 log(t) / (2 theta*); its slope over the window
        lag_slope = 1.5 / regimes.theta_star * math.log(40.0 / 20.0) / 20.0
        assert np.all(result.speeds < expected)
        np.testing.assert_allclose(result.speeds, expected - lag_slope, rtol=0.04)

    def test_symmetric_types_share_a_front(self, coarse):
        result = front_speed(bundled("two_type_symmetric"), "step", (10.0, 20.0), coarse)
        assert result.speeds[0] == pytest.approx(result.speeds[1], abs=1e-9)
        assert result.to_dict()["kind"] == "step"

    def test_invalid_window(self, coarse):
        with pytest.raises(DomainError):
            front_speed(bundled("bbm_single"), "step", (10.0, 5.0), coarse)
        with pytest.raises(DomainError):
            front_speed(bundled("bbm_single"), "constant", (1.0, 2.0), coarse)


class TestTheoreticalSpeed:
    def test_supercritical_tail(self):
        model = bundled("bbm_single")
        assert theoretical_speed(model, "exp_tail", 0.5) == pytest.approx(2.25)
        # Steeper tails than theta* travel at the critical speed
        assert theoretical_speed(model, "exp_tail", 3.0) == pytest.approx(math.sqrt(2.0))

    def test_no_growth(self):
        model = ModelSpec(
            d=1,
            types=(
                TypeSpec(
                    motion=MotionSpec(sigma2=1.0),
                    branch_rate=1.0,
                    offspring=DiscreteLaw.from_pairs([[0, 0.5], [1, 0.5]]),
                ),
            ),
            q=((0.0,),),
        )
        with pytest.raises(AssumptionError):
            theoretical_speed(model, "step")
