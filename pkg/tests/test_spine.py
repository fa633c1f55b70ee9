"""Tests for the tilted spine MAP, the many-to-one identity and the tilting weight."""

import math
import pytest
import numpy as np
from pathlib import Path
import sys

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from bmap_lab.data_sources.model_catalog import get_model_catalog
from bmap_lab.errors import DomainError
from bmap_lab.models.model_spec import ModelSpec
from bmap_lab.tools.spectral import lambda_prime, spectral_report
from bmap_lab.tools.spine import (
    catalog_function,
    many_to_one_check,
    simulate_spine,
    spine_occupancy,
    spine_speed,
    tilt_model,
    tilt_weight_mean,
    tilted_spectral_check,
)
from bmap_lab.utils.linalg import matrix_exp
from bmap_lab.utils.stats import estimate


def bundled(name: str) -> ModelSpec:
    return get_model_catalog().get(name)


def tilted(name: str, theta: float):
    model = bundled(name)
    return tilt_model(model, spectral_report(model, theta))


class TestTiltModel:
    """Tests for the tilted characteristics."""

    @pytest.mark.parametrize("name", ["general_map", "champneys", "on_off_variant_2"])
    def test_q_tilde_is_intensity_matrix(self, name):
        spine = tilted(name, 0.7)
        off_diagonal = spine.q_tilde[~np.eye(spine.d, dtype=bool)]
        assert np.all(off_diagonal >= 0.0)
        np.testing.assert_allclose(spine.q_tilde.sum(axis=1), np.zeros(spine.d), atol=1e-12)

    def test_bbm_spine(self):
        """Binary BBM at theta: drift -theta, fission rate 2, offspring still 2."""
        spine = tilted("bbm_single", 1.0)
        motion = spine.motion_tilde[0]
        assert motion.drift == pytest.approx(-1.0)
        assert motion.sigma2 == pytest.approx(1.0)
        np.testing.assert_allclose(spine.spine_branch_rate, [2.0])
        assert spine.spine_offspring[0].atoms == ((2.0, 1.0),)

    @pytest.mark.parametrize("name", ["general_map", "champneys"])
    def test_shifted_exponent(self, name):
        """PF of the tilted exponent at alpha equals lambda(alpha + theta) - lambda(theta)."""
        assert tilted_spectral_check(bundled(name), 0.8) < 1e-8

    def test_rejects_non_positive_theta(self):
        model = bundled("bbm_single")
        with pytest.raises(DomainError):
            tilt_model(model, spectral_report(model, 0.0))

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            tilt_model(bundled("champneys"), spectral_report(bundled("bbm_single"), 1.0))


class TestSpinePaths:
    """Tests for simulate_spine and its statistics."""

    def test_reproducible(self):
        spine = tilted("general_map", 0.6)
        first = simulate_spine(spine, (0.0, 0), 3.0, seed=8, replica_index=2)
        second = simulate_spine(spine, (0.0, 0), 3.0, seed=8, replica_index=2)
        np.testing.assert_array_equal(first.positions, second.positions)
        assert first.fission_marks == second.fission_marks

    def test_path_frame(self):
        path = simulate_spine(tilted("bbm_single", 1.0), (1.0, 0), 2.0, seed=3)
        frame = path.to_frame()
        assert list(frame.columns) == ["time", "position", "type", "fission"]
        assert frame["time"].iloc[0] == 0.0
        assert frame["position"].iloc[0] == 1.0
        assert path.horizon == pytest.approx(2.0)
        assert frame["fission"].sum() == 2 * len(path.fission_marks)

    def test_fission_marks_are_poisson(self):
        """Marks arrive at rate beta m = 2 for binary BBM."""
        spine = tilted("bbm_single", 1.0)
        horizon = 3.0
        counts = [
            len(simulate_spine(spine, (0.0, 0), horizon, seed=5, replica_index=k).fission_marks)
            for k in range(400)
        ]
        assert estimate(counts).z_against(2.0 * horizon) == pytest.approx(0.0, abs=4.0)

    def test_bbm_speed(self):
        """The BBM spine is Brownian motion with drift -theta."""
        mean, stderr = spine_speed(tilted("bbm_single", 1.0), horizon=5.0, replicas=400, seed=12)
        assert abs(mean + 1.0) <= 4.0 * stderr

    def test_symmetric_two_type_speed(self):
        """Identical types: spine speed is -lambda'(theta) from any start."""
        model = bundled("two_type_symmetric")
        theta = 0.6
        spine = tilt_model(model, spectral_report(model, theta))
        mean, stderr = spine_speed(spine, horizon=4.0, replicas=400, seed=21, start=(0.0, 1))
        assert abs(mean + lambda_prime(model, theta)) <= 4.0 * stderr

    def test_occupancy_matches_semigroup(self):
        spine = tilted("champneys", 1.0)
        t, replicas = 0.7, 2000
        frequencies = spine_occupancy(spine, (0.0, 0), t, replicas, seed=4)
        expected = matrix_exp(spine.q_tilde, t)[0]
        for j in range(2):
            se = math.sqrt(expected[j] * (1.0 - expected[j]) / replicas)
            assert abs(frequencies[j] - expected[j]) <= 4.0 * se

    def test_negative_horizon(self):
        with pytest.raises(DomainError):
            simulate_spine(tilted("bbm_single", 1.0), (0.0, 0), -1.0, seed=0)


class TestCatalog:
    """Tests for the test-function catalog."""

    def test_known_functions(self):
        positions = np.array([0.0, -1.0])
        types = np.array([0, 1])
        np.testing.assert_allclose(catalog_function("one", 2)(positions, types), [1.0, 1.0])
        np.testing.assert_allclose(
            catalog_function("exp_abs", 2)(positions, types), [1.0, math.exp(-1.0) / 2.0]
        )
        np.testing.assert_allclose(catalog_function("type_indicator:1", 2)(positions, types), [0.0, 1.0])

    @pytest.mark.parametrize("function_id", ["two", "type_indicator:2", "type_indicator:x"])
    def test_rejected_ids(self, function_id):
        with pytest.raises(DomainError):
            catalog_function(function_id, 2)


class TestManyToOne:
    """Population sums against spine marginals."""

    def test_bbm_constant_function(self):
        """g = 1: the additive martingale has mean 1."""
        result = many_to_one_check(bundled("bbm_single"), 0.5, 1.0, "one", replicas=1500, seed=6)
        assert result.rhs.mean == 1.0
        assert abs(result.z_score) <= 4.0
        data = result.to_dict()
        assert data["catalog_version"] == 1
        assert data["test_function"] == "one"

    def test_general_map_exp_abs(self):
        result = many_to_one_check(bundled("general_map"), 0.5, 1.0, "exp_abs", replicas=1500, seed=7)
        assert abs(result.z_score) <= 4.0

    def test_champneys_type_indicator(self):
        result = many_to_one_check(
            bundled("champneys"), 0.8, 1.0, "type_indicator:1", replicas=1500, seed=8, start=(0.5, 1)
        )
        assert abs(result.z_score) <= 4.0

    def test_unknown_function(self):
        with pytest.raises(DomainError):
            many_to_one_check(bundled("bbm_single"), 0.5, 1.0, "nope", replicas=2, seed=0)


class TestTiltWeight:
    def test_mean_one(self):
        """The exponential tilting weight is a mean-one martingale along MAP paths."""
        model = bundled("general_map")
        result = tilt_weight_mean(model, spectral_report(model, 0.6), t=1.0, replicas=2000, seed=9)
        assert result.z_against(1.0) == pytest.approx(0.0, abs=4.0)
