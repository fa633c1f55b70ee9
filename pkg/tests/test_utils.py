"""Tests for linear-algebra kernels, sampling, replica streams and statistics."""

import functools
import math
import pytest
import numpy as np
from pathlib import Path
from scipy.stats import chisquare
import sys

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from bmap_lab.errors import DomainError
from bmap_lab.models.model_spec import DiscreteLaw
from bmap_lab.utils.linalg import (
    matrix_exp,
    pf_eigenpair,
    stationary_distribution,
    tridiagonal_solve,
)
from bmap_lab.utils.replicas import WORKERS_ENV, ReplicaRunner, default_workers, replica_rng
from bmap_lab.utils.sampling import DiscreteSampler, switch_target_samplers
from bmap_lab.utils.stats import estimate, quantile_summary, two_sample_z, z_score


class TestPfEigenpair:
    """Tests for the Perron-Frobenius eigenpair."""

    @pytest.fixture
    def matrix(self):
        return np.array([[-2.0, 1.5, 0.0], [0.5, 1.0, 2.0], [1.0, 0.0, -0.5]])

    def test_matches_dense_eigensolver(self, matrix):
        lam, v, y = pf_eigenpair(matrix)
        eigenvalues = np.linalg.eigvals(matrix)
        assert lam == pytest.approx(float(np.max(eigenvalues.real)), abs=1e-10)
        np.testing.assert_allclose(matrix @ v, lam * v, atol=1e-10)
        np.testing.assert_allclose(y @ matrix, lam * y, atol=1e-10)

    def test_vectors_positive_and_normalized(self, matrix):
        weights = np.array([0.2, 0.3, 0.5])
        _, v, y = pf_eigenpair(matrix, normalizer=weights)
        assert np.all(v > 0) and np.all(y > 0)
        assert weights @ v == pytest.approx(1.0)
        assert y @ v == pytest.approx(1.0)

    def test_scalar(self):
        lam, v, y = pf_eigenpair(np.array([[3.5]]))
        assert lam == 3.5
        assert v.tolist() == [1.0] and y.tolist() == [1.0]

    def test_reducible_rejected(self):
        with pytest.raises(DomainError, match="reducible"):
            pf_eigenpair(np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_negative_off_diagonal_rejected(self):
        with pytest.raises(DomainError):
            pf_eigenpair(np.array([[1.0, -1.0], [1.0, 1.0]]))


class TestMatrixExp:
    """Tests for the matrix exponential."""

    def test_two_state_closed_form(self):
        """P(t) = Pi + e^{-(a+b)t} (I - Pi) for the chain with rates a, b."""
        a, b, t = 1.0, 2.0, 0.7
        q = np.array([[-a, a], [b, -b]])
        pi = np.array([b, a]) / (a + b)
        limit = np.vstack([pi, pi])
        expected = limit + np.exp(-(a + b) * t) * (np.eye(2) - limit)
        np.testing.assert_allclose(matrix_exp(q, t), expected, atol=1e-13)

    def test_zero_time_is_identity(self):
        np.testing.assert_allclose(matrix_exp(np.ones((3, 3)), 0.0), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(matrix_exp(np.diag([0.5, -1.0, 2.0]), 1.5), np.diag(np.exp([0.75, -1.5, 3.0])))

    def test_semigroup(self):
        m = np.random.default_rng(12).normal(size=(3, 3))
        np.testing.assert_allclose(
            matrix_exp(m, 0.5 + 1.3), matrix_exp(m, 0.5) @ matrix_exp(m, 1.3), rtol=1e-10, atol=1e-12
        )

    def test_non_square_rejected(self):
        with pytest.raises(DomainError):
            matrix_exp(np.ones((2, 3)))

    def test_intensity_matrix_rows_sum_to_one(self):
        q = np.array([[-1.0, 1.0], [2.0, -2.0]])
        p = matrix_exp(q, 3.0)
        np.testing.assert_allclose(p.sum(axis=1), [1.0, 1.0], atol=1e-12)

    def test_negative_time_rejected(self):
        with pytest.raises(DomainError):
            matrix_exp(np.eye(2), -1.0)


class TestStationaryDistribution:
    def test_two_state_chain(self):
        pi = stationary_distribution(np.array([[-1.0, 1.0], [2.0, -2.0]]))
        np.testing.assert_allclose(pi, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)

    def test_reducible_rejected(self):
        with pytest.raises(DomainError):
            stationary_distribution(np.array([[0.0, 0.0], [1.0, -1.0]]))


class TestTridiagonalSolve:
    def test_matches_dense_solve(self):
        n = 6
        lower = np.full(n - 1, -1.0)
        upper = np.full(n - 1, -0.5)
        diagonal = np.full(n, 3.0)
        rhs = np.arange(1.0, n + 1.0)
        dense = np.diag(diagonal) + np.diag(lower, -1) + np.diag(upper, 1)
        np.testing.assert_allclose(
            tridiagonal_solve(lower, diagonal, upper, rhs), np.linalg.solve(dense, rhs)
        )


class TestDiscreteSampler:
    """Tests for DiscreteSampler."""

    def test_point_mass(self):
        sampler = DiscreteSampler(DiscreteLaw.point_mass(2.0))
        assert sampler.draw(0.999) == 2.0

    def test_linear_scan_boundaries(self):
        sampler = DiscreteSampler(DiscreteLaw.from_pairs([[0, 0.25], [2, 0.75]]))
        assert not sampler.use_alias
        assert sampler.draw(0.1) == 0
        assert sampler.draw(0.3) == 2

    @pytest.mark.parametrize("atoms", [3, 12])
    def test_frequencies(self, atoms):
        """Empirical frequencies pass a chi-square test (scan and alias paths)."""
        probs = np.arange(1.0, atoms + 1.0)
        probs = probs / probs.sum()
        law = DiscreteLaw.from_pairs([[float(k), p] for k, p in enumerate(probs)])
        sampler = DiscreteSampler(law)
        assert sampler.use_alias == (atoms > 8)
        rng = np.random.default_rng(11)
        n = 20_000
        draws = np.array([sampler.sample(rng) for _ in range(n)], dtype=int)
        observed = np.bincount(draws, minlength=atoms)
        _, p_value = chisquare(observed, probs * n)
        assert p_value > 1e-4

    def test_switch_targets(self):
        """Next-type frequencies follow the off-diagonal rates; absorbing rows get None."""
        q = np.array([[-3.0, 1.0, 2.0], [0.0, 0.0, 0.0], [0.5, 0.5, -1.0]])
        samplers = switch_target_samplers(q)
        assert samplers[1] is None
        assert samplers[2] is not None
        assert {samplers[2].draw(0.2), samplers[2].draw(0.8)} == {0.0, 1.0}
        rng = np.random.default_rng(5)
        n = 12_000
        draws = np.array([samplers[0].sample(rng) for _ in range(n)], dtype=int)
        observed = np.bincount(draws, minlength=3)
        assert observed[0] == 0
        _, p_value = chisquare(observed[1:], np.array([1.0, 2.0]) / 3.0 * n)
        assert p_value > 1e-4


class TestReplicaStreams:
    """Tests for replica RNG streams and the runner."""

    def test_reproducible(self):
        a = replica_rng(42, 7, 0).random(5)
        b = replica_rng(42, 7, 0).random(5)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        base = replica_rng(42, 7, 0).random(5)
        assert not np.allclose(base, replica_rng(42, 8, 0).random(5))
        assert not np.allclose(base, replica_rng(42, 7, 1).random(5))
        assert not np.allclose(base, replica_rng(43, 7, 0).random(5))

    def test_runner_order_sequential(self):
        assert ReplicaRunner(1).map(functools.partial(pow, exp=2), 5, first_index=2) == [4, 9, 16, 25, 36]

    def test_runner_order_pool(self):
        """Process-pool results come back ordered by replica index."""
        assert ReplicaRunner(2).map(functools.partial(pow, exp=2), 8) == [i * i for i in range(8)]

    def test_default_workers_from_env(self, monkeypatch):
        monkeypatch.setenv(WORKERS_ENV, "3")
        assert default_workers() == 3
        monkeypatch.setenv(WORKERS_ENV, "many")
        assert default_workers() == 1
        monkeypatch.delenv(WORKERS_ENV)
        assert default_workers() == 1


class TestStats:
    """Tests for Monte Carlo statistics."""

    def test_estimate(self):
        result = estimate([1.0, 2.0, 3.0, 4.0])
        assert result.mean == pytest.approx(2.5)
        assert result.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2.0)
        assert result.n == 4

    def test_single_sample_has_infinite_stderr(self):
        assert estimate([1.0]).stderr == math.inf
        assert math.isnan(estimate([]).mean)

    def test_z_score_degenerate(self):
        assert z_score(0.0, 0.0) == 0.0
        assert z_score(1.0, 0.0) == math.inf
        assert z_score(-1.0, 0.5) == -2.0

    def test_two_sample(self):
        first = estimate([1.0, 1.0, 1.0])
        second = estimate([1.0, 1.0, 1.0])
        assert two_sample_z(first, second) == 0.0

    def test_quantiles(self):
        summary = quantile_summary(np.arange(101.0))
        assert summary["q50"] == pytest.approx(50.0)
        assert set(summary) == {"q05", "q25", "q50", "q75", "q95"}
