"""Small dense linear-algebra kernels: PF eigenpairs, matrix exponentials, stationary laws."""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import expm, solve_banded

from ..errors import ConvergenceError, DomainError
from ..models.model_spec import support_graph_irreducible

logger = logging.getLogger(__name__)

PF_TOLERANCE = 1e-13
PF_MAX_ITERATIONS = 100_000
# Plain power iterations before switching to shifted inverse iteration
PF_POWER_PHASE = 2_000


def _dominant_vector(
    shifted: np.ndarray, tol: float, max_iterations: int
) -> Tuple[float, np.ndarray]:
    """Dominant eigenpair of a non-negative primitive matrix, positive vector normalized to sum 1."""
    n = shifted.shape[0]
    scale = max(1.0, float(np.abs(shifted).sum(axis=1).max()))
    x = np.full(n, 1.0 / n)
    mu = float((shifted @ x).sum())

    for iteration in range(max_iterations):
        if iteration < PF_POWER_PHASE:
            y = shifted @ x
            mu = float(y.sum() / x.sum())
            y = y / y.sum()
        else:
            # Shifted inverse iteration, shift offset by 1e-12 * scale
            try:
                y = np.linalg.solve(shifted - (mu + 1e-12 * scale) * np.eye(n), x)
            except np.linalg.LinAlgError:
                y = shifted @ x
            y = np.abs(y)
            y = y / y.sum()
            mu = float((shifted @ y).sum() / y.sum())
        residual = float(np.abs(shifted @ y - mu * y).max() / max(np.abs(y).max(), 1e-300))
        x = y
        if residual <= tol * scale:
            logger.debug(f"PF iteration converged after {iteration + 1} steps")
            return mu, x

    raise ConvergenceError(
        f"power iteration did not converge in {max_iterations} iterations"
    )


def pf_eigenpair(
    m: np.ndarray,
    normalizer: Optional[np.ndarray] = None,
    tol: float = PF_TOLERANCE,
    max_iterations: int = PF_MAX_ITERATIONS,
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Perron-Frobenius eigenvalue with right vector V and left vector Y.

    ``m`` must have non-negative off-diagonal entries and an irreducible support graph.
    V is normalized by ``normalizer @ V = 1`` (defaults to the l1 norm) and Y by
    ``Y @ V = 1``.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError("matrix has non-finite entries")
    n = m.shape[0]
    if n == 1:
        return float(m[0, 0]), np.ones(1), np.ones(1)
    off = m[~np.eye(n, dtype=bool)]
    if np.any(off < 0.0):
        raise DomainError("matrix has negative off-diagonal entries")
    if not support_graph_irreducible(m):
        raise DomainError("matrix is reducible")

    c = float(np.abs(np.diag(m)).max()) + 1.0
    shifted = m + c * np.eye(n)
    mu_right, v = _dominant_vector(shifted, tol, max_iterations)
    _, y = _dominant_vector(shifted.T, tol, max_iterations)
    lam = mu_right - c

    weights = np.ones(n) if normalizer is None else np.asarray(normalizer, dtype=float)
    v = v / float(weights @ v)
    y = y / float(y @ v)
    return lam, v, y


def matrix_exp(m: np.ndarray, t: float = 1.0) -> np.ndarray:
    """exp(t m) for a finite square matrix and t >= 0."""
    if t < 0.0:
        raise DomainError(f"t must be >= 0, got {t}")
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries")
    return expm(float(t) * a)


def stationary_distribution(q: np.ndarray) -> np.ndarray:
    """Invariant law pi of an irreducible intensity matrix: pi q = 0, sum pi = 1."""
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    if n == 1:
        return np.ones(1)
    if not support_graph_irreducible(q):
        raise DomainError("intensity matrix is reducible")
    system = np.vstack([q.T, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    return pi


def tridiagonal_solve(
    lower: np.ndarray, diagonal: np.ndarray, upper: np.ndarray, rhs: np.ndarray
) -> np.ndarray:
    """Solve a tridiagonal system; ``lower``/``upper`` have length n-1."""
    n = diagonal.shape[0]
    banded = np.zeros((3, n))
    banded[0, 1:] = upper
    banded[1, :] = diagonal
    banded[2, :-1] = lower
    return solve_banded((1, 1), banded, rhs)
