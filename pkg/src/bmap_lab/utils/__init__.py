"""Numerical kernels shared by the engines."""

from .linalg import matrix_exp, pf_eigenpair, stationary_distribution, tridiagonal_solve
from .replicas import ReplicaRunner, replica_rng
from .sampling import DiscreteSampler
from .stats import Estimate, estimate, two_sample_z

__all__ = [
    "matrix_exp",
    "pf_eigenpair",
    "stationary_distribution",
    "tridiagonal_solve",
    "ReplicaRunner",
    "replica_rng",
    "DiscreteSampler",
    "Estimate",
    "estimate",
    "two_sample_z",
]
