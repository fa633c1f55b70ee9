"""Monte Carlo summary statistics."""

import math
from dataclasses import dataclass
from typing import Dict, Iterable, Sequence

import numpy as np

QUANTILE_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass(frozen=True)
class Estimate:
    """Sample mean with its standard error."""

    mean: float
    stderr: float
    n: int

    def z_against(self, target: float) -> float:
        return z_score(self.mean - target, self.stderr)

    def to_dict(self) -> Dict[str, float]:
        return {"mean": self.mean, "stderr": self.stderr, "n": self.n}


def estimate(samples: Iterable[float]) -> Estimate:
    values = np.asarray(list(samples), dtype=float)
    n = values.size
    if n == 0:
        return Estimate(math.nan, math.nan, 0)
    stderr = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return Estimate(float(values.mean()), stderr, n)


def z_score(difference: float, stderr: float) -> float:
    """difference / stderr, with 0/0 read as agreement."""
    if stderr == 0.0 or not math.isfinite(stderr):
        return 0.0 if difference == 0.0 else math.copysign(math.inf, difference)
    return difference / stderr


def two_sample_z(first: Estimate, second: Estimate) -> float:
    return z_score(first.mean - second.mean, math.hypot(first.stderr, second.stderr))


def quantile_summary(samples: Sequence[float]) -> Dict[str, float]:
    values = np.asarray(samples, dtype=float)
    if values.size == 0:
        return {f"q{int(level * 100):02d}": math.nan for level in QUANTILE_LEVELS}
    return {
        f"q{int(level * 100):02d}": float(np.quantile(values, level)) for level in QUANTILE_LEVELS
    }
