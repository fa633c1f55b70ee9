"""Sampling from finitely supported laws."""

import math
from typing import List, Optional

import numpy as np

from ..models.model_spec import DiscreteLaw

# Laws with more atoms than this use Walker's alias table
ALIAS_THRESHOLD = 8


class DiscreteSampler:
    """Draws atom values of a DiscreteLaw from a uniform variate.

    Small supports use a linear scan over the cumulative weights; larger ones use
    the alias method so a draw costs O(1).
    """

    def __init__(self, law: DiscreteLaw) -> None:
        self.values = [v for v, _ in law.atoms]
        probs = np.array([p for _, p in law.atoms], dtype=float)
        probs = probs / probs.sum()
        self.size = len(self.values)
        self.use_alias = self.size > ALIAS_THRESHOLD
        if self.use_alias:
            self._build_alias(probs)
        else:
            self._cumulative: List[float] = list(np.cumsum(probs))
            self._cumulative[-1] = 1.0

    def _build_alias(self, probs: np.ndarray) -> None:
        n = self.size
        scaled = probs * n
        self._accept = [1.0] * n
        self._alias = list(range(n))
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            self._accept[s] = float(scaled[s])
            self._alias[s] = g
            scaled[g] = scaled[g] + scaled[s] - 1.0
            (small if scaled[g] < 1.0 else large).append(g)

    def draw(self, u: float) -> float:
        """Map one uniform(0,1) variate to an atom value."""
        if self.size == 1:
            return self.values[0]
        if self.use_alias:
            position = u * self.size
            index = min(int(position), self.size - 1)
            if position - index < self._accept[index]:
                return self.values[index]
            return self.values[self._alias[index]]
        for index, bound in enumerate(self._cumulative):
            if u < bound:
                return self.values[index]
        return self.values[-1]

    def sample(self, rng: np.random.Generator) -> float:
        return self.draw(float(rng.random()))


def switch_target_samplers(q: np.ndarray) -> List[Optional[DiscreteSampler]]:
    """Per-row sampler of the next type, proportional to the off-diagonal rates of ``q``.

    Rows without outgoing rate get ``None``.
    """
    q = np.asarray(q, dtype=float)
    d = q.shape[0]
    samplers: List[Optional[DiscreteSampler]] = []
    for i in range(d):
        targets = [(float(j), float(q[i, j])) for j in range(d) if j != i and q[i, j] > 0.0]
        total = math.fsum(rate for _, rate in targets)
        if total > 0.0:
            samplers.append(DiscreteSampler(DiscreteLaw(tuple((j, r / total) for j, r in targets))))
        else:
            samplers.append(None)
    return samplers
