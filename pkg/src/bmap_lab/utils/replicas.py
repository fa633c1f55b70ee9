"""Per-replica random streams and replica scheduling."""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Optional, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")

WORKERS_ENV = "BMAP_LAB_WORKERS"


def replica_rng(master_seed: int, replica_index: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed by (master_seed, replica_index, stream).

    The stream depends only on these integers, so a replica produces the same draws
    whichever worker runs it.
    """
    sequence = np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=(int(replica_index), int(stream))
    )
    return np.random.Generator(np.random.Philox(sequence))


def default_workers() -> int:
    """Worker count from BMAP_LAB_WORKERS, falling back to 1."""
    raw = os.environ.get(WORKERS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        if raw:
            logger.warning(f"Ignoring non-integer {WORKERS_ENV}={raw!r}")
        return 1


class ReplicaRunner:
    """Runs independent replica tasks sequentially or on a process pool.

    Results always come back ordered by replica index.
    """

    def __init__(self, workers: Optional[int] = None) -> None:
        self.workers = default_workers() if workers is None else max(1, int(workers))

    def map(self, task: Callable[[int], T], replicas: int, first_index: int = 0) -> List[T]:
        indices = range(first_index, first_index + replicas)
        if self.workers == 1 or replicas <= 1:
            return [task(i) for i in indices]
        chunk = max(1, replicas // (4 * self.workers))
        logger.info(f"Running {replicas} replicas on {self.workers} workers")
        with ProcessPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(task, indices, chunksize=chunk))
