# app/services/ensemble.py

"""
Fixed-partition parallel ensembles.

Paths are split into batches of ENSEMBLE_BATCH_SIZE in path order. A batch is
the unit of work handed to the thread pool; each batch returns per-path arrays,
which are concatenated in path order. The partition depends only on the batch
size, never on the thread count, so results are identical for any --threads.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from app.core.config import get_settings
from app.core.logging_config import error_logger, simulation_logger
from app.core.seeding import derive_stream
from app.schemas.reports import EnsembleSummary

BatchWorker = Callable[[np.ndarray], Dict[str, np.ndarray]]


@dataclass
class EnsembleResult:
    values: np.ndarray
    censored: np.ndarray
    seeds: List[int] = field(default_factory=list)
    extras: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def censored_n(self) -> int:
        return int(np.sum(self.censored))

    @property
    def mean(self) -> float:
        return fsum_mean(self.values)

    @property
    def var(self) -> float:
        if self.n < 2:
            return 0.0
        mu = self.mean
        return math.fsum(float(v - mu) ** 2 for v in self.values) / (self.n - 1)

    @property
    def se(self) -> float:
        return math.sqrt(self.var / self.n) if self.n > 0 else 0.0

    def summary(self) -> EnsembleSummary:
        return EnsembleSummary(mean=self.mean, var=self.var, se=self.se, n=self.n, censored_n=self.censored_n)


def fsum_mean(values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float).ravel()
    return math.fsum(values.tolist()) / values.size if values.size else 0.0


def fsum_se(values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float).ravel()
    n = values.size
    if n < 2:
        return 0.0
    mu = fsum_mean(values)
    return math.sqrt(math.fsum(((values - mu) ** 2).tolist()) / (n - 1) / n)


def path_seeds(master_seed: int, n_paths: int, *prefix: int) -> List[int]:
    """Per-path stream seeds derive_stream(master, *prefix, path)."""
    return [derive_stream(master_seed, *prefix, p) for p in range(n_paths)]


def run_batches(
    n_paths: int,
    worker: BatchWorker,
    threads: Optional[int] = None,
    batch_size: Optional[int] = None,
    label: str = "ENSEMBLE",
) -> Dict[str, np.ndarray]:
    """Run worker over fixed path batches on a thread pool; concatenate outputs in path order."""
    settings = get_settings()
    batch_size = batch_size or settings.ENSEMBLE_BATCH_SIZE
    threads = max(1, threads or settings.DEFAULT_THREADS)
    batches = [np.arange(s, min(s + batch_size, n_paths)) for s in range(0, n_paths, batch_size)]
    simulation_logger.info(f"[{label}] n_paths={n_paths} batches={len(batches)} batch_size={batch_size} threads={threads}")

    if threads == 1 or len(batches) == 1:
        outputs = [worker(idx) for idx in batches]
    else:
        try:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outputs = list(pool.map(worker, batches))
        except Exception as exc:
            error_logger.error(f"[{label}] batch worker failed: {exc}", exc_info=True)
            raise

    if not outputs:
        return {}
    return {key: np.concatenate([out[key] for out in outputs]) for key in outputs[0]}
