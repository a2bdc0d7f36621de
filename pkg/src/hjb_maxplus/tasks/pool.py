import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

import numpy as np

from ..config import get_settings

logger = logging.getLogger("hjb_maxplus.pool")

T = TypeVar("T")


class WorkerPool:
    """Chunked evaluation on a thread pool; results are merged in submission order."""

    def __init__(self, threads: Optional[int] = None, chunk_size: Optional[int] = None):
        settings = get_settings()
        self.threads = max(1, threads or settings.HJB_THREADS)
        self.chunk_size = max(1, chunk_size or settings.HJB_CHUNK_SIZE)
        self._executor: Optional[ThreadPoolExecutor] = None

    def start(self):
        if self.threads > 1 and self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=self.threads)
            logger.info(f"Worker pool started with {self.threads} threads")
        return self

    def shutdown(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
            logger.info("Worker pool shutdown")

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.shutdown()

    def map(self, fn: Callable[..., T], tasks: Sequence) -> List[T]:
        """Apply fn to every task; the output order is the task order."""
        if self._executor is None:
            return [fn(task) for task in tasks]
        return list(self._executor.map(fn, tasks))

    def map_rows(self, fn: Callable[[np.ndarray], np.ndarray], X: np.ndarray) -> List:
        """Apply fn to consecutive row chunks of X."""
        chunks = [X[i : i + self.chunk_size] for i in range(0, X.shape[0], self.chunk_size)]
        return self.map(fn, chunks)
