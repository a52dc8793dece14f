import asyncio
import functools
import logging
import os
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from types import TracebackType
from typing import Callable, List, Optional, Sequence, Type, TypeVar

logger = logging.getLogger(__name__)

_T = TypeVar("_T")
_R = TypeVar("_R")


class BlockPool:
    """
    Maps a job function over independent work items (blocks, images) and
    returns the results in submission order, whatever the schedule.

    With ``workers=1`` everything runs inline in the calling thread. With
    more workers the jobs go to a process pool (the default; job functions
    and items must then be picklable) or a thread pool.
    """

    def __init__(self, workers: int = 1, *, processes: bool = True) -> None:
        if workers < 1:
            raise ValueError(f"workers must be at least 1, got {workers}")
        self.workers = workers
        self.processes = processes
        self._executor: Optional[Executor] = None

    @classmethod
    def from_setting(cls, workers: int) -> "BlockPool":
        """
        A pool sized from a configuration value; 0 means one worker per CPU.
        """
        return cls(workers or os.cpu_count() or 1)

    @property
    def executor(self) -> Optional[Executor]:
        if self.workers == 1:
            return None
        if self._executor is None:
            if self.processes:
                self._executor = ProcessPoolExecutor(max_workers=self.workers)
            else:
                self._executor = ThreadPoolExecutor(max_workers=self.workers)
            logger.debug("Started %d-worker %s pool", self.workers, "process" if self.processes else "thread")
        return self._executor

    def map(self, fn: Callable[[_T], _R], items: Sequence[_T]) -> List[_R]:
        executor = self.executor
        if executor is None:
            return [fn(item) for item in items]
        chunksize = max(1, len(items) // (self.workers * 4))
        return list(executor.map(fn, items, chunksize=chunksize))

    async def map_async(self, fn: Callable[[_T], _R], items: Sequence[_T]) -> List[_R]:
        """
        Same contract as ``map``, awaitable from a running event loop.
        Inline pools fall back to the loop's default thread executor.
        """
        loop = asyncio.get_running_loop()
        futures = [loop.run_in_executor(self.executor, functools.partial(fn, item)) for item in items]
        return list(await asyncio.gather(*futures))

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def __enter__(self) -> "BlockPool":
        return self

    def __exit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc_val: Optional[BaseException],
        exc_tb: Optional[TracebackType],
    ) -> None:
        self.close()
