# parallel.py
# Fold-level parallelism: worker threads bounded by a semaphore, results in submission order

import asyncio
import logging
from typing import Callable, List, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")


async def gather_bounded(jobs: Sequence[Callable[[], T]], threads: int) -> List[T]:
    """
    Each job runs in its own worker thread (asyncio.to_thread), at most `threads`
    at a time. Results come back in job order.
    """
    semaphore = asyncio.Semaphore(max(1, threads))

    async def run(job: Callable[[], T]) -> T:
        async with semaphore:
            return await asyncio.to_thread(job)

    return await asyncio.gather(*(run(job) for job in jobs))


def run_parallel(jobs: Sequence[Callable[[], T]], threads: int = 1) -> List[T]:
    if threads <= 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    logger.info(f"Running {len(jobs)} jobs on {threads} threads")
    return asyncio.run(gather_bounded(jobs, threads))
