import asyncio
import os
from typing import Any, Callable, List, Optional, Sequence, Tuple

default_workers = int(os.getenv("HOPF_WORKERS", os.cpu_count() or 1))


async def gather_bounded(calls: Sequence[Tuple[Callable, tuple]], workers: Optional[int] = None,
                         return_exceptions: bool = False) -> List[Any]:
    """Run blocking calls on threads, at most `workers` at a time; results keep input order."""
    sem = asyncio.Semaphore(max(1, workers or default_workers))

    async def one(fn: Callable, args: tuple):
        async with sem:
            return await asyncio.to_thread(fn, *args)

    tasks = [one(fn, args) for fn, args in calls]
    return await asyncio.gather(*tasks, return_exceptions=return_exceptions)
