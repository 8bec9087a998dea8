import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Iterable, List

logger = logging.getLogger(__name__)


def run_blocks(fn: Callable[..., Any], tasks: Iterable[tuple], workers: int = 1) -> List[Any]:
    """
    Run `fn(*task)` for every task and return results in task order.

    workers == 1 runs inline. Otherwise tasks go to a process pool; `map`
    preserves submission order, so merging is deterministic.
    """
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*task) for task in tasks]

    logger.debug("dispatching %d blocks to %d workers", len(tasks), workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*tasks)))
