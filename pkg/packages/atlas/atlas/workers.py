from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def parallel_map[T, R](fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    """Map `fn` over `items` on a thread pool; results keep input order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def child_seed(seed: int, *keys: int) -> int:
    # Stream-split so sub-results do not depend on scheduling or worker count.
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1, dtype=np.uint64)[0])


def child_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))
