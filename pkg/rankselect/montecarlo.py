"""
Reproducible Monte Carlo plumbing

Replications are cut into fixed-size blocks. Every (seed, block, stream)
triple owns an independent Philox generator, so a block produces the same
draws no matter which worker runs it or how many workers there are.
"""
import concurrent.futures
import logging
import math
import multiprocessing
import os
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)

BLOCK_SIZE = 10_000
Z_95 = 1.959963984540054


class ProportionEstimate(BaseModel):
    """Empirical probability with a 95% Wilson half-width"""
    p_hat: float = Field(ge=0.0, le=1.0)
    replications: int
    ci_half_width: float
    seed: int


def stream_generator(seed: int, *key: int) -> np.random.Generator:
    """Philox generator addressed by seed plus an integer key path"""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))


def block_sizes(replications: int, block_size: int = BLOCK_SIZE) -> List[int]:
    full, rest = divmod(replications, block_size)
    return [block_size] * full + ([rest] if rest else [])


def wilson_half_width(successes: int, trials: int, z: float = Z_95) -> float:
    if trials < 1:
        raise ValueError("Wilson interval needs at least one trial")
    p = successes / trials
    denom = 1.0 + z * z / trials
    spread = z * math.sqrt(p * (1.0 - p) / trials + z * z / (4.0 * trials * trials))
    return spread / denom


def estimate_from_counts(successes: int, trials: int, seed: int) -> ProportionEstimate:
    return ProportionEstimate(
        p_hat=successes / trials,
        replications=trials,
        ci_half_width=wilson_half_width(successes, trials),
        seed=seed,
    )


def _default_start_method() -> str:
    methods = multiprocessing.get_all_start_methods()
    if os.name == "posix" and "fork" in methods:
        return "fork"
    if "spawn" in methods:
        return "spawn"
    return methods[0]


def run_tasks(worker: Callable, tasks: Sequence[Tuple], workers: int = 1) -> list:
    """
    Run worker(*task) for every task and return results in task order

    With workers > 1 the tasks go to a process pool; the worker must be a
    picklable module-level function.
    """
    workers = max(1, min(workers, len(tasks)))
    if workers == 1:
        return [worker(*task) for task in tasks]

    results = {}
    context = multiprocessing.get_context(_default_start_method())
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers, mp_context=context) as executor:
        futures = {executor.submit(worker, *task): idx for idx, task in enumerate(tasks)}
        for future in concurrent.futures.as_completed(futures):
            results[futures[future]] = future.result()

    logger.debug(f"Ran {len(tasks)} tasks on {workers} workers")
    return [results[idx] for idx in range(len(tasks))]


def count_successes(block_worker: Callable, payload, replications: int, seed: int,
                    workers: int = 1, block_size: Optional[int] = None) -> ProportionEstimate:
    """
    Sum block_worker(payload, seed, block_index, size) over all blocks

    block_worker returns the number of successful replications in its block.
    """
    sizes = block_sizes(replications, block_size or BLOCK_SIZE)
    tasks = [(payload, seed, idx, size) for idx, size in enumerate(sizes)]
    counts = run_tasks(block_worker, tasks, workers)
    return estimate_from_counts(int(sum(counts)), replications, seed)
