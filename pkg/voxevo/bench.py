"""Physics throughput benchmark over a synthetic population."""

from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Tuple
import logging
import os
import statistics
import time

import numpy as np
import pandas as pd

from .morphology import Material, MaterialTable, MassSpringSystem, VoxelGrid, build_mass_spring
from .physics import SimConfig, advance

logger = logging.getLogger(__name__)

BENCH_COLUMNS = ["threads", "robots", "steps", "springs", "spring_updates", "median_seconds",
                 "updates_per_second", "speedup"]


def synthetic_robot(index: int, dims: Tuple[int, int, int] = (5, 5, 5),
                    table: MaterialTable = MaterialTable()) -> MassSpringSystem:
    """Fully occupied block cycling through the four solid materials"""
    x, y, z = np.meshgrid(*(np.arange(n) for n in dims), indexing="ij")
    materials = (x + y + z + index) % 4 + Material.MUSCLE_EXPAND
    return build_mass_spring(VoxelGrid(dims=dims, materials=materials, weights=np.ones(dims)), table)


def synthetic_population(count: int = 30, dims: Tuple[int, int, int] = (5, 5, 5)) -> List[MassSpringSystem]:
    return [synthetic_robot(i, dims) for i in range(count)]


def thread_counts(max_threads: int) -> List[int]:
    counts = []
    n = 1
    while n < max_threads:
        counts.append(n)
        n *= 2
    counts.append(max_threads)
    return counts


def _trial(systems: List[MassSpringSystem], config: SimConfig, steps: int, threads: int) -> float:
    started = time.perf_counter()
    if threads == 1:
        for system in systems:
            advance(system, 0.0, config, steps)
    else:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            list(executor.map(lambda s: advance(s, 0.0, config, steps), systems))
    return time.perf_counter() - started


def bench(robots: int = 30, steps: int = 1000, max_threads: Optional[int] = None, trials: int = 5,
          dims: Tuple[int, int, int] = (5, 5, 5), config: Optional[SimConfig] = None) -> pd.DataFrame:
    """Spring updates per second at 1, 2, 4, ... threads (median of ``trials``)"""
    config = config or SimConfig()
    max_threads = max_threads or os.cpu_count() or 1
    systems = synthetic_population(robots, dims)
    springs = sum(s.num_springs for s in systems)
    updates = steps * springs

    # compile before timing
    advance(systems[0], 0.0, config, 1)

    rows = []
    baseline = None
    for threads in thread_counts(max_threads):
        median = statistics.median(_trial(systems, config, steps, threads) for _ in range(trials))
        throughput = updates / median
        baseline = baseline or throughput
        rows.append({
            "threads": threads,
            "robots": robots,
            "steps": steps,
            "springs": springs,
            "spring_updates": updates,
            "median_seconds": median,
            "updates_per_second": throughput,
            "speedup": throughput / baseline,
        })
        logger.info(f"{threads:>3} thread(s): {throughput:,.0f} spring updates/s")
    return pd.DataFrame(rows, columns=BENCH_COLUMNS)
