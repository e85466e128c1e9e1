from itertools import combinations, product
import os

import numpy as np
import pytest

from voxevo.bench import BENCH_COLUMNS, bench, synthetic_population, synthetic_robot, thread_counts
from voxevo.physics import SimConfig


def block_spring_count(dims):
    """Distinct vertex pairs that share at least one voxel of a full block"""
    pairs = set()
    for cell in product(*(range(n) for n in dims)):
        corners = [tuple(c + o for c, o in zip(cell, offset)) for offset in product((0, 1), repeat=3)]
        pairs.update(combinations(sorted(corners), 2))
    return len(pairs)


class TestBench:
    def test_thread_counts(self):
        assert thread_counts(1) == [1]
        assert thread_counts(8) == [1, 2, 4, 8]
        assert thread_counts(6) == [1, 2, 4, 6]

    def test_synthetic_robot_topology(self):
        robot = synthetic_robot(0, (2, 2, 2))
        assert robot.num_springs == block_spring_count((2, 2, 2))
        assert robot.num_masses == 27

    def test_report(self):
        frame = bench(robots=3, steps=20, max_threads=2, trials=1, dims=(2, 2, 2), config=SimConfig(dt=1e-4))
        assert list(frame.columns) == BENCH_COLUMNS
        assert list(frame["threads"]) == [1, 2]
        assert (frame["spring_updates"] == 20 * 3 * block_spring_count((2, 2, 2))).all()
        assert frame["updates_per_second"].iloc[0] > 0
        assert frame["speedup"].iloc[0] == 1.0

    def test_outputs_untouched(self, monkeypatch):
        systems = synthetic_population(2, (2, 2, 2))
        before = [(s.positions.copy(), s.velocities.copy()) for s in systems]
        monkeypatch.setattr("voxevo.bench.synthetic_population", lambda count, dims: systems)
        bench(robots=2, steps=50, max_threads=2, trials=1, dims=(2, 2, 2))
        for system, (positions, velocities) in zip(systems, before):
            np.testing.assert_array_equal(system.positions, positions)
            np.testing.assert_array_equal(system.velocities, velocities)

    @pytest.mark.slow
    @pytest.mark.skipif((os.cpu_count() or 1) < 8, reason="needs 8 cores")
    def test_eight_threads_scale(self):
        frame = bench(max_threads=8, steps=1000, trials=5)
        assert frame["threads"].iloc[-1] == 8
        assert frame["speedup"].iloc[-1] >= 3.0
