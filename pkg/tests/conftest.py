from typing import Dict, Tuple

import numpy as np
import pytest

from voxevo.genome import EncodingSpec, Genome, sample_genome
from voxevo.morphology import Material, VoxelGrid
from voxevo.physics import SimConfig

Cell = Tuple[int, int, int]


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale acceptance runs (minutes)")


def zero_genome(spec: EncodingSpec = EncodingSpec(m=4), hidden=(8,), material_bias=None) -> Genome:
    """Genome whose every weight is zero, optionally with a material head bias"""
    g = sample_genome(spec, hidden, seed=1)
    g = g.with_flat(np.zeros(g.num_parameters))
    if material_bias is None:
        return g
    return Genome(spec=g.spec, B=g.B, layers=g.layers,
                  head_material=(g.head_material[0], np.array(material_bias, dtype=float)),
                  head_weight=g.head_weight)


def grid_from(cells: Dict[Cell, Tuple[Material, float]], dims=(3, 3, 3)) -> VoxelGrid:
    materials = np.zeros(dims, dtype=np.int8)
    weights = np.ones(dims)
    for cell, (material, weight) in cells.items():
        materials[cell] = material
        weights[cell] = weight
    return VoxelGrid(dims=dims, materials=materials, weights=weights)


@pytest.fixture
def quick_sim():
    return SimConfig(dt=1e-4, duration=0.05)


@pytest.fixture
def free_space():
    """No gravity, no ground"""
    return SimConfig(gravity=0.0, contact=False, dt=1e-5)
