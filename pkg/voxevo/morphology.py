"""Decode a genome into a voxel body and build its mass-spring network."""

from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from itertools import combinations, product
from typing import Dict, List, Optional, Tuple
import logging
import math

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .errors import EmptyRobot
from .genome import Genome, forward_batch

logger = logging.getLogger(__name__)

W_MIN = 0.1
DEFAULT_DIMS = (5, 5, 5)


class Material(IntEnum):
    EMPTY = 0
    MUSCLE_EXPAND = 1
    MUSCLE_CONTRACT = 2
    SOFT_TISSUE = 3
    HARD_BONE = 4

    @property
    def key(self) -> str:
        return self.name.lower()

    @property
    def is_muscle(self) -> bool:
        return self in (Material.MUSCLE_EXPAND, Material.MUSCLE_CONTRACT)


MUSCLE_SIGN = {Material.MUSCLE_EXPAND: 1.0, Material.MUSCLE_CONTRACT: -1.0}


class PlaneParams(BaseModel):
    k_ground: float = Field(default=1e5, gt=0)
    damping_ratio: float = Field(default=0.1, ge=0)
    mu_static: float = Field(default=0.6, ge=0)
    mu_kinetic: float = Field(default=1.0, ge=0)


class MaterialTable(BaseModel):
    """Material and plane parameters (SI units)"""

    k_muscle: float = Field(default=2e3, gt=0)
    k_soft: float = Field(default=1e3, gt=0)
    k_bone: float = Field(default=1e4, gt=0)
    damping_ratio: float = Field(default=0.1, gt=0)
    amp_max: float = Field(default=0.25, gt=0, lt=1)
    phase_max: float = Field(default=math.pi, gt=0)
    voxel_edge: float = Field(default=0.1, gt=0)
    mass_per_index: float = Field(default=0.1, gt=0)
    plane: PlaneParams = Field(default_factory=PlaneParams)
    # per-material stiffness multipliers proposed by the advisor
    multipliers: Dict[str, float] = Field(default_factory=dict)

    @field_validator("multipliers")
    @classmethod
    def _known_materials(cls, value: Dict[str, float]) -> Dict[str, float]:
        known = {m.key for m in Material if m is not Material.EMPTY}
        unknown = set(value) - known
        if unknown:
            raise ValueError(f"unknown materials {sorted(unknown)}")
        if any(not v > 0 for v in value.values()):
            raise ValueError("multipliers must be positive")
        return value

    def base_stiffness(self, material: Material) -> float:
        base = {
            Material.MUSCLE_EXPAND: self.k_muscle,
            Material.MUSCLE_CONTRACT: self.k_muscle,
            Material.SOFT_TISSUE: self.k_soft,
            Material.HARD_BONE: self.k_bone,
        }[material]
        return base * self.multipliers.get(material.key, 1.0)


def apply_multipliers(table: MaterialTable, multipliers: Optional[Dict[str, float]]) -> MaterialTable:
    if not multipliers:
        return table
    return table.model_copy(update={"multipliers": dict(multipliers)})


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    dims: Tuple[int, int, int]
    materials: np.ndarray  # (W, H, D) of Material values
    weights: np.ndarray  # (W, H, D), clamped to [W_MIN, 1]

    def __post_init__(self):
        materials = np.array(self.materials, dtype=np.int8).reshape(self.dims)
        weights = np.array(self.weights, dtype=np.float64).reshape(self.dims)
        materials.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "materials", materials)
        object.__setattr__(self, "weights", weights)

    @property
    def occupied(self) -> int:
        return int(np.count_nonzero(self.materials))

    @property
    def muscles(self) -> int:
        return int(np.count_nonzero(np.isin(self.materials, [Material.MUSCLE_EXPAND, Material.MUSCLE_CONTRACT])))

    def equals(self, other: "VoxelGrid") -> bool:
        return (
            self.dims == other.dims
            and np.array_equal(self.materials, other.materials)
            and np.array_equal(self.weights, other.weights)
        )


def voxel_centers(dims: Tuple[int, int, int]) -> np.ndarray:
    """Voxel centers normalised to [0,1]^3, in C order over (W, H, D)"""
    axes = [(np.arange(n) + 0.5) / n for n in dims]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in grid], axis=1)


def decode(g: Genome, dims: Tuple[int, int, int] = DEFAULT_DIMS) -> VoxelGrid:
    if any(int(n) < 1 for n in dims):
        raise ValueError(f"grid dims must be positive, got {dims}")

    probs, weights = forward_batch(g, voxel_centers(dims))
    # argmax returns the first maximum, so ties go to the lowest category
    materials = np.argmax(probs, axis=1)
    return VoxelGrid(dims=tuple(dims), materials=materials, weights=np.clip(weights, W_MIN, 1.0))


_NEIGHBOURS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


def largest_component(grid: VoxelGrid) -> VoxelGrid:
    """Keep only the largest 6-connected body; ties go to the component found first"""
    occupied = grid.materials != Material.EMPTY
    labels = np.zeros(grid.dims, dtype=np.int32)
    best_label, best_size = 0, 0
    next_label = 0

    for start in zip(*np.nonzero(occupied)):
        if labels[start]:
            continue
        next_label += 1
        labels[start] = next_label
        size = 0
        queue = deque([start])
        while queue:
            cell = queue.popleft()
            size += 1
            for dx, dy, dz in _NEIGHBOURS:
                n = (cell[0] + dx, cell[1] + dy, cell[2] + dz)
                if all(0 <= n[a] < grid.dims[a] for a in range(3)) and occupied[n] and not labels[n]:
                    labels[n] = next_label
                    queue.append(n)
        if size > best_size:
            best_label, best_size = next_label, size

    if next_label <= 1:
        return grid

    keep = labels == best_label
    logger.debug(f"Dropped {next_label - 1} detached component(s), kept {best_size} voxels")
    return VoxelGrid(dims=grid.dims, materials=np.where(keep, grid.materials, Material.EMPTY), weights=grid.weights)


@dataclass(frozen=True, eq=False)
class MassSpringSystem:
    """Point masses, damped springs and the ground plane.

    Springs are stored as parallel arrays sorted by (i, j) with i < j.
    ``act_sign`` is +1/-1 for expanding/contracting muscles and 0 for passive springs.
    The incidence arrays list, for every mass, its springs in ascending spring index
    together with the sign the spring's force on ``i`` enters with.
    """

    positions: np.ndarray
    velocities: np.ndarray
    masses: np.ndarray
    spring_i: np.ndarray
    spring_j: np.ndarray
    stiffness: np.ndarray
    rest0: np.ndarray
    damping_ratio: np.ndarray
    act_sign: np.ndarray
    act_amplitude: np.ndarray
    act_phase: np.ndarray
    plane: PlaneParams

    def __post_init__(self):
        for name, dtype in (
            ("positions", np.float64), ("velocities", np.float64), ("masses", np.float64),
            ("spring_i", np.int64), ("spring_j", np.int64), ("stiffness", np.float64),
            ("rest0", np.float64), ("damping_ratio", np.float64), ("act_sign", np.float64),
            ("act_amplitude", np.float64), ("act_phase", np.float64),
        ):
            array = np.array(getattr(self, name), dtype=dtype)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

        if np.any(self.spring_i == self.spring_j):
            raise ValueError("spring connects a mass to itself")

        ends = np.concatenate([self.spring_i, self.spring_j])
        springs = np.concatenate([np.arange(self.num_springs)] * 2)
        signs = np.concatenate([np.ones(self.num_springs), -np.ones(self.num_springs)])
        order = np.lexsort((springs, ends))
        counts = np.bincount(ends, minlength=self.num_masses)
        ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        for name, array in (
            ("incident_ptr", ptr),
            ("incident_spring", springs[order].astype(np.int64)),
            ("incident_sign", signs[order]),
        ):
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def num_masses(self) -> int:
        return len(self.masses)

    @property
    def num_springs(self) -> int:
        return len(self.spring_i)

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def center_of_mass(self) -> np.ndarray:
        return (self.masses[:, None] * self.positions).sum(axis=0) / self.total_mass

    def with_state(self, positions: np.ndarray, velocities: np.ndarray) -> "MassSpringSystem":
        return MassSpringSystem(
            positions=positions, velocities=velocities, masses=self.masses,
            spring_i=self.spring_i, spring_j=self.spring_j, stiffness=self.stiffness,
            rest0=self.rest0, damping_ratio=self.damping_ratio, act_sign=self.act_sign,
            act_amplitude=self.act_amplitude, act_phase=self.act_phase, plane=self.plane,
        )

    def with_damping(self, ratio: float) -> "MassSpringSystem":
        """Copy with every spring's damping ratio replaced (test harness override)"""
        copy = self.with_state(self.positions, self.velocities)
        damping = np.full(self.num_springs, float(ratio))
        damping.setflags(write=False)
        object.__setattr__(copy, "damping_ratio", damping)
        return copy


# corner offsets of a unit voxel, in C order
_CORNERS = list(product((0, 1), repeat=3))
_CORNER_PAIRS = list(combinations(range(8), 2))


def build_mass_spring(grid: VoxelGrid, table: MaterialTable = MaterialTable()) -> MassSpringSystem:
    if grid.occupied == 0:
        raise EmptyRobot("grid has no occupied voxel")

    W, H, D = grid.dims
    lattice = (W + 1, H + 1, D + 1)
    voxels = [tuple(int(c) for c in cell) for cell in zip(*np.nonzero(grid.materials != Material.EMPTY))]

    def vertex_id(cell, corner):
        return np.ravel_multi_index(tuple(cell[a] + corner[a] for a in range(3)), lattice)

    vertex_ids = sorted({int(vertex_id(cell, corner)) for cell in voxels for corner in _CORNERS})
    mass_index = {vid: n for n, vid in enumerate(vertex_ids)}
    positions = np.array(np.unravel_index(vertex_ids, lattice), dtype=np.float64).T * table.voxel_edge
    positions[:, 2] -= positions[:, 2].min()

    # voxels are visited in ascending linear index, so the first muscle to touch a spring wins
    contributions: Dict[Tuple[int, int], List[float]] = {}
    actuation: Dict[Tuple[int, int], Tuple[float, float, float]] = {}
    for cell in voxels:
        material = Material(int(grid.materials[cell]))
        weight = float(grid.weights[cell])
        corners = [mass_index[int(vertex_id(cell, corner))] for corner in _CORNERS]
        for a, b in _CORNER_PAIRS:
            key = (min(corners[a], corners[b]), max(corners[a], corners[b]))
            contributions.setdefault(key, []).append(weight * table.base_stiffness(material))
            if material.is_muscle and key not in actuation:
                actuation[key] = (MUSCLE_SIGN[material], weight * table.amp_max, weight * table.phase_max)

    keys = sorted(contributions)
    spring_i = np.array([k[0] for k in keys], dtype=np.int64)
    spring_j = np.array([k[1] for k in keys], dtype=np.int64)
    act = np.array([actuation.get(k, (0.0, 0.0, 0.0)) for k in keys], dtype=np.float64).reshape(-1, 3)

    system = MassSpringSystem(
        positions=positions,
        velocities=np.zeros_like(positions),
        masses=np.full(len(vertex_ids), table.mass_per_index),
        spring_i=spring_i,
        spring_j=spring_j,
        stiffness=np.array([np.mean(contributions[k]) for k in keys]),
        rest0=np.linalg.norm(positions[spring_j] - positions[spring_i], axis=1),
        damping_ratio=np.full(len(keys), table.damping_ratio),
        act_sign=act[:, 0],
        act_amplitude=act[:, 1],
        act_phase=act[:, 2],
        plane=table.plane,
    )
    logger.debug(f"Built robot: {len(voxels)} voxels, {system.num_masses} masses, {system.num_springs} springs")
    return system


def export_mesh(grid: VoxelGrid, edge: float = 0.1) -> str:
    """Wavefront OBJ: one 12-triangle cuboid per occupied voxel, grouped by material"""
    lines = ["# voxevo robot mesh", f"# dims {grid.dims[0]} {grid.dims[1]} {grid.dims[2]}"]
    faces = (
        (0, 2, 3), (0, 3, 1), (4, 5, 7), (4, 7, 6),  # x- / x+
        (0, 1, 5), (0, 5, 4), (2, 6, 7), (2, 7, 3),  # y- / y+
        (0, 4, 6), (0, 6, 2), (1, 3, 7), (1, 7, 5),  # z- / z+
    )
    vertex_count = 0
    for material in Material:
        if material is Material.EMPTY:
            continue
        cells = list(zip(*np.nonzero(grid.materials == material)))
        if not cells:
            continue
        lines.append(f"g {material.key}")
        lines.append(f"usemtl material_{int(material)}")
        for cell in cells:
            for corner in _CORNERS:
                x, y, z = ((cell[a] + corner[a]) * edge for a in range(3))
                lines.append(f"v {x:.6f} {y:.6f} {z:.6f}")
            for a, b, c in faces:
                lines.append(f"f {vertex_count + a + 1} {vertex_count + b + 1} {vertex_count + c + 1}")
            vertex_count += 8
    return "\n".join(lines) + "\n"


def export_voxels(grid: VoxelGrid) -> str:
    lines = ["# x y z material weight"]
    for cell in zip(*np.nonzero(grid.materials != Material.EMPTY)):
        material = Material(int(grid.materials[cell]))
        lines.append(f"{cell[0]} {cell[1]} {cell[2]} {material.key} {grid.weights[cell]:.6f}")
    return "\n".join(lines) + "\n"
