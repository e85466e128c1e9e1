"""Generational GA over genome weight vectors."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple
import itertools
import logging
import math
import time

import numpy as np

from .advisor import Advisor, AdvisorRequest
from .errors import ShapeMismatch
from .genome import DEFAULT_HIDDEN, EncodingSpec, Genome, sample_genome
from .models import GenerationReport, HyperParams
from .morphology import (
    DEFAULT_DIMS,
    MaterialTable,
    VoxelGrid,
    apply_multipliers,
    build_mass_spring,
    decode,
    largest_component,
)
from .physics import SimConfig, TrajectorySummary, simulate

logger = logging.getLogger(__name__)

TOURNAMENT_SIZE = 3
ADVISOR_WINDOW = 3


@dataclass
class Evaluation:
    fitness: float
    grid: VoxelGrid
    summary: Optional[TrajectorySummary] = None


def body_of(g: Genome, dims: Tuple[int, int, int] = DEFAULT_DIMS) -> VoxelGrid:
    return largest_component(decode(g, dims))


def evaluate_detailed(g: Genome, table: MaterialTable, sim_config: SimConfig,
                      dims: Tuple[int, int, int] = DEFAULT_DIMS, record_stride: int = 0) -> Evaluation:
    grid = body_of(g, dims)
    if grid.occupied == 0 or grid.muscles == 0:
        return Evaluation(fitness=0.0, grid=grid)

    summary = simulate(build_mass_spring(grid, table), sim_config, record_stride=record_stride)
    if summary.diverged:
        return Evaluation(fitness=0.0, grid=grid, summary=summary)
    return Evaluation(fitness=summary.horizontal_displacement, grid=grid, summary=summary)


def evaluate(g: Genome, table: MaterialTable, sim_config: SimConfig,
             dims: Tuple[int, int, int] = DEFAULT_DIMS) -> float:
    """Horizontal COM displacement; 0 for empty, muscle-less or diverged robots"""
    return evaluate_detailed(g, table, sim_config, dims).fitness


def mutate(g: Genome, rate: float, scale: float, rng: np.random.Generator) -> Genome:
    params = g.flat()
    hit = rng.random(params.size) < rate
    noise = rng.normal(0.0, scale, params.size)
    return g.with_flat(np.where(hit, params + noise, params))


def crossover(a: Genome, b: Genome, rng: np.random.Generator) -> Genome:
    """Uniform crossover; the child keeps a's encoding matrix"""
    if a.spec != b.spec or a.architecture != b.architecture:
        raise ShapeMismatch(f"cannot cross {a.architecture} with {b.architecture}")
    from_a = rng.random(a.num_parameters) < 0.5
    return a.with_flat(np.where(from_a, a.flat(), b.flat()))


def diversity(grids: Sequence[VoxelGrid]) -> float:
    """Mean pairwise fraction of voxels whose material differs"""
    if not grids:
        raise ValueError("diversity needs at least one grid")
    if len(grids) == 1:
        return 0.0
    if len({g.dims for g in grids}) != 1:
        raise ShapeMismatch("grids have different dims")

    materials = np.stack([g.materials.ravel() for g in grids])
    distances = [np.mean(materials[i] != materials[j]) for i, j in itertools.combinations(range(len(grids)), 2)]
    return float(np.clip(np.mean(distances), 0.0, 1.0))


def elite_count(elite_fraction: float, population: int) -> int:
    # rounding first keeps 0.1 * 30 from becoming 4
    return min(population, max(1, math.ceil(round(elite_fraction * population, 9))))


@dataclass
class EvolutionState:
    population: List[Genome]
    fitnesses: List[Optional[float]]
    params: HyperParams
    rng: np.random.Generator
    generation: int = 0
    history: List[GenerationReport] = field(default_factory=list)
    initial_best: Optional[Genome] = None

    def __post_init__(self):
        if len(self.population) != len(self.fitnesses):
            raise ValueError("population and fitnesses are not aligned")

    @property
    def best(self) -> Tuple[Genome, float]:
        """Best evaluated genome; elites lead the population after every generation"""
        scored = [(f, -i) for i, f in enumerate(self.fitnesses) if f is not None]
        if not scored:
            raise ValueError("no evaluated genome yet")
        _, neg_index = max(scored)
        return self.population[-neg_index], float(self.fitnesses[-neg_index])


def initial_state(seed: int, population: int, spec: EncodingSpec, hidden: Sequence[int] = DEFAULT_HIDDEN,
                  params: Optional[HyperParams] = None) -> EvolutionState:
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2 ** 63, size=population)
    return EvolutionState(
        population=[sample_genome(spec, hidden, int(s)) for s in seeds],
        fitnesses=[None] * population,
        params=params.model_copy() if params is not None else HyperParams(),
        rng=rng,
    )


class Evaluator:
    """Decode, build and simulate a population on a fixed number of worker threads"""

    def __init__(self, table: MaterialTable, sim_config: SimConfig, dims: Tuple[int, int, int] = DEFAULT_DIMS,
                 threads: int = 1, allow_material_multipliers: bool = False):
        self.table = table
        self.sim_config = sim_config
        self.dims = tuple(dims)
        self.threads = max(1, int(threads))
        self.allow_material_multipliers = allow_material_multipliers

    def table_for(self, params: HyperParams) -> MaterialTable:
        if self.allow_material_multipliers:
            return apply_multipliers(self.table, params.material_multipliers)
        return self.table

    def fitnesses(self, population: Sequence[Genome], cached: Sequence[Optional[float]],
                  params: HyperParams) -> Tuple[List[float], int]:
        """Fill in missing fitnesses; results land in their own slot whatever the thread count"""
        table = self.table_for(params)
        pending = [i for i, f in enumerate(cached) if f is None]

        def run(index: int) -> float:
            return evaluate(population[index], table, self.sim_config, self.dims)

        if self.threads == 1 or len(pending) <= 1:
            results = [run(i) for i in pending]
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as executor:
                results = list(executor.map(run, pending))

        out = list(cached)
        for index, fitness in zip(pending, results):
            out[index] = fitness
        return out, len(pending)

    def grids(self, population: Sequence[Genome]) -> List[VoxelGrid]:
        return [body_of(g, self.dims) for g in population]


def _tournament(ranked_count: int, rng: np.random.Generator) -> int:
    """Rank of the winner; lower rank means fitter"""
    entrants = rng.choice(ranked_count, size=min(TOURNAMENT_SIZE, ranked_count), replace=False)
    return int(entrants.min())


def _consult(state: EvolutionState, advisor: Optional[Advisor], allow_multipliers: bool) -> HyperParams:
    window = state.history[-ADVISOR_WINDOW:]
    if advisor is None or len(window) < ADVISOR_WINDOW:
        return state.params

    request = AdvisorRequest(window=window, current_params=state.params, generation=state.generation)
    reply = advisor.advise(request)
    params = HyperParams.model_validate(reply.params.model_dump())
    if not allow_multipliers:
        params.material_multipliers = None
    logger.info(f"Advisor ({reply.source.value}) for generation {state.generation}: "
                f"{params.model_dump(exclude_none=True)}")
    if reply.rationale:
        logger.debug(f"Advisor rationale: {reply.rationale}")
    return params


def evolve_generation(state: EvolutionState, advisor: Optional[Advisor], evaluator: Evaluator) -> EvolutionState:
    """Evaluate the current population, record its report and breed the next one"""
    started = time.perf_counter()
    state.params = _consult(state, advisor, evaluator.allow_material_multipliers)
    params = state.params
    n = len(state.population)

    fitnesses, evaluations = evaluator.fitnesses(state.population, state.fitnesses, params)
    grids = evaluator.grids(state.population)
    order = sorted(range(n), key=lambda i: (-fitnesses[i], i))
    ranked = [state.population[i] for i in order]
    ranked_fitness = [fitnesses[i] for i in order]
    if state.generation == 0 and state.initial_best is None:
        state.initial_best = ranked[0]

    n_elite = elite_count(params.elite_fraction, n)
    children: List[Genome] = []
    for _ in range(n - n_elite):
        p1 = ranked[_tournament(n, state.rng)]
        if state.rng.random() < params.crossover_rate:
            p2 = ranked[_tournament(n, state.rng)]
            child = crossover(p1, p2, state.rng)
        else:
            child = p1
        children.append(mutate(child, params.mutation_rate, params.mutation_scale, state.rng))

    values = np.array(fitnesses, dtype=np.float64)
    report = GenerationReport(
        generation=state.generation,
        params=params.model_copy(),
        best_fitness=float(values.max()),
        mean_fitness=float(values.mean()),
        std_fitness=float(values.std()),
        diversity=diversity(grids),
        evaluations=evaluations,
        wall_time=time.perf_counter() - started,
    )
    state.history.append(report)
    logger.info(
        f"Generation {report.generation}: best={report.best_fitness:.5f} mean={report.mean_fitness:.5f} "
        f"std={report.std_fitness:.5f} diversity={report.diversity:.3f} evaluations={evaluations} "
        f"({report.wall_time:.2f}s)"
    )

    state.population = ranked[:n_elite] + children
    state.fitnesses = ranked_fitness[:n_elite] + [None] * len(children)
    state.generation += 1
    return state


def run_evolution(state: EvolutionState, advisor: Optional[Advisor], evaluator: Evaluator, generations: int,
                  on_generation: Optional[Callable[[EvolutionState], None]] = None) -> EvolutionState:
    """Evolve until generation ``generations`` has been evaluated (generation 0 included)"""
    while state.generation <= generations:
        evolve_generation(state, advisor, evaluator)
        if on_generation is not None:
            on_generation(state)
    return state
