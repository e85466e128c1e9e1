"""Run orchestration: seeded repetitions, checkpoint/resume, artifact export and comparisons."""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence
import io
import logging

import numpy as np
import pandas as pd
import requests

from . import checkpoint as ckpt
from .advisor import AdvisorMode, make_advisor
from .config import RunConfig
from .evolution import EvolutionState, Evaluator, body_of, evaluate_detailed, initial_state, run_evolution
from .errors import ConfigError
from .genome import EncodingSpec, Genome
from .models import CURVES_COLUMNS, GenerationReport
from .morphology import export_mesh, export_voxels

logger = logging.getLogger(__name__)

CURVES_HEADER = "# voxevo-curves v1"
STATE_FILE = "state.ckpt"


@dataclass
class RunResult:
    run_dir: Path
    seed: int
    initial_best: float
    final_best: float
    history: List[GenerationReport]


def run_dir_for(config: RunConfig, index: int, seed: int) -> Path:
    return Path(config.out_dir) / f"run_{index:02d}_seed_{seed}"


def curves_csv(history: List[GenerationReport], reproducible: bool) -> str:
    rows = [r.to_row(wall_time=0.0 if reproducible else None) for r in history]
    frame = pd.DataFrame(rows, columns=CURVES_COLUMNS)
    buffer = io.StringIO()
    buffer.write(CURVES_HEADER + "\n")
    frame.to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue()


def _timings_csv(history: List[GenerationReport]) -> str:
    frame = pd.DataFrame({"generation": [r.generation for r in history],
                          "wall_time": [r.wall_time for r in history]})
    return frame.to_csv(index=False, lineterminator="\n")


def _trajectory_csv(samples: np.ndarray) -> str:
    frame = pd.DataFrame(samples, columns=["t", "x", "y", "z"])
    return frame.to_csv(index=False, lineterminator="\n")


def write_robot(run_dir: Path, stem: str, genome: Genome, config: RunConfig) -> None:
    grid = body_of(genome, config.dims)
    ckpt.write_text(run_dir / f"{stem}.mesh", export_mesh(grid, config.materials.voxel_edge))
    ckpt.write_text(run_dir / f"{stem}.voxels", export_voxels(grid))


def write_artifacts(run_dir: Path, config: RunConfig, state: EvolutionState) -> None:
    ckpt.write_text(run_dir / "curves.csv", curves_csv(state.history, config.reproducible_curves))
    if config.reproducible_curves:
        ckpt.write_text(run_dir / "timings.csv", _timings_csv(state.history))

    best, fitness = state.best
    ckpt.save_genome(run_dir / "best_genome.ckpt", best, fitness, state.history[-1].generation)
    write_robot(run_dir, "best_robot", best, config)
    if state.initial_best is not None:
        write_robot(run_dir, "initial_robot", state.initial_best, config)

    if config.trajectory_stride > 0:
        result = evaluate_detailed(best, config.materials, config.sim, config.dims,
                                   record_stride=config.trajectory_stride)
        if result.summary is not None and result.summary.trajectory is not None:
            ckpt.write_text(run_dir / "trajectory.csv", _trajectory_csv(result.summary.trajectory))


def _continue(config: RunConfig, index: int, seed: int, state: EvolutionState, run_dir: Path,
              session: Optional[requests.Session] = None) -> RunResult:
    run_dir.mkdir(parents=True, exist_ok=True)
    advisor = make_advisor(config.advisor, run_dir, session=session)
    evaluator = Evaluator(config.materials, config.sim, config.dims, config.threads,
                          config.advisor.allow_material_multipliers)

    def on_generation(current: EvolutionState) -> None:
        if current.generation % config.checkpoint_every == 0 or current.generation > config.generations:
            ckpt.save_run(run_dir / STATE_FILE, ckpt.RunCheckpoint(config, index, seed, current))

    run_evolution(state, advisor, evaluator, config.generations, on_generation)
    write_artifacts(run_dir, config, state)

    _, final_best = state.best
    result = RunResult(run_dir=run_dir, seed=seed, initial_best=state.history[0].best_fitness,
                       final_best=final_best, history=list(state.history))
    logger.info(f"Run {index} (seed {seed}) finished: best fitness {final_best:.5f} m -> {run_dir}")
    return result


def execute_run(config: RunConfig, index: int, seed: int, session: Optional[requests.Session] = None) -> RunResult:
    state = initial_state(seed, config.population, config.encoding, config.hidden, config.hyperparams)
    return _continue(config, index, seed, state, run_dir_for(config, index, seed), session)


def run(config: RunConfig, session: Optional[requests.Session] = None) -> List[RunResult]:
    """Independent repetitions with seeds seed, seed+1, ...; run one after the other"""
    results = []
    for index in range(config.repetitions):
        results.append(execute_run(config, index, config.seed + index, session))
    return results


def resume(path: Path, session: Optional[requests.Session] = None) -> RunResult:
    """Continue a checkpointed run; artifacts are rewritten next to the checkpoint"""
    saved = ckpt.load_run(path)
    logger.info(f"Resuming run {saved.run_index} (seed {saved.seed}) at generation {saved.state.generation}"
                f" of {saved.config.generations}")
    return _continue(saved.config, saved.run_index, saved.seed, saved.state, Path(path).parent, session)


def _summary(result: RunResult) -> dict:
    return {
        "seed": result.seed,
        "initial_best": result.initial_best,
        "final_best": result.final_best,
        "mean_diversity": float(np.mean([r.diversity for r in result.history])),
    }


def compare(config: RunConfig, session: Optional[requests.Session] = None) -> pd.DataFrame:
    """Same seeds with the advisor off and on; writes comparison.csv under out_dir"""
    supervised = config.advisor.mode if config.advisor.mode != AdvisorMode.OFF else AdvisorMode.SCRIPTED
    rows = []
    for mode in (AdvisorMode.OFF, supervised):
        arm = config.model_copy(deep=True)
        arm.advisor.mode = mode
        arm.out_dir = str(Path(config.out_dir) / f"advisor_{mode.value}")
        for result in run(arm, session):
            rows.append({"advisor": mode.value, **_summary(result)})

    frame = pd.DataFrame(rows)
    ckpt.write_text(Path(config.out_dir) / "comparison.csv", frame.to_csv(index=False, lineterminator="\n"))
    return frame


def sweep_sigma(config: RunConfig, sigmas: Sequence[float],
                session: Optional[requests.Session] = None) -> pd.DataFrame:
    """Same seeds at each encoding scale; writes sigma_sweep.csv under out_dir"""
    if not sigmas:
        raise ConfigError("encoding.sigma", "at least one value is required")
    bad = [s for s in sigmas if not s > 0]
    if bad:
        raise ConfigError("encoding.sigma", f"must be > 0, got {bad[0]}")
    rows = []
    for sigma in sigmas:
        arm = config.model_copy(deep=True)
        arm.encoding = EncodingSpec(m=config.encoding.m, d=config.encoding.d, sigma=sigma)
        arm.out_dir = str(Path(config.out_dir) / f"sigma_{sigma:g}")
        logger.info(f"Sigma sweep: sigma={sigma:g} -> {arm.out_dir}")
        for result in run(arm, session):
            rows.append({"sigma": sigma, **_summary(result)})

    frame = pd.DataFrame(rows)
    ckpt.write_text(Path(config.out_dir) / "sigma_sweep.csv", frame.to_csv(index=False, lineterminator="\n"))
    best = frame.groupby("sigma")["final_best"].mean()
    logger.info(f"Sigma sweep done: best mean final fitness at sigma={best.idxmax():g} ({best.max():.5f} m)")
    return frame
