"""voxevo command line: run, resume, bench, export-mesh, compare, sweep."""

from pathlib import Path
from typing import Any, Callable, Dict, Optional
import functools
import logging

import typer

from . import checkpoint as ckpt
from . import runner
from .advisor import AdvisorMode
from .bench import bench as run_bench
from .config import load_config
from .errors import IoError, VoxevoError
from .evolution import body_of
from .morphology import MaterialTable, export_mesh, export_voxels

logger = logging.getLogger(__name__)

app = typer.Typer(help="Co-design voxel soft robots with an evolved implicit genome.", no_args_is_help=True)


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Log at DEBUG level")):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def _handled(command: Callable) -> Callable:
    """Turn library errors into a logged message and a nonzero exit code"""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except VoxevoError as e:
            logger.error(f"{type(e).__name__}: {e}")
            raise typer.Exit(code=e.exit_code)
        except OSError as e:
            logger.error(f"IoError: {e}")
            raise typer.Exit(code=IoError.exit_code)

    return wrapper


def _overrides(seed, generations, population, advisor, threads, out) -> Dict[str, Any]:
    return {
        "seed": seed,
        "generations": generations,
        "population": population,
        "advisor.mode": advisor.value if advisor is not None else None,
        "threads": threads,
        "out_dir": str(out) if out is not None else None,
    }


ConfigOption = typer.Option(None, "--config", help="JSON run configuration")
SeedOption = typer.Option(None, "--seed")
GenerationsOption = typer.Option(None, "--generations")
PopulationOption = typer.Option(None, "--population")
AdvisorOption = typer.Option(None, "--advisor", case_sensitive=False)
ThreadsOption = typer.Option(None, "--threads")
OutOption = typer.Option(None, "--out", help="Output directory")


@app.command()
@_handled
def run(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    generations: Optional[int] = GenerationsOption,
    population: Optional[int] = PopulationOption,
    advisor: Optional[AdvisorMode] = AdvisorOption,
    threads: Optional[int] = ThreadsOption,
    out: Optional[Path] = OutOption,
):
    """Evolve robots for every repetition and write curves, checkpoints and meshes"""
    run_config = load_config(config, _overrides(seed, generations, population, advisor, threads, out))
    for result in runner.run(run_config):
        typer.echo(f"seed {result.seed}: best fitness {result.final_best:.6f} m ({result.run_dir})")


@app.command()
@_handled
def resume(checkpoint: Path = typer.Argument(..., help="state.ckpt written by a run")):
    """Continue an interrupted run from its state checkpoint"""
    result = runner.resume(checkpoint)
    typer.echo(f"seed {result.seed}: best fitness {result.final_best:.6f} m ({result.run_dir})")


@app.command()
@_handled
def bench(
    robots: int = typer.Option(30, help="Synthetic robots (fully occupied 5x5x5 blocks)"),
    steps: int = typer.Option(1000, help="Time steps per robot per trial"),
    max_threads: Optional[int] = typer.Option(None, "--threads", help="Largest thread count tested"),
    trials: int = typer.Option(5),
    out: Path = typer.Option(Path("bench.csv"), "--out"),
):
    """Measure spring updates per second at 1, 2, 4, ... threads"""
    frame = run_bench(robots=robots, steps=steps, max_threads=max_threads, trials=trials)
    ckpt.write_text(out, frame.to_csv(index=False, lineterminator="\n"))
    typer.echo(frame.to_string(index=False))
    typer.echo(f"wrote {out}")


@app.command("export-mesh")
@_handled
def export_mesh_command(
    checkpoint: Path = typer.Argument(..., help="Genome or run checkpoint"),
    out: Optional[Path] = typer.Option(None, "--out", help="Output stem (default: next to the checkpoint)"),
    dims: str = typer.Option("5,5,5", help="Grid dims W,H,D"),
):
    """Write the .mesh and .voxels files of a checkpointed genome"""
    try:
        grid_dims = tuple(int(n) for n in dims.split(","))
    except ValueError:
        grid_dims = ()
    if len(grid_dims) != 3 or min(grid_dims) < 1:
        raise typer.BadParameter("dims must be three positive integers", param_hint="--dims")

    genome = ckpt.load_genome(checkpoint)
    grid = body_of(genome, grid_dims)
    stem = out if out is not None else checkpoint.with_suffix("")
    ckpt.write_text(stem.with_suffix(".mesh"), export_mesh(grid, MaterialTable().voxel_edge))
    ckpt.write_text(stem.with_suffix(".voxels"), export_voxels(grid))
    typer.echo(f"wrote {stem.with_suffix('.mesh')} and {stem.with_suffix('.voxels')} ({grid.occupied} voxels)")


@app.command()
@_handled
def compare(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    generations: Optional[int] = GenerationsOption,
    population: Optional[int] = PopulationOption,
    advisor: Optional[AdvisorMode] = AdvisorOption,
    threads: Optional[int] = ThreadsOption,
    out: Optional[Path] = OutOption,
):
    """Run the same seeds with and without advisor supervision"""
    run_config = load_config(config, _overrides(seed, generations, population, advisor, threads, out))
    frame = runner.compare(run_config)
    typer.echo(frame.to_string(index=False))


@app.command()
@_handled
def sweep(
    sigma: str = typer.Option("0.5,1,2,4", "--sigma", help="Comma-separated encoding scales"),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    generations: Optional[int] = GenerationsOption,
    population: Optional[int] = PopulationOption,
    advisor: Optional[AdvisorMode] = AdvisorOption,
    threads: Optional[int] = ThreadsOption,
    out: Optional[Path] = OutOption,
):
    """Run the same seeds at several encoding scales sigma"""
    try:
        sigmas = [float(s) for s in sigma.split(",")]
    except ValueError:
        raise typer.BadParameter("sigma must be comma-separated numbers", param_hint="--sigma")
    run_config = load_config(config, _overrides(seed, generations, population, advisor, threads, out))
    frame = runner.sweep_sigma(run_config, sigmas)
    typer.echo(frame.to_string(index=False))


if __name__ == "__main__":
    app()
