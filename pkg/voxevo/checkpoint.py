"""Versioned JSON checkpoints.

File layout (one line of JSON)::

    {"format": "voxevo-checkpoint", "kind": "run" | "genome", "version": 1,
     "sha256": <hex digest of the canonical payload>, "payload": {...}}

The canonical payload is ``json.dumps(payload, sort_keys=True, separators=(",", ":"))``.
Floats are written with ``repr`` precision, so save -> load -> save is byte-identical.

A ``run`` payload holds the full ``RunConfig``, the run index and seed, and the
``EvolutionState`` (population, cached fitnesses, params, history, generator state).
A ``genome`` payload holds one genome record plus its fitness and generation.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple
import hashlib
import json
import logging

import numpy as np

from .config import RunConfig
from .errors import CorruptCheckpoint, IoError, VersionMismatch
from .evolution import EvolutionState
from .genome import Genome, genome_from_dict, genome_to_dict
from .models import GenerationReport, HyperParams

logger = logging.getLogger(__name__)

FORMAT = "voxevo-checkpoint"
FORMAT_VERSION = 1


def _canonical(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def encode(kind: str, payload: Dict[str, Any]) -> str:
    body = _canonical(payload)
    record = {
        "format": FORMAT,
        "kind": kind,
        "version": FORMAT_VERSION,
        "sha256": hashlib.sha256(body.encode("utf-8")).hexdigest(),
        "payload": payload,
    }
    return _canonical(record) + "\n"


def decode(text: str, kind: Optional[str] = None) -> Tuple[str, Dict[str, Any]]:
    try:
        record = json.loads(text)
    except json.JSONDecodeError as e:
        raise CorruptCheckpoint(f"checkpoint is not valid JSON: {e}") from e
    if not isinstance(record, dict) or record.get("format") != FORMAT:
        raise CorruptCheckpoint("not a voxevo checkpoint")
    if record.get("version") != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint version {record.get('version')} is not supported "
                              f"(expected {FORMAT_VERSION})")
    payload = record.get("payload")
    if not isinstance(payload, dict):
        raise CorruptCheckpoint("checkpoint has no payload")
    if hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest() != record.get("sha256"):
        raise CorruptCheckpoint("checkpoint failed its integrity check")
    if kind is not None and record.get("kind") != kind:
        raise CorruptCheckpoint(f"expected a {kind} checkpoint, found {record.get('kind')}")
    return record.get("kind"), payload


def write_text(path: Path, text: str) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_text(path: Path) -> str:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    except UnicodeDecodeError as e:
        raise CorruptCheckpoint(f"{path} is not a text checkpoint") from e


@dataclass
class RunCheckpoint:
    config: RunConfig
    run_index: int
    seed: int
    state: EvolutionState


def state_to_dict(state: EvolutionState) -> Dict[str, Any]:
    return {
        "generation": state.generation,
        "params": state.params.model_dump(mode="json"),
        "population": [genome_to_dict(g) for g in state.population],
        "fitnesses": list(state.fitnesses),
        "history": [r.model_dump(mode="json") for r in state.history],
        "rng_state": state.rng.bit_generator.state,
        "initial_best": genome_to_dict(state.initial_best) if state.initial_best is not None else None,
    }


def state_from_dict(data: Dict[str, Any]) -> EvolutionState:
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = data["rng_state"]
    initial = data.get("initial_best")
    return EvolutionState(
        population=[genome_from_dict(g) for g in data["population"]],
        fitnesses=[None if f is None else float(f) for f in data["fitnesses"]],
        params=HyperParams(**data["params"]),
        rng=rng,
        generation=int(data["generation"]),
        history=[GenerationReport(**r) for r in data["history"]],
        initial_best=genome_from_dict(initial) if initial is not None else None,
    )


def dump_run(checkpoint: RunCheckpoint) -> str:
    return encode("run", {
        "config": checkpoint.config.model_dump(mode="json"),
        "run_index": checkpoint.run_index,
        "seed": checkpoint.seed,
        "state": state_to_dict(checkpoint.state),
    })


def load_run_text(text: str) -> RunCheckpoint:
    _, payload = decode(text, kind="run")
    try:
        return RunCheckpoint(
            config=RunConfig.model_validate(payload["config"]),
            run_index=int(payload["run_index"]),
            seed=int(payload["seed"]),
            state=state_from_dict(payload["state"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptCheckpoint(f"run checkpoint is incomplete: {e}") from e


def save_run(path: Path, checkpoint: RunCheckpoint) -> None:
    write_text(path, dump_run(checkpoint))
    logger.debug(f"Saved run checkpoint at generation {checkpoint.state.generation} to {path}")


def load_run(path: Path) -> RunCheckpoint:
    return load_run_text(read_text(path))


def dump_genome(genome: Genome, fitness: Optional[float] = None, generation: Optional[int] = None) -> str:
    return encode("genome", {"genome": genome_to_dict(genome), "fitness": fitness, "generation": generation})


def save_genome(path: Path, genome: Genome, fitness: Optional[float] = None, generation: Optional[int] = None) -> None:
    write_text(path, dump_genome(genome, fitness, generation))


def load_genome(path: Path) -> Genome:
    """Genome from a genome checkpoint, or the best genome of a run checkpoint"""
    text = read_text(path)
    kind, payload = decode(text)
    try:
        if kind == "genome":
            return genome_from_dict(payload["genome"])
        if kind == "run":
            genome, _ = load_run_text(text).state.best
            return genome
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptCheckpoint(f"genome record is incomplete: {e}") from e
    raise CorruptCheckpoint(f"unknown checkpoint kind {kind!r}")
