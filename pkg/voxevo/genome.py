"""Implicit spatial-query genome.

A genome is a small MLP fed by a Gaussian (random Fourier feature) encoding of a
position in the unit cube. It answers every query with a 5-way material
distribution (softmax head) and a scalar material weight (sigmoid head).

Checkpoint record layout (``genome_to_dict``)::

    {"spec": {"m": int, "d": 3, "sigma": float},
     "B": {"shape": [m, 3], "data": [row-major floats]},
     "layers": [{"W": {"shape": [fan_in, fan_out], "data": [...]},
                 "b": {"shape": [fan_out], "data": [...]}}, ...],
     "head_material": {"W": ..., "b": ...},
     "head_weight": {"W": ..., "b": ...}}

Weights are applied as ``x @ W + b``. The flat parameter vector used by the
genetic operators walks the hidden layers in order (W then b, row-major), then
the material head, then the weight head. ``B`` is never part of it.
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple
import logging

import numpy as np
from pydantic import BaseModel, Field

from .errors import ShapeMismatch

logger = logging.getLogger(__name__)

NUM_MATERIALS = 5
SPATIAL_DIM = 3
DEFAULT_HIDDEN = (64, 64)

_TWO_PI = 2.0 * np.pi
_WEIGHT_EPS = np.finfo(np.float64).eps

Layer = Tuple[np.ndarray, np.ndarray]


class EncodingSpec(BaseModel):
    """Shape of the Gaussian positional encoding"""

    m: int = Field(default=32, ge=1)
    d: int = Field(default=SPATIAL_DIM, ge=SPATIAL_DIM, le=SPATIAL_DIM)
    sigma: float = Field(default=1.0, gt=0)


def _frozen(array: Any) -> np.ndarray:
    out = np.array(array, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Genome:
    spec: EncodingSpec
    B: np.ndarray
    layers: Tuple[Layer, ...]
    head_material: Layer
    head_weight: Layer

    def __post_init__(self):
        object.__setattr__(self, "B", _frozen(self.B))
        object.__setattr__(self, "layers", tuple((_frozen(W), _frozen(b)) for W, b in self.layers))
        object.__setattr__(self, "head_material", tuple(_frozen(a) for a in self.head_material))
        object.__setattr__(self, "head_weight", tuple(_frozen(a) for a in self.head_weight))

        if self.B.shape != (self.spec.m, self.spec.d):
            raise ShapeMismatch(f"B has shape {self.B.shape}, expected {(self.spec.m, self.spec.d)}")

        width = 2 * self.spec.m
        for index, (W, b) in enumerate(self.layers):
            if W.ndim != 2 or W.shape[0] != width or b.shape != (W.shape[1],):
                raise ShapeMismatch(f"layer {index} does not accept input width {width}")
            width = W.shape[1]
        for name, (W, b), outputs in (
            ("head_material", self.head_material, NUM_MATERIALS),
            ("head_weight", self.head_weight, 1),
        ):
            if W.shape != (width, outputs) or b.shape != (outputs,):
                raise ShapeMismatch(f"{name} expects shape {(width, outputs)}, got {W.shape}")

        if not all(np.isfinite(p).all() for p in self._parameters()) or not np.isfinite(self.B).all():
            raise ValueError("genome contains non-finite values")

    def _parameters(self) -> List[np.ndarray]:
        params: List[np.ndarray] = []
        for W, b in (*self.layers, self.head_material, self.head_weight):
            params.extend((W, b))
        return params

    @property
    def architecture(self) -> Tuple[Tuple[int, ...], ...]:
        return tuple(p.shape for p in self._parameters())

    @property
    def num_parameters(self) -> int:
        return sum(p.size for p in self._parameters())

    def flat(self) -> np.ndarray:
        """All MLP parameters as one vector (B excluded)"""
        return np.concatenate([p.ravel() for p in self._parameters()])

    def with_flat(self, vector: np.ndarray) -> "Genome":
        """Rebuild a genome with the same B and architecture from a flat vector"""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.num_parameters,):
            raise ShapeMismatch(f"expected {self.num_parameters} parameters, got {vector.shape}")

        arrays = []
        offset = 0
        for shape in self.architecture:
            size = int(np.prod(shape))
            arrays.append(vector[offset:offset + size].reshape(shape))
            offset += size

        pairs = [(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)]
        return Genome(
            spec=self.spec,
            B=self.B,
            layers=tuple(pairs[:-2]),
            head_material=pairs[-2],
            head_weight=pairs[-1],
        )

    def equals(self, other: "Genome") -> bool:
        return (
            self.spec == other.spec
            and self.architecture == other.architecture
            and np.array_equal(self.B, other.B)
            and np.array_equal(self.flat(), other.flat())
        )


@dataclass(frozen=True, eq=False)
class MaterialQuery:
    probs: np.ndarray
    weight: float


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def sample_genome(spec: EncodingSpec, hidden: Sequence[int] = DEFAULT_HIDDEN, seed: int = 0) -> Genome:
    """Sample a fresh genome.

    B ~ N(0, sigma^2) elementwise. Weights ~ U(-sqrt(6/(fan_in+fan_out)), +...),
    biases start at zero. Deterministic for a fixed seed.
    """
    if any(int(width) < 1 for width in hidden):
        raise ValueError(f"hidden widths must be >= 1, got {list(hidden)}")

    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    B = rng.normal(0.0, spec.sigma, size=(spec.m, spec.d))

    layers = []
    width = 2 * spec.m
    for out in hidden:
        layers.append((_glorot(rng, width, int(out)), np.zeros(int(out))))
        width = int(out)

    head_material = (_glorot(rng, width, NUM_MATERIALS), np.zeros(NUM_MATERIALS))
    head_weight = (_glorot(rng, width, 1), np.zeros(1))
    return Genome(spec=spec, B=B, layers=tuple(layers), head_material=head_material, head_weight=head_weight)


def gaussian_encode(v, B: np.ndarray) -> np.ndarray:
    """[cos(2*pi*B v), sin(2*pi*B v)]; accepts a single position or an (n, 3) batch"""
    projected = _TWO_PI * (np.asarray(v, dtype=np.float64) @ np.asarray(B, dtype=np.float64).T)
    return np.concatenate([np.cos(projected), np.sin(projected)], axis=-1)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def forward_batch(g: Genome, positions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Material probabilities (n, 5) and weights (n,) for an (n, 3) array of positions"""
    h = gaussian_encode(np.atleast_2d(positions), g.B)
    for W, b in g.layers:
        h = np.tanh(h @ W + b)

    probs = softmax(h @ g.head_material[0] + g.head_material[1])
    weights = sigmoid(h @ g.head_weight[0] + g.head_weight[1])[:, 0]
    weights = np.clip(weights, _WEIGHT_EPS, 1.0 - _WEIGHT_EPS)
    return probs, weights


def forward(g: Genome, v) -> MaterialQuery:
    probs, weights = forward_batch(g, np.asarray(v, dtype=np.float64).reshape(1, SPATIAL_DIM))
    return MaterialQuery(probs=probs[0], weight=float(weights[0]))


def _array_record(array: np.ndarray) -> Dict[str, Any]:
    return {"shape": list(array.shape), "data": array.ravel().tolist()}


def _array_from_record(record: Dict[str, Any]) -> np.ndarray:
    return np.array(record["data"], dtype=np.float64).reshape(record["shape"])


def genome_to_dict(g: Genome) -> Dict[str, Any]:
    return {
        "spec": g.spec.model_dump(),
        "B": _array_record(g.B),
        "layers": [{"W": _array_record(W), "b": _array_record(b)} for W, b in g.layers],
        "head_material": {"W": _array_record(g.head_material[0]), "b": _array_record(g.head_material[1])},
        "head_weight": {"W": _array_record(g.head_weight[0]), "b": _array_record(g.head_weight[1])},
    }


def genome_from_dict(record: Dict[str, Any]) -> Genome:
    def pair(entry):
        return (_array_from_record(entry["W"]), _array_from_record(entry["b"]))

    return Genome(
        spec=EncodingSpec(**record["spec"]),
        B=_array_from_record(record["B"]),
        layers=tuple(pair(layer) for layer in record["layers"]),
        head_material=pair(record["head_material"]),
        head_weight=pair(record["head_weight"]),
    )
