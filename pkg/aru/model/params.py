import logging
from collections.abc import Iterator

import numpy as np

from aru.data.data import Head
from aru.model.config import ModelConfig
from aru.utils.utils import rng_for

logger = logging.getLogger(__name__)

EMBEDDING_INIT_RANGE = 0.05


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every trainable tensor of a model, in declared order.

    The order is the one used by checkpoints and gradient reports.
    """
    schema = config.schema
    dv = schema.input_width
    r = config.rnn_units
    h0, h1, h2 = config.hidden_sizes
    shapes: dict[str, tuple[int, ...]] = {}
    for feature in schema.categorical:
        shapes[f"embedding.{feature.name}"] = (feature.cardinality, feature.embedding_dim)
    shapes["encoder.weight"] = (r, r + 1 + dv)
    shapes["encoder.bias"] = (r,)
    # v is concatenated into the inputs of both the first and the second layer
    shapes["decoder.0.weight"] = (h0, r + dv)
    shapes["decoder.0.bias"] = (h0,)
    shapes["decoder.1.weight"] = (h1, h0 + dv)
    shapes["decoder.1.bias"] = (h1,)
    shapes["decoder.2.weight"] = (h2, h1)
    shapes["decoder.2.bias"] = (h2,)
    if config.head is Head.ARU:
        f0, f1 = config.ff2_sizes
        for path in ("mu", "sigma"):
            shapes[f"ff2.{path}.0.weight"] = (f0, h2 + config.n_banks)
            shapes[f"ff2.{path}.0.bias"] = (f0,)
            shapes[f"ff2.{path}.1.weight"] = (f1, f0)
            shapes[f"ff2.{path}.1.bias"] = (f1,)
        head_in = f1
    else:
        head_in = h2
    if config.head is not Head.ARU_DIRECT:
        for path in ("mu", "sigma"):
            shapes[f"head.{path}.weight"] = (1, head_in)
            shapes[f"head.{path}.bias"] = (1,)
    return shapes


class ModelParams:
    """Named float64 tensors, kept in declared order."""

    def __init__(self, tensors: dict[str, np.ndarray]):
        self.tensors = {name: np.asarray(t, dtype=np.float64) for name, t in tensors.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name in self.tensors and self.tensors[name].shape != value.shape:
            raise ValueError(
                f"cannot replace {name} of shape {self.tensors[name].shape} "
                f"with shape {value.shape}"
            )
        self.tensors[name] = value

    def __contains__(self, name: object) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        yield from self.tensors.items()

    def copy(self) -> "ModelParams":
        return ModelParams({name: t.copy() for name, t in self.tensors.items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams({name: np.zeros_like(t) for name, t in self.tensors.items()})

    @property
    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(t * t)) for t in self.tensors.values())))

    def non_finite_blocks(self) -> list[str]:
        return [name for name, t in self.tensors.items() if not np.all(np.isfinite(t))]

    def equals(self, other: "ModelParams") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(t, other[name]) for name, t in self.tensors.items()
        )

    def check_shapes(self, config: ModelConfig) -> None:
        expected = param_shapes(config)
        actual = {name: t.shape for name, t in self.tensors.items()}
        if list(expected) != list(actual) or any(expected[n] != actual[n] for n in expected):
            raise ValueError(f"parameter shapes {actual} do not match the config {expected}")


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Uniform initialisation in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``, with biases
    using the fan in of their layer, and embeddings in ``[-0.05, 0.05]``."""
    rng = rng_for(seed, "init")
    shapes = param_shapes(config)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        if name.startswith("embedding."):
            bound = EMBEDDING_INIT_RANGE
        else:
            weight_shape = shapes[name.rsplit(".", 1)[0] + ".weight"]
            bound = 1.0 / np.sqrt(weight_shape[1])
        tensors[name] = rng.uniform(-bound, bound, size=shape)
    params = ModelParams(tensors)
    logger.info("initialised %s parameters in %s tensors", params.n_parameters, len(params))
    return params
