"""Binary model checkpoints.

Layout, all integers little-endian:

* 8 bytes magic ``ARUCKPT\\0``
* uint32 format version
* uint32 length of the json header in bytes
* the utf-8 json header: model config (feature schema and ARU config included),
  tensor names and shapes in declared order, optimizer step and hyperparameters,
  epoch, best validation NLL and free form metadata
* every parameter tensor as float64 little-endian, in declared order, followed by the
  Adam first and second moments in the same order when the optimizer state is saved
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Any, BinaryIO, Optional

import numpy as np

from aru.model.config import ModelConfig
from aru.model.forecaster import ForecastModel
from aru.model.params import ModelParams, param_shapes
from aru.training.optim import AdamState
from aru.utils.utils import PathLike, as_path

logger = logging.getLogger(__name__)

MAGIC = b"ARUCKPT\0"
FORMAT_VERSION = 1
_LENGTHS = struct.Struct("<II")
_DTYPE = np.dtype("<f8")


class CheckpointFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Checkpoint:
    model: ForecastModel
    adam: Optional[AdamState] = None
    #: number of completed epochs
    epoch: int = 0
    best_validation_nll: Optional[float] = None
    metadata: dict[str, Any] = field(default_factory=dict)


def _write_tensors(f: BinaryIO, params: ModelParams) -> None:
    for _, tensor in params.items():
        f.write(np.ascontiguousarray(tensor, dtype=_DTYPE).tobytes(order="C"))


def _read_tensors(f: BinaryIO, shapes: dict[str, tuple[int, ...]]) -> ModelParams:
    tensors = {}
    for name, shape in shapes.items():
        count = int(np.prod(shape, dtype=np.int64))
        raw = f.read(count * _DTYPE.itemsize)
        if len(raw) != count * _DTYPE.itemsize:
            raise CheckpointFormatError(f"checkpoint is truncated in tensor {name}")
        tensors[name] = np.frombuffer(raw, dtype=_DTYPE).reshape(shape).astype(np.float64)
    return ModelParams(tensors)


def save_checkpoint(path: PathLike, checkpoint: Checkpoint) -> None:
    path = as_path(path)
    params = checkpoint.model.params
    adam = checkpoint.adam
    header = {
        "model_config": checkpoint.model.config.to_dict(),
        "tensors": [{"name": name, "shape": list(t.shape)} for name, t in params.items()],
        "optimizer": None
        if adam is None
        else {"step": adam.step, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps},
        "epoch": checkpoint.epoch,
        "best_validation_nll": checkpoint.best_validation_nll,
        "metadata": checkpoint.metadata,
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(_LENGTHS.pack(FORMAT_VERSION, len(encoded)))
        f.write(encoded)
        _write_tensors(f, params)
        if adam is not None:
            _write_tensors(f, adam.first_moment)
            _write_tensors(f, adam.second_moment)
    os.replace(tmp, path)
    logger.info("saved checkpoint to %s", path)


def load_checkpoint(path: PathLike, expected_config: Optional[ModelConfig] = None) -> Checkpoint:
    """
    :param path:
    :param expected_config: if given, the stored config must equal it
    :return:
    :raises CheckpointFormatError: on a bad magic or version, a truncated file, tensors
        that do not fit the stored config, or a config other than the expected one
    """
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointFormatError(f"{path} is not an aru checkpoint")
        lengths = f.read(_LENGTHS.size)
        if len(lengths) != _LENGTHS.size:
            raise CheckpointFormatError(f"{path} is truncated")
        version, header_length = _LENGTHS.unpack(lengths)
        if version != FORMAT_VERSION:
            raise CheckpointFormatError(
                f"{path} has format version {version}, this aru reads version {FORMAT_VERSION}"
            )
        header = json.loads(f.read(header_length).decode("utf-8"))
        config = ModelConfig.from_dict(header["model_config"])
        if expected_config is not None and config != expected_config:
            raise CheckpointFormatError(
                f"{path} was trained with {config}, which does not match {expected_config}"
            )
        stored = {t["name"]: tuple(t["shape"]) for t in header["tensors"]}
        expected = param_shapes(config)
        if stored != expected or list(stored) != list(expected):
            raise CheckpointFormatError(
                f"tensors {stored} in {path} do not fit the stored model config {expected}"
            )
        params = _read_tensors(f, stored)
        adam = None
        if header["optimizer"] is not None:
            first = _read_tensors(f, stored)
            second = _read_tensors(f, stored)
            adam = AdamState(first_moment=first, second_moment=second, **header["optimizer"])
        if f.read(1):
            raise CheckpointFormatError(f"{path} has trailing bytes")
    return Checkpoint(
        model=ForecastModel(config, params),
        adam=adam,
        epoch=header["epoch"],
        best_validation_nll=header["best_validation_nll"],
        metadata=header["metadata"],
    )
