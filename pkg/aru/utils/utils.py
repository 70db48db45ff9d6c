import hashlib
import logging
from pathlib import Path
from typing import Union

import numpy as np

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def as_path(p: PathLike) -> Path:
    return p if isinstance(p, Path) else Path(p)


def rng_for(seed: int, purpose: str) -> np.random.Generator:
    """Create the random stream for a named purpose, derived from a single run seed.

    Every source of randomness in aru (parameter initialisation, window shuffling,
    synthetic data, sweep cells) draws from its own stream, so adding a new consumer
    never perturbs the others. The purpose label is hashed with sha256, so streams are
    stable across processes and machines.

    :param seed: the run seed
    :param purpose: a label such as ``"init"``, ``"shuffle"`` or ``"synth/series-3"``
    :return:
    """
    digest = hashlib.sha256(purpose.encode("utf-8")).digest()
    label_entropy = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed, label_entropy]))


def file_sha256(path: PathLike) -> str:
    """Hex digest of a file's bytes, used to check checkpoints are left untouched."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
