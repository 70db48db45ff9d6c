"""The core datamodel shared by the model, training and evaluation code.

Arrays are float64 numpy arrays throughout. Types that describe a single forecast
window also come in a stacked ``Batch`` form whose arrays carry a leading batch
axis, which is what the forward and reverse passes actually operate on.
"""

from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum, auto
from typing import Optional

import numpy as np


class AutoNameEnum(Enum):
    """Subclass to create an Enum where values are the names when using
    :class:`enum.auto`\\ .

    Taken from the `Python Enum Docs <https://docs.python.org/3/howto/enum.html#using-automatic-values>`_.

    This is `licensed under Zero-Clause BSD. <https://docs.python.org/3/license.html#zero-clause-bsd-license-for-code-in-the-python-release-documentation>`_
    """

    def _generate_next_value_(name, start, count, last_values):  # type: ignore[override]
        return name

    @classmethod
    def from_config(cls, value: str):  # type: ignore[no-untyped-def]
        """Look a member up by name, case-insensitively, as written in the yaml
        config."""
        try:
            return cls[value.upper()]
        except KeyError:
            raise ValueError(
                f"{value!r} is not a valid {cls.__name__}. "
                f"Choose from {[m.name.lower() for m in cls]}"
            ) from None


class Head(AutoNameEnum):
    BASELINE = auto()  # global gaussian head only
    ARU = auto()  # local prediction fused with the decoder output through FF2
    ARU_DIRECT = auto()  # local prediction emitted directly


class Mode(AutoNameEnum):
    TRAIN = auto()  # decoder targets known, ARU updated after every step
    INFER = auto()  # predict only


class Protocol(AutoNameEnum):
    FIXED = auto()
    STREAMING = auto()


class Granularity(AutoNameEnum):
    HOURLY = auto()
    DAILY = auto()
    WEEKLY = auto()
    MONTHLY = auto()


class ScalingMode(AutoNameEnum):
    SERIES = auto()  # one target scale per series, from its training range
    WINDOW = auto()  # one target scale per window, from its encoder span


@dataclass(frozen=True)
class Forecast:
    """Gaussian forecasts over a horizon of ``K`` steps, in scaled target units.

    ``mu`` and ``sigma`` have shape ``(..., K)``; the optional local components have
    shape ``(..., K, J)``.
    """

    mu: np.ndarray
    sigma: np.ndarray
    m: Optional[np.ndarray] = None
    a: Optional[np.ndarray] = None

    @property
    def horizon(self) -> int:
        return int(self.mu.shape[-1])


@dataclass(frozen=True)
class WindowSample:
    """One encoder/decoder window cut from a prepared series.

    Steps ``[0, encoder_length)`` are the encoder span, the following ``horizon``
    steps the decoder span. ``y`` is scaled by ``scale``; decoder targets are ``nan``
    when unknown.
    """

    series_id: str
    #: index of the first encoder step within the series
    start: int
    y: np.ndarray
    #: shape (encoder_length + horizon, n_categorical), integer codes
    categorical: np.ndarray
    #: shape (encoder_length + horizon, n_continuous), scaled to [0, 1] on the training range
    continuous: np.ndarray
    encoder_length: int
    horizon: int
    scale: float = 1.0

    @property
    def has_targets(self) -> bool:
        return bool(np.all(np.isfinite(self.y[self.encoder_length :])))

    @property
    def decoder_targets(self) -> np.ndarray:
        return self.y[self.encoder_length :]


@dataclass(frozen=True)
class WindowBatch:
    """A stack of windows sharing encoder length and horizon."""

    series_ids: tuple[str, ...]
    starts: np.ndarray
    #: shape (B, E + K)
    y: np.ndarray
    #: shape (B, E + K, n_categorical)
    categorical: np.ndarray
    #: shape (B, E + K, n_continuous)
    continuous: np.ndarray
    encoder_length: int
    horizon: int
    #: shape (B,)
    scales: np.ndarray = field(default_factory=lambda: np.ones(0))

    @staticmethod
    def from_windows(windows: Sequence[WindowSample]) -> "WindowBatch":
        if len(windows) == 0:
            raise ValueError("cannot build a batch from zero windows")
        first = windows[0]
        for w in windows:
            if w.encoder_length != first.encoder_length or w.horizon != first.horizon:
                raise ValueError(
                    "all windows in a batch must share encoder length and horizon, got "
                    f"({w.encoder_length}, {w.horizon}) and "
                    f"({first.encoder_length}, {first.horizon})"
                )
        return WindowBatch(
            series_ids=tuple(w.series_id for w in windows),
            starts=np.array([w.start for w in windows], dtype=np.int64),
            y=np.stack([w.y for w in windows]).astype(np.float64),
            categorical=np.stack([w.categorical for w in windows]).astype(np.int64),
            continuous=np.stack([w.continuous for w in windows]).astype(np.float64),
            encoder_length=first.encoder_length,
            horizon=first.horizon,
            scales=np.array([w.scale for w in windows], dtype=np.float64),
        )

    def __len__(self) -> int:
        return int(self.y.shape[0])

    @property
    def encoder_targets(self) -> np.ndarray:
        return self.y[:, : self.encoder_length]

    @property
    def decoder_targets(self) -> np.ndarray:
        return self.y[:, self.encoder_length :]

    @property
    def has_targets(self) -> bool:
        return bool(np.all(np.isfinite(self.decoder_targets)))
