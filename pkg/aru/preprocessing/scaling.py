import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any, Optional, Union

import numpy as np
import pandas as pd

from aru.data.data import ScalingMode
from aru.preprocessing.csv_loader import TimeSeriesDataset
from aru.utils.utils import PathLike

logger = logging.getLogger(__name__)

#: code 0 of every fitted vocabulary, used for values not seen in the training range
UNKNOWN_CATEGORY = "<unk>"
#: scaled continuous values outside the training range are clamped to this interval
CONTINUOUS_CLAMP = (-0.5, 1.5)


class EmptyTrainingSliceError(ValueError):
    pass


def target_scale(y: np.ndarray) -> float:
    """``1 + mean(|y|)``, at least 1 for any finite input.

    The absolute value keeps the scale positive for signed targets; on non-negative
    targets this is the usual ``1 + mean(y)``.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise EmptyTrainingSliceError("cannot compute a target scale from zero observations")
    return float(1.0 + np.mean(np.abs(y)))


def scale_targets(y: np.ndarray, scale: float) -> np.ndarray:
    return np.asarray(y, dtype=np.float64) / scale


def unscale_targets(y: np.ndarray, scale: Union[float, np.ndarray]) -> np.ndarray:
    return np.asarray(y, dtype=np.float64) * scale


@dataclass(frozen=True)
class ScalerState:
    """Everything fitted on the training range and needed to prepare any range."""

    continuous_min: dict[str, float]
    continuous_max: dict[str, float]
    #: per series ybar; unused by the window scaling mode
    target_scale: dict[str, float]
    #: per categorical column, the values in code order, starting with the unknown value
    vocabularies: dict[str, list[str]]
    scaling_mode: ScalingMode = ScalingMode.SERIES

    @property
    def continuous_columns(self) -> list[str]:
        return list(self.continuous_min)

    @property
    def categorical_columns(self) -> list[str]:
        return list(self.vocabularies)

    def scale_continuous(self, column: str, values: np.ndarray) -> np.ndarray:
        """Min-max scale to [0, 1] on the training range; constant features map to 0."""
        lo, hi = self.continuous_min[column], self.continuous_max[column]
        values = np.asarray(values, dtype=np.float64)
        if hi == lo:
            return np.zeros_like(values)
        return np.clip((values - lo) / (hi - lo), *CONTINUOUS_CLAMP)

    def encode_categorical(self, column: str, values: pd.Series) -> np.ndarray:
        codes = {v: i for i, v in enumerate(self.vocabularies[column])}
        return np.array([codes.get(str(v), 0) for v in values], dtype=np.int64)

    def to_dict(self) -> dict[str, Any]:
        return {
            "continuous_columns": self.continuous_columns,
            "categorical_columns": self.categorical_columns,
            "continuous_min": self.continuous_min,
            "continuous_max": self.continuous_max,
            "target_scale": self.target_scale,
            "vocabularies": self.vocabularies,
            "scaling_mode": self.scaling_mode.name,
        }

    @staticmethod
    def from_dict(record: Mapping[str, Any]) -> "ScalerState":
        """Rebuild the column dicts in the recorded column order, which fixes the order
        of the model inputs."""
        continuous = record["continuous_columns"]
        categorical = record["categorical_columns"]
        return ScalerState(
            continuous_min={c: float(record["continuous_min"][c]) for c in continuous},
            continuous_max={c: float(record["continuous_max"][c]) for c in continuous},
            target_scale=dict(record["target_scale"]),
            vocabularies={c: list(record["vocabularies"][c]) for c in categorical},
            scaling_mode=ScalingMode[record["scaling_mode"]],
        )

    def save(self, path: PathLike) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    @staticmethod
    def load(path: PathLike) -> "ScalerState":
        with open(path, encoding="utf-8") as f:
            return ScalerState.from_dict(json.load(f))


def fit_scalers(
    train: TimeSeriesDataset,
    categorical_columns: Sequence[str] = (),
    continuous_columns: Sequence[str] = (),
    scaling_mode: ScalingMode = ScalingMode.SERIES,
) -> ScalerState:
    """Fit scalers on the training range of every series.

    :param train: the training slice only
    :param categorical_columns:
    :param continuous_columns:
    :param scaling_mode:
    :return:
    :raises EmptyTrainingSliceError: if the slice or any series in it is empty
    """
    if len(train) == 0:
        raise EmptyTrainingSliceError("the training slice holds no series")
    for s in train:
        if len(s) == 0:
            raise EmptyTrainingSliceError(f"series {s.series_id} has an empty training range")
    frame = pd.concat([s.features for s in train], ignore_index=True)
    continuous_min, continuous_max = {}, {}
    for column in continuous_columns:
        values = pd.to_numeric(frame[column], errors="raise").to_numpy(dtype=np.float64)
        continuous_min[column] = float(np.min(values))
        continuous_max[column] = float(np.max(values))
    vocabularies = {
        column: [UNKNOWN_CATEGORY] + sorted(frame[column].astype(str).unique().tolist())
        for column in categorical_columns
    }
    scales = {s.series_id: target_scale(s.y) for s in train}
    return ScalerState(
        continuous_min=continuous_min,
        continuous_max=continuous_max,
        target_scale=scales,
        vocabularies=vocabularies,
        scaling_mode=scaling_mode,
    )


@dataclass(frozen=True)
class PreparedSeries:
    """A series ready to be cut into windows: integer coded categoricals, scaled
    continuous features and targets divided by ``scale``.

    With :attr:`ScalingMode.WINDOW` the targets are left unscaled here (``scale`` is
    1) and every window is scaled by its own encoder span instead.
    """

    series_id: str
    timestamps: np.ndarray
    y: np.ndarray
    #: shape (T, n_categorical)
    categorical: np.ndarray
    #: shape (T, n_continuous)
    continuous: np.ndarray
    scale: float = 1.0
    scaling_mode: ScalingMode = ScalingMode.SERIES

    def __len__(self) -> int:
        return int(self.y.shape[0])

    @property
    def raw_y(self) -> np.ndarray:
        return unscale_targets(self.y, self.scale)

    def head(self, n: int) -> "PreparedSeries":
        return PreparedSeries(
            series_id=self.series_id,
            timestamps=self.timestamps[:n],
            y=self.y[:n],
            categorical=self.categorical[:n],
            continuous=self.continuous[:n],
            scale=self.scale,
            scaling_mode=self.scaling_mode,
        )


def apply_scalers(
    dataset: TimeSeriesDataset,
    scalers: ScalerState,
    time_feature_frames: Optional[Mapping[str, pd.DataFrame]] = None,
) -> list[PreparedSeries]:
    """
    :param dataset: any range of the series the scalers were fitted on
    :param scalers:
    :param time_feature_frames: integer coded calendar features per series id, placed
        before the fitted categorical columns
    :return:
    """
    prepared = []
    for s in dataset:
        categorical_parts = []
        if time_feature_frames is not None:
            categorical_parts.append(time_feature_frames[s.series_id].to_numpy(dtype=np.int64))
        categorical_parts.extend(
            scalers.encode_categorical(c, s.features[c])[:, None]
            for c in scalers.categorical_columns
        )
        categorical = (
            np.concatenate(categorical_parts, axis=1)
            if categorical_parts
            else np.zeros((len(s), 0), dtype=np.int64)
        )
        continuous = (
            np.stack(
                [scalers.scale_continuous(c, s.features[c]) for c in scalers.continuous_columns],
                axis=1,
            )
            if scalers.continuous_columns
            else np.zeros((len(s), 0))
        )
        if scalers.scaling_mode is ScalingMode.SERIES:
            scale = scalers.target_scale[s.series_id]
        else:
            scale = 1.0
        prepared.append(
            PreparedSeries(
                series_id=s.series_id,
                timestamps=s.timestamps,
                y=scale_targets(s.y, scale),
                categorical=categorical,
                continuous=continuous,
                scale=scale,
                scaling_mode=scalers.scaling_mode,
            )
        )
    return prepared
