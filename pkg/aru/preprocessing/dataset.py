import json
import logging
from dataclasses import dataclass
from typing import Optional

import pandas as pd
from pydantic import BaseModel, Field

from aru.data.data import Granularity, Protocol, ScalingMode
from aru.model.config import FeatureSchema
from aru.preprocessing.csv_loader import TimeSeriesDataset
from aru.preprocessing.features import TIME_FEATURE_CARDINALITIES, TIME_FEATURES, time_features
from aru.preprocessing.scaling import PreparedSeries, ScalerState, apply_scalers, fit_scalers
from aru.preprocessing.splits import DataSplit, split

logger = logging.getLogger(__name__)


class DataConfig(BaseModel):
    path: Optional[str] = None  # csv with columns series_id, timestamp, y[, feature...]
    # json manifest written next to a synthetic csv; its column roles replace the ones below
    manifest: Optional[str] = None
    granularity: str = "hourly"  # hourly, daily, weekly or monthly
    timestamp_unit: str = "seconds"  # epoch seconds, or "period" for an integer step index
    time_features: bool = True  # derive calendar features from the timestamps
    categorical_columns: list[str] = Field(default_factory=list)
    # None uses every numeric column that is not categorical
    continuous_columns: Optional[list[str]] = None
    encoder_length: int = Field(168, ge=1)
    horizon: int = Field(24, ge=1)
    scaling_mode: str = "series"  # series, or window to scale by each encoder span
    max_embedding_dim: int = Field(4, ge=1)

    @property
    def granularity_enum(self) -> Granularity:
        result: Granularity = Granularity.from_config(self.granularity)
        return result

    @property
    def scaling_mode_enum(self) -> ScalingMode:
        result: ScalingMode = ScalingMode.from_config(self.scaling_mode)
        return result

    def with_manifest(self) -> "DataConfig":
        """This config with the granularity and column roles recorded in the manifest."""
        if self.manifest is None:
            return self
        with open(self.manifest, encoding="utf-8") as f:
            record = json.load(f)
        return self.copy(
            update={
                key: record[key]
                for key in (
                    "granularity",
                    "categorical_columns",
                    "continuous_columns",
                    "time_features",
                )
                if key in record
            }
        )

    def resolve_continuous_columns(self, dataset: TimeSeriesDataset) -> list[str]:
        if self.continuous_columns is not None:
            return list(self.continuous_columns)
        if len(dataset) == 0:
            return []
        features = dataset.series[0].features
        return [
            c
            for c in dataset.feature_columns
            if c not in self.categorical_columns and pd.api.types.is_numeric_dtype(features[c])
        ]


@dataclass(frozen=True)
class PreparedData:
    series: list[PreparedSeries]
    scalers: ScalerState
    schema: FeatureSchema
    split: DataSplit

    def by_id(self, series_id: str) -> PreparedSeries:
        for s in self.series:
            if s.series_id == series_id:
                return s
        raise KeyError(series_id)


def feature_schema(config: DataConfig, scalers: ScalerState) -> FeatureSchema:
    cardinalities: dict[str, int] = {}
    if config.time_features:
        for name in TIME_FEATURES[config.granularity_enum]:
            cardinalities[name] = TIME_FEATURE_CARDINALITIES[name]
    for column, vocabulary in scalers.vocabularies.items():
        cardinalities[column] = len(vocabulary)
    return FeatureSchema.build(
        cardinalities, scalers.continuous_columns, max_embedding_dim=config.max_embedding_dim
    )


def prepare_dataset(
    dataset: TimeSeriesDataset,
    config: DataConfig,
    protocol: Protocol = Protocol.FIXED,
    n_rolls: int = 1,
    scalers: Optional[ScalerState] = None,
) -> PreparedData:
    """Split, fit scalers on the training ranges (unless given) and prepare every series
    in full.

    :param dataset:
    :param config:
    :param protocol:
    :param n_rolls: size of the streaming test range in horizons
    :param scalers: previously fitted scalers, e.g. loaded next to a checkpoint
    :return:
    """
    data_split = split(dataset, protocol, config.encoder_length, config.horizon, n_rolls)
    if scalers is None:
        scalers = fit_scalers(
            data_split.train_slice(dataset),
            categorical_columns=config.categorical_columns,
            continuous_columns=config.resolve_continuous_columns(dataset),
            scaling_mode=config.scaling_mode_enum,
        )
    time_frames = None
    if config.time_features:
        time_frames = {
            s.series_id: time_features(s.timestamps, config.granularity_enum, config.timestamp_unit)
            for s in dataset
        }
    prepared = apply_scalers(dataset, scalers, time_frames)
    schema = feature_schema(config, scalers)
    logger.info(
        "prepared %s series with %s categorical and %s continuous features",
        len(prepared),
        len(schema.categorical),
        len(schema.continuous),
    )
    return PreparedData(series=prepared, scalers=scalers, schema=schema, split=data_split)
