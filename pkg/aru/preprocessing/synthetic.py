"""Synthetic hourly series whose targets are linear in one-hot calendar features.

Every series ``i`` draws its own parameters ``theta_i ~ U[-gamma, gamma]`` over the 24
hour-of-day indicators, the 7 day-of-week indicators and a bias, and emits
``y_t = theta_i . [x_t 1] + eps_t`` with ``eps_t ~ N(0, noise^2)``. A global model can
only tell the series apart from their history, or from an explicit id feature when
``with_series_id`` is set.
"""

import json
import logging
from dataclasses import dataclass
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from aru.data.data import Granularity
from aru.preprocessing.csv_loader import SERIES_ID, TARGET, TIMESTAMP, TimeSeriesDataset
from aru.preprocessing.features import time_features
from aru.utils.utils import PathLike, as_path, rng_for

logger = logging.getLogger(__name__)

HOUR_COLUMNS = tuple(f"hour_{h}" for h in range(24))
DOW_COLUMNS = tuple(f"dow_{d}" for d in range(7))
#: the optional categorical column repeating the series id
SERIES_FEATURE = "series"
SECONDS_PER_HOUR = 3600


class SynthConfig(BaseModel):
    n_series: int = Field(10, ge=1)
    length: int = Field(2000, ge=1)  # steps per series
    gamma: float = Field(20.0, gt=0)  # local parameters are drawn from U[-gamma, gamma]
    noise: float = Field(1.0, ge=0)  # standard deviation of eps
    with_series_id: bool = False
    seed: int = 0
    start_timestamp: int = 0  # epoch seconds of the first step


def calendar_one_hot(timestamps: np.ndarray) -> np.ndarray:
    """Hour-of-day then day-of-week indicators, shape ``(T, 31)``."""
    codes = time_features(timestamps, Granularity.HOURLY)
    return np.concatenate(
        [
            np.eye(24)[codes["hour_of_day"].to_numpy()],
            np.eye(7)[codes["day_of_week"].to_numpy()],
        ],
        axis=1,
    )


@dataclass(frozen=True)
class SyntheticData:
    config: SynthConfig
    frame: pd.DataFrame
    #: series id to its 32 generating parameters, bias last
    thetas: dict[str, np.ndarray]

    @property
    def dataset(self) -> TimeSeriesDataset:
        return TimeSeriesDataset.from_frame(self.frame)

    @property
    def categorical_columns(self) -> list[str]:
        return [SERIES_FEATURE] if self.config.with_series_id else []

    def manifest(self) -> dict[str, Any]:
        """Generation settings, the parameters of every series and the column roles to
        load the csv with."""
        return {
            **self.config.dict(),
            "thetas": {sid: theta.tolist() for sid, theta in self.thetas.items()},
            "granularity": Granularity.HOURLY.name.lower(),
            "categorical_columns": self.categorical_columns,
            "continuous_columns": list(HOUR_COLUMNS + DOW_COLUMNS),
            "time_features": False,
        }


def series_name(index: int) -> str:
    return f"series_{index:03d}"


def synth_generate(config: SynthConfig) -> SyntheticData:
    """Generate the synthetic dataset. Every series draws its parameters and noise
    from its own stream, so the targets do not depend on ``with_series_id`` or on
    ``n_series``."""
    timestamps = config.start_timestamp + SECONDS_PER_HOUR * np.arange(
        config.length, dtype=np.int64
    )
    x = calendar_one_hot(timestamps)
    design = np.concatenate([x, np.ones((config.length, 1))], axis=1)
    frames = []
    thetas = {}
    for i in range(config.n_series):
        sid = series_name(i)
        theta = rng_for(config.seed, f"synth/theta/{sid}").uniform(
            -config.gamma, config.gamma, size=design.shape[1]
        )
        eps = rng_for(config.seed, f"synth/noise/{sid}").normal(
            0.0, config.noise, size=config.length
        )
        columns: dict[str, Any] = {
            SERIES_ID: sid,
            TIMESTAMP: timestamps,
            TARGET: design @ theta + eps,
        }
        columns.update({name: x[:, j] for j, name in enumerate(HOUR_COLUMNS + DOW_COLUMNS)})
        if config.with_series_id:
            columns[SERIES_FEATURE] = sid
        frames.append(pd.DataFrame(columns))
        thetas[sid] = theta
    frame = pd.concat(frames, ignore_index=True)
    logger.info(
        "generated %s synthetic series of length %s with gamma=%s",
        config.n_series,
        config.length,
        config.gamma,
    )
    return SyntheticData(config=config, frame=frame, thetas=thetas)


def write_synthetic(data: SyntheticData, output_dir: PathLike) -> tuple[str, str]:
    """Write ``synthetic.csv`` and ``manifest.json``.

    :return: the paths of both files
    """
    output_dir = as_path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    csv_path = output_dir / "synthetic.csv"
    manifest_path = output_dir / "manifest.json"
    data.frame.to_csv(csv_path, index=False, encoding="utf-8", lineterminator="\n")
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(data.manifest(), f, indent=2)
        f.write("\n")
    logger.info("wrote %s and %s", csv_path, manifest_path)
    return str(csv_path), str(manifest_path)
