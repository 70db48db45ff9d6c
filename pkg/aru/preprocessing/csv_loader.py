import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from aru.utils.utils import PathLike

logger = logging.getLogger(__name__)

SERIES_ID = "series_id"
TIMESTAMP = "timestamp"
TARGET = "y"
REQUIRED_COLUMNS = (SERIES_ID, TIMESTAMP, TARGET)


class DataFormatError(ValueError):
    pass


class IrregularSpacingError(DataFormatError):
    def __init__(self, series_id: str, detail: str):
        self.series_id = series_id
        super().__init__(f"series {series_id} is not regularly spaced: {detail}")


@dataclass(frozen=True)
class Series:
    """One time series, sorted by timestamp and regularly spaced."""

    series_id: str
    timestamps: np.ndarray
    y: np.ndarray
    #: the remaining columns of the input, row aligned with ``timestamps``
    features: pd.DataFrame

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def head(self, n: int) -> "Series":
        """The first ``n`` steps."""
        return Series(
            series_id=self.series_id,
            timestamps=self.timestamps[:n],
            y=self.y[:n],
            features=self.features.iloc[:n].reset_index(drop=True),
        )


@dataclass(frozen=True)
class TimeSeriesDataset:
    series: tuple[Series, ...]
    feature_columns: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.series)

    def __iter__(self) -> Iterator[Series]:
        return iter(self.series)

    @property
    def series_ids(self) -> list[str]:
        return [s.series_id for s in self.series]

    def by_id(self, series_id: str) -> Series:
        for s in self.series:
            if s.series_id == series_id:
                return s
        raise KeyError(series_id)

    @staticmethod
    def from_frame(frame: pd.DataFrame) -> "TimeSeriesDataset":
        """Group rows per series, sort them by timestamp and check the spacing.

        Row numbers in error messages count the header as line 1, as they appear in a
        csv file.

        :param frame: with columns series_id, timestamp and y, plus any feature columns
        :return:
        :raises DataFormatError: missing columns or unparseable values
        :raises IrregularSpacingError: duplicate or missing timestamps within a series
        """
        missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
        if missing:
            raise DataFormatError(
                f"missing required columns {missing}; found {list(frame.columns)}"
            )
        frame = frame.reset_index(drop=True)
        timestamps = pd.to_numeric(frame[TIMESTAMP], errors="coerce")
        y = pd.to_numeric(frame[TARGET], errors="coerce")
        bad_rows = frame.index[
            timestamps.isna()
            | y.isna()
            | frame[SERIES_ID].isna()
            | (timestamps.notna() & (timestamps != np.floor(timestamps)))
        ]
        if len(bad_rows) > 0:
            lines = [int(i) + 2 for i in bad_rows[:10]]
            raise DataFormatError(
                f"{len(bad_rows)} unparseable rows (series_id, integer timestamp and numeric y "
                f"are required), first at lines {lines}"
            )
        frame = frame.assign(
            **{
                SERIES_ID: frame[SERIES_ID].astype(str),
                TIMESTAMP: timestamps.astype(np.int64),
                TARGET: y.astype(np.float64),
            }
        )
        frame = frame.sort_values([SERIES_ID, TIMESTAMP], kind="stable")
        feature_columns = tuple(c for c in frame.columns if c not in REQUIRED_COLUMNS)
        series = []
        for series_id, group in frame.groupby(SERIES_ID, sort=True):
            ts = group[TIMESTAMP].to_numpy(dtype=np.int64)
            diffs = np.diff(ts)
            if np.any(diffs == 0):
                raise IrregularSpacingError(
                    str(series_id), f"duplicate timestamp {ts[1:][diffs == 0][0]}"
                )
            if diffs.size > 0 and np.any(diffs != diffs[0]):
                gap = int(np.flatnonzero(diffs != diffs[0])[0])
                raise IrregularSpacingError(
                    str(series_id),
                    f"step {diffs[0]} expected but found {diffs[gap]} after timestamp {ts[gap]}",
                )
            series.append(
                Series(
                    series_id=str(series_id),
                    timestamps=ts,
                    y=group[TARGET].to_numpy(dtype=np.float64),
                    features=group.loc[:, list(feature_columns)].reset_index(drop=True),
                )
            )
        return TimeSeriesDataset(series=tuple(series), feature_columns=feature_columns)

    def to_frame(self) -> pd.DataFrame:
        frames = [
            pd.concat(
                [
                    pd.DataFrame(
                        {SERIES_ID: s.series_id, TIMESTAMP: s.timestamps, TARGET: s.y}
                    ),
                    s.features,
                ],
                axis=1,
            )
            for s in self.series
        ]
        return pd.concat(frames, ignore_index=True)


def load_csv(path: PathLike, usecols: Optional[Sequence[str]] = None) -> TimeSeriesDataset:
    """Read a ``series_id,timestamp,y[,feature...]`` file.

    :param path:
    :param usecols: feature columns to keep, all when None
    :return:
    :raises DataFormatError:
    :raises IrregularSpacingError:
    """
    try:
        frame = pd.read_csv(path, dtype={SERIES_ID: str}, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataFormatError(f"cannot parse {path}: {e}") from e
    if usecols is not None:
        unknown = [c for c in usecols if c not in frame.columns]
        if unknown:
            raise DataFormatError(f"columns {unknown} not found in {path}")
        frame = frame.loc[:, [c for c in frame.columns if c in REQUIRED_COLUMNS or c in usecols]]
    dataset = TimeSeriesDataset.from_frame(frame)
    logger.info(
        "loaded %s series (%s rows) with features %s from %s",
        len(dataset),
        len(frame),
        list(dataset.feature_columns),
        path,
    )
    return dataset


def save_csv(dataset: TimeSeriesDataset, path: PathLike) -> None:
    dataset.to_frame().to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
