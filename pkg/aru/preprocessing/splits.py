import logging
from dataclasses import dataclass

from aru.data.data import Protocol
from aru.preprocessing.csv_loader import TimeSeriesDataset

logger = logging.getLogger(__name__)


class SeriesTooShortError(ValueError):
    def __init__(self, series_id: str, length: int, required: int):
        self.series_id = series_id
        super().__init__(
            f"series {series_id} has {length} steps but at least {required} are required"
        )


@dataclass(frozen=True)
class SeriesSplit:
    """Chronological ranges of one series: training ``[0, validation_start)``,
    validation ``[validation_start, test_start)`` and test ``[test_start, length)``."""

    series_id: str
    validation_start: int
    test_start: int
    length: int


@dataclass(frozen=True)
class DataSplit:
    protocol: Protocol
    encoder_length: int
    horizon: int
    n_rolls: int
    series: dict[str, SeriesSplit]

    @property
    def region(self) -> int:
        """Steps in each of the validation and test ranges."""
        return self.horizon * self.n_rolls

    def train_slice(self, dataset: TimeSeriesDataset) -> TimeSeriesDataset:
        """Every series truncated to its training range."""
        return TimeSeriesDataset(
            series=tuple(s.head(self.series[s.series_id].validation_start) for s in dataset),
            feature_columns=dataset.feature_columns,
        )


def split(
    dataset: TimeSeriesDataset,
    protocol: Protocol,
    encoder_length: int,
    horizon: int,
    n_rolls: int = 1,
) -> DataSplit:
    """Split every series chronologically.

    The test range is the last ``horizon`` steps (fixed protocol) or the last
    ``n_rolls * horizon`` steps (streaming protocol); the validation range is the range
    of the same size before it, and the remainder is the training range. Validation and
    test windows draw their encoder context from the steps before their range.

    :raises SeriesTooShortError: if a training range is shorter than one window
    """
    if protocol is Protocol.FIXED:
        n_rolls = 1
    elif n_rolls < 1:
        raise ValueError(f"n_rolls must be >= 1, got {n_rolls}")
    region = horizon * n_rolls
    required = encoder_length + horizon + 2 * region
    series = {}
    for s in dataset:
        length = len(s)
        if length < required:
            raise SeriesTooShortError(s.series_id, length, required)
        test_start = length - region
        series[s.series_id] = SeriesSplit(
            series_id=s.series_id,
            validation_start=test_start - region,
            test_start=test_start,
            length=length,
        )
    return DataSplit(
        protocol=protocol,
        encoder_length=encoder_length,
        horizon=horizon,
        n_rolls=n_rolls,
        series=series,
    )
