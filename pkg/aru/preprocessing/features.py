"""Calendar features derived from timestamps.

Timestamps are either epoch seconds (UTC) or, with ``unit="period"``, the integer
index of a regular step of the given granularity counted from an arbitrary origin.
In the latter case the calendar is approximated with 30 day months.
"""

import numpy as np
import pandas as pd

from aru.data.data import Granularity

#: feature name to number of distinct values
TIME_FEATURE_CARDINALITIES = {
    "hour_of_day": 24,
    "day_of_week": 7,
    "day_of_month": 31,
    "month_of_year": 12,
    "week_of_year": 53,
}

TIME_FEATURES: dict[Granularity, tuple[str, ...]] = {
    Granularity.HOURLY: ("hour_of_day", "day_of_week", "month_of_year"),
    Granularity.DAILY: ("day_of_month", "month_of_year"),
    Granularity.WEEKLY: ("month_of_year", "week_of_year"),
    Granularity.MONTHLY: ("month_of_year",),
}


def _from_epoch_seconds(timestamps: np.ndarray) -> dict[str, np.ndarray]:
    stamps = pd.DatetimeIndex(pd.to_datetime(timestamps, unit="s", utc=True))
    return {
        "hour_of_day": stamps.hour.to_numpy(),
        # monday is 0, so 1970-01-01 is 3
        "day_of_week": stamps.dayofweek.to_numpy(),
        "day_of_month": stamps.day.to_numpy() - 1,
        "month_of_year": stamps.month.to_numpy() - 1,
        "week_of_year": stamps.isocalendar().week.to_numpy(dtype=np.int64) - 1,
    }


def _from_periods(periods: np.ndarray, granularity: Granularity) -> dict[str, np.ndarray]:
    if granularity is Granularity.HOURLY:
        days = periods // 24
        return {
            "hour_of_day": periods % 24,
            "day_of_week": days % 7,
            "month_of_year": (days // 30) % 12,
        }
    if granularity is Granularity.DAILY:
        return {"day_of_month": periods % 30, "month_of_year": (periods // 30) % 12}
    if granularity is Granularity.WEEKLY:
        return {"month_of_year": (periods * 7 // 30) % 12, "week_of_year": periods % 52}
    return {"month_of_year": periods % 12}


def time_features(
    timestamps: np.ndarray, granularity: Granularity, unit: str = "seconds"
) -> pd.DataFrame:
    """Integer coded calendar features, one column per feature in
    :data:`TIME_FEATURES` for the granularity.

    :param timestamps:
    :param granularity:
    :param unit: ``seconds`` or ``period``
    :return:
    """
    ts = np.asarray(timestamps, dtype=np.int64)
    if unit == "seconds":
        values = _from_epoch_seconds(ts)
    elif unit == "period":
        values = _from_periods(ts, granularity)
    else:
        raise ValueError(f"timestamp unit must be 'seconds' or 'period', got {unit!r}")
    return pd.DataFrame(
        {name: np.asarray(values[name], dtype=np.int64) for name in TIME_FEATURES[granularity]}
    )
