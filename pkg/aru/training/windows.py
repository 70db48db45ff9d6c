import logging
from collections.abc import Iterator, Sequence
from typing import Optional

import numpy as np

from aru.data.data import ScalingMode, WindowBatch, WindowSample
from aru.preprocessing.dataset import PreparedData
from aru.preprocessing.scaling import PreparedSeries, target_scale

logger = logging.getLogger(__name__)


def window_at(
    series: PreparedSeries, start: int, encoder_length: int, horizon: int
) -> WindowSample:
    """The window whose encoder span starts at ``start``.

    With window scaling the targets are divided by ``1 + mean(|y|)`` over the encoder
    span, so the scale never depends on the decoder targets.
    """
    stop = start + encoder_length + horizon
    if start < 0 or stop > len(series):
        raise IndexError(
            f"window [{start}, {stop}) does not fit series {series.series_id} "
            f"of length {len(series)}"
        )
    y = series.y[start:stop]
    scale = series.scale
    if series.scaling_mode is ScalingMode.WINDOW:
        scale = target_scale(y[:encoder_length])
        y = y / scale
    return WindowSample(
        series_id=series.series_id,
        start=start,
        y=y,
        categorical=series.categorical[start:stop],
        continuous=series.continuous[start:stop],
        encoder_length=encoder_length,
        horizon=horizon,
        scale=scale,
    )


def make_windows(
    series: PreparedSeries,
    encoder_length: int,
    horizon: int,
    stride: int,
    end: Optional[int] = None,
) -> list[WindowSample]:
    """Sliding windows with encoder span ``[s, s + E)`` and decoder span
    ``[s + E, s + E + K)`` for ``s = 0, stride, 2 * stride, ...``, all within the first
    ``end`` steps.

    :return: ``(T - E - K) // stride + 1`` windows, or none if the series is too short
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    length = len(series) if end is None else min(end, len(series))
    if length < encoder_length + horizon:
        logger.warning(
            "skipping series %s: %s steps cannot hold a window of %s",
            series.series_id,
            length,
            encoder_length + horizon,
        )
        return []
    return [
        window_at(series, start, encoder_length, horizon)
        for start in range(0, length - encoder_length - horizon + 1, stride)
    ]


def replay_windows(
    series: PreparedSeries, encoder_length: int, horizon: int, until: int
) -> list[WindowSample]:
    """Non-overlapping windows whose decoder spans tile the history before ``until``,
    in chronological order, the last one ending exactly at ``until``."""
    last = until - encoder_length - horizon
    return [
        window_at(series, start, encoder_length, horizon)
        for start in reversed(range(last, -1, -horizon))
    ]


def iterate_batches(
    windows: Sequence[WindowSample], batch_size: int, rng: Optional[np.random.Generator] = None
) -> Iterator[WindowBatch]:
    """Stack windows into batches, in a random order when ``rng`` is given."""
    order = np.arange(len(windows)) if rng is None else rng.permutation(len(windows))
    for i in range(0, len(order), batch_size):
        yield WindowBatch.from_windows([windows[j] for j in order[i : i + batch_size]])


def training_windows(data: PreparedData, stride: int) -> list[WindowSample]:
    """Sliding windows over the training range of every series."""
    return [
        w
        for s in data.series
        for w in make_windows(
            s,
            data.split.encoder_length,
            data.split.horizon,
            stride,
            end=data.split.series[s.series_id].validation_start,
        )
    ]


def validation_windows(data: PreparedData) -> list[WindowSample]:
    """Windows whose decoder spans tile the validation range of every series, with
    encoder context from the steps before them."""
    e, k = data.split.encoder_length, data.split.horizon
    windows = []
    for s in data.series:
        ranges = data.split.series[s.series_id]
        for origin in range(ranges.validation_start, ranges.test_start - k + 1, k):
            if origin >= e:
                windows.append(window_at(s, origin - e, e, k))
    return windows
