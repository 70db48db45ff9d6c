"""Fixed and streaming evaluation of a trained, frozen model on the test ranges.

The ARU heads start every test range from the state built by replaying the history
before it. In the streaming protocol the state then keeps absorbing the realized
steps of each roll before the next forecast, while the global parameters never
change.
"""

import logging
import time
from collections.abc import Sequence
from typing import Optional

import numpy as np

from aru.adaptive import AruState, stack_states
from aru.data.data import Mode, Protocol, WindowBatch, WindowSample
from aru.evaluation.report import EvalReport, SeriesForecast
from aru.model.forecaster import ForecastModel
from aru.preprocessing.dataset import PreparedData
from aru.preprocessing.scaling import PreparedSeries
from aru.training.windows import replay_windows, window_at

logger = logging.getLogger(__name__)

DEFAULT_TIMING_REPEATS = 3


class InsufficientTailError(ValueError):
    pass


class EmptyTestSetError(ValueError):
    pass


def _test_start(data: PreparedData, series: PreparedSeries, n_rolls: int) -> int:
    e, k = data.split.encoder_length, data.split.horizon
    test_start = data.split.series[series.series_id].test_start
    if test_start < e or len(series) - test_start < n_rolls * k:
        raise InsufficientTailError(
            f"series {series.series_id} cannot provide {e} context steps and "
            f"{n_rolls * k} test steps after step {test_start}"
        )
    return test_start


def initial_states(model: ForecastModel, data: PreparedData) -> Optional[dict[str, AruState]]:
    """Per series ARU state after replaying every horizon before the test range, or
    None for the baseline head.

    The replay covers the training and the validation range: both hold realised
    targets the model is allowed to see before the first test origin. Only the local
    statistics absorb the validation targets; the global parameters stay as trained.
    """
    if not model.config.uses_aru:
        return None
    e, k = model.config.encoder_length, model.config.horizon
    return {
        s.series_id: model.build_state(
            replay_windows(s, e, k, until=data.split.series[s.series_id].test_start)
        )
        for s in data.series
    }


def _collect(
    batch: WindowBatch,
    windows: Sequence[WindowSample],
    series: Sequence[PreparedSeries],
    model: ForecastModel,
    states: Optional[AruState],
    outputs: dict[str, list[tuple[np.ndarray, ...]]],
) -> None:
    forecast, _ = model.forward(batch, states, Mode.INFER)
    scales = batch.scales[:, None]
    mu, sigma = forecast.mu * scales, forecast.sigma * scales
    y_true = batch.decoder_targets * scales
    for i, (w, s) in enumerate(zip(windows, series)):
        origin = w.start + w.encoder_length
        timestamps = s.timestamps[origin : origin + w.horizon]
        outputs[s.series_id].append((timestamps, y_true[i], mu[i], sigma[i]))


def _report(
    model: ForecastModel,
    method: str,
    protocol: Protocol,
    n_rolls: int,
    outputs: dict[str, list[tuple[np.ndarray, ...]]],
) -> EvalReport:
    forecasts = [
        SeriesForecast(
            series_id=sid,
            timestamps=np.concatenate([p[0] for p in parts]),
            y_true=np.concatenate([p[1] for p in parts]),
            mu=np.concatenate([p[2] for p in parts]),
            sigma=np.concatenate([p[3] for p in parts]),
        )
        for sid, parts in outputs.items()
    ]
    report = EvalReport.from_forecasts(method, protocol, n_rolls, forecasts).with_aru(
        model.config.aru
    )
    logger.info(
        "%s evaluation of %s: ND %.4f, RMSE %.4f", protocol.name, method, report.nd, report.rmse
    )
    return report


def eval_fixed(
    model: ForecastModel, data: PreparedData, method: Optional[str] = None
) -> EvalReport:
    """Forecast the first horizon of every test range from the preceding encoder span.

    :raises InsufficientTailError: if a series lacks the context or the test steps
    """
    if len(data.series) == 0:
        raise EmptyTestSetError("no series to evaluate")
    e, k = model.config.encoder_length, model.config.horizon
    windows = [window_at(s, _test_start(data, s, 1) - e, e, k) for s in data.series]
    states = initial_states(model, data)
    stacked = None if states is None else stack_states([states[s.series_id] for s in data.series])
    outputs: dict[str, list[tuple[np.ndarray, ...]]] = {s.series_id: [] for s in data.series}
    _collect(WindowBatch.from_windows(windows), windows, data.series, model, stacked, outputs)
    return _report(model, method or model.head.name.lower(), Protocol.FIXED, 1, outputs)


def eval_streaming(
    model: ForecastModel,
    data: PreparedData,
    n_rolls: int,
    adapt_steps: Optional[int] = None,
    method: Optional[str] = None,
) -> EvalReport:
    """Roll through the test range one horizon at a time without changing the model.

    Before each roll's forecast the ARU state absorbs the realized steps it has not
    seen yet, at most the ``adapt_steps`` most recent ones (default: the encoder
    length). Their decoder outputs are recomputed under the roll's own encoder
    context. The first roll starts where the replayed history ends, so it forecasts
    exactly as :func:`eval_fixed` does.

    :raises InsufficientTailError: if a series lacks the context or
        ``n_rolls * horizon`` test steps
    """
    if n_rolls < 1:
        raise ValueError(f"n_rolls must be >= 1, got {n_rolls}")
    if len(data.series) == 0:
        raise EmptyTestSetError("no series to evaluate")
    e, k = model.config.encoder_length, model.config.horizon
    adapt_steps = e if adapt_steps is None else adapt_steps
    test_starts = {s.series_id: _test_start(data, s, n_rolls) for s in data.series}
    states = initial_states(model, data)
    adapted_until = dict(test_starts)
    outputs: dict[str, list[tuple[np.ndarray, ...]]] = {s.series_id: [] for s in data.series}
    for r in range(n_rolls):
        windows = [window_at(s, test_starts[s.series_id] + r * k - e, e, k) for s in data.series]
        batch = WindowBatch.from_windows(windows)
        stacked = None
        if states is not None:
            g = model.encode(batch)
            for i, w in enumerate(windows):
                sid = w.series_id
                origin = w.start + e
                begin = max(adapted_until[sid], origin - adapt_steps)
                if begin < origin:
                    offset = begin - w.start
                    h = model.decode(
                        g[i : i + 1],
                        w.categorical[None, offset:e],
                        w.continuous[None, offset:e],
                    )[0]
                    states[sid] = model.adapt(states[sid], h, w.y[offset:e])
                adapted_until[sid] = origin
            stacked = stack_states([states[s.series_id] for s in data.series])
        _collect(batch, windows, data.series, model, stacked, outputs)
        logger.debug("completed roll %s of %s", r + 1, n_rolls)
    return _report(model, method or model.head.name.lower(), Protocol.STREAMING, n_rolls, outputs)


def time_forward(
    model: ForecastModel,
    batch: WindowBatch,
    states: Optional[AruState] = None,
    repeats: int = DEFAULT_TIMING_REPEATS,
) -> float:
    """Best wall-clock seconds of ``repeats`` inference passes over ``batch``."""
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    model.forward(batch, states, Mode.INFER)
    best = float("inf")
    for _ in range(repeats):
        started = time.perf_counter()
        model.forward(batch, states, Mode.INFER)
        best = min(best, time.perf_counter() - started)
    return best


def time_inference(
    model: ForecastModel, data: PreparedData, repeats: int = DEFAULT_TIMING_REPEATS
) -> float:
    """Time the forward pass over every series' test window. Building the ARU states
    from the history is not timed.

    :raises EmptyTestSetError: if there is no test window
    """
    if len(data.series) == 0:
        raise EmptyTestSetError("the test set holds no windows to time")
    e, k = model.config.encoder_length, model.config.horizon
    windows = [window_at(s, _test_start(data, s, 1) - e, e, k) for s in data.series]
    states = initial_states(model, data)
    stacked = None if states is None else stack_states([states[s.series_id] for s in data.series])
    seconds = time_forward(model, WindowBatch.from_windows(windows), stacked, repeats)
    logger.info(
        "inference over %s windows took %.4f s (best of %s)", len(windows), seconds, repeats
    )
    return seconds
