"""ARU states built from the realised history of each series, for training windows.

The state at an origin holds every realised step of the series before it, absorbed
with the decoder outputs of the current global parameters. Training and validation
windows start from these states, as they would in deployment.
"""

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

from aru.adaptive import AruConfig, AruState, aru_init, aru_update, stack_states
from aru.data.data import WindowBatch, WindowSample
from aru.model.forecaster import ForecastModel, MissingTargetsError
from aru.preprocessing.scaling import PreparedSeries
from aru.training.windows import window_at

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HistoryStates:
    """Single-series ARU states keyed by ``(series_id, origin)``."""

    config: AruConfig
    states: Mapping[tuple[str, int], AruState]

    def __len__(self) -> int:
        return len(self.states)

    def for_batch(self, batch: WindowBatch) -> AruState:
        """The states at the origins of the windows of ``batch``, stacked in batch order.

        :raises KeyError: if a window's origin was not replayed
        """
        keys = [
            (series_id, int(start) + batch.encoder_length)
            for series_id, start in zip(batch.series_ids, batch.starts)
        ]
        missing = [key for key in keys if key not in self.states]
        if missing:
            raise KeyError(f"no history state for (series, origin) {missing[:3]}")
        return stack_states([self.states[key] for key in keys])


def window_origins(windows: Iterable[WindowSample]) -> dict[str, set[int]]:
    """First decoder step of every window, per series."""
    origins: dict[str, set[int]] = {}
    for w in windows:
        origins.setdefault(w.series_id, set()).add(w.start + w.encoder_length)
    return origins


def _row(state: AruState, i: int) -> AruState:
    return AruState(
        config=state.config,
        sxx=state.sxx[i].copy(),
        sxy=state.sxy[i].copy(),
        sn=state.sn[i].copy(),
        ss=state.ss[i].copy(),
        step_count=state.step_count[i].copy(),
    )


def history_states(
    model: ForecastModel,
    series: Sequence[PreparedSeries],
    origins: Mapping[str, Iterable[int]],
) -> HistoryStates:
    """Replay the realised history of every series and keep the state in force at each
    requested origin.

    Step ``t >= E`` is absorbed with the decoder output of the window whose decoder span
    covers it, the windows tiling the series from its first step. Series of equal length
    are replayed together as one batch.

    :param model: a model with an ARU head
    :param series:
    :param origins: per series id, the origins to keep a state at; every origin must
        leave room for a window, ``E <= origin <= len(series) - K``
    :return:
    :raises MissingTargetsError: if a replayed step has no finite target
    """
    config = model.config
    if config.aru is None:
        raise ValueError(f"the {config.head.name} head has no ARU state")
    e, k = config.encoder_length, config.horizon
    wanted = {sid: set(o) for sid, o in origins.items() if o}
    groups: dict[int, list[PreparedSeries]] = {}
    for s in series:
        if s.series_id in wanted:
            groups.setdefault(len(s), []).append(s)

    states: dict[tuple[str, int], AruState] = {}
    for length, group in groups.items():
        last = max(max(wanted[s.series_id]) for s in group)
        starts = [start for start in range(0, length - e - k + 1, k) if start + e <= last]
        if not starts:
            continue
        batch = WindowBatch.from_windows(
            [window_at(s, start, e, k) for start in starts for s in group]
        )
        if not batch.has_targets:
            raise MissingTargetsError("state replay needs the targets of every decoder step")
        h = model.decode(model.encode(batch), batch.categorical[:, e:], batch.continuous[:, e:])
        h = h.reshape(len(starts), len(group), k, config.hidden_size)
        y = batch.decoder_targets.reshape(len(starts), len(group), k)
        state = aru_init(config.aru, (len(group),))
        for tile, start in enumerate(starts):
            for step in range(k):
                t = start + e + step
                for i, s in enumerate(group):
                    if t in wanted[s.series_id]:
                        states[(s.series_id, t)] = _row(state, i)
                state = aru_update(state, h[tile, :, step], y[tile, :, step])
    logger.debug("replayed %s series into %s states", len(series), len(states))
    return HistoryStates(config=config.aru, states=states)
