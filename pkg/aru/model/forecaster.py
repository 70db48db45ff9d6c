"""The global encoder-decoder Gaussian forecaster and its three heads.

A window of ``E + K`` steps is embedded, the first ``E`` steps are encoded into ``g``
by a tanh recurrence, and every decoder step is mapped independently to ``h_t`` by a
three layer ReLU network on ``[g, v_t]``. The heads turn ``h_t`` into a Gaussian:

* :attr:`Head.BASELINE`: affine mean and softplus scale on ``h_t``;
* :attr:`Head.ARU`: two separate two layer ReLU networks (FF2) on ``[h_t, m_t]`` and
  ``[h_t, a_t]``, with ``m_t, a_t`` the ARU local prediction, feed the affine mean and
  softplus scale;
* :attr:`Head.ARU_DIRECT`: the local prediction of the first aging factor is the
  forecast.

Every function here operates on stacks of windows. The forward pass records the
intermediates the reverse pass in :mod:`aru.training.backward` needs.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np

from aru.adaptive import (
    AruState,
    AruStateMismatchError,
    aru_init,
    aru_local_params,
    aru_update,
    predict_from_params,
    stack_states,
    unstack_states,
)
from aru.data.data import Forecast, Head, Mode, WindowBatch, WindowSample
from aru.linalg import ShapeMismatchError
from aru.model.config import FeatureSchema, ModelConfig
from aru.model.params import ModelParams, init_params

logger = logging.getLogger(__name__)


class MissingTargetsError(ValueError):
    pass


class CategoryOutOfRangeError(IndexError):
    pass


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softplus(x: np.ndarray) -> np.ndarray:
    """``log(1 + exp(x))``, evaluated as ``x + log1p(exp(-x))`` for positive ``x``."""
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


@dataclass(frozen=True)
class LayerTrace:
    """Input and pre-activation of one affine layer."""

    inputs: np.ndarray
    pre: np.ndarray

    @property
    def out(self) -> np.ndarray:
        return relu(self.pre)


def _dense(params: ModelParams, prefix: str, x: np.ndarray) -> LayerTrace:
    pre = x @ params[f"{prefix}.weight"].T + params[f"{prefix}.bias"]
    return LayerTrace(inputs=x, pre=pre)


def embed_inputs(
    params: ModelParams, schema: FeatureSchema, categorical: np.ndarray, continuous: np.ndarray
) -> np.ndarray:
    """Concatenate the embedding rows of every categorical feature with the scaled
    continuous features.

    :param params:
    :param schema:
    :param categorical: integer codes, shape ``(..., n_categorical)``
    :param continuous: shape ``(..., n_continuous)``
    :return: shape ``(..., Dv)``
    :raises CategoryOutOfRangeError:
    """
    codes = np.asarray(categorical, dtype=np.int64)
    cont = np.asarray(continuous, dtype=np.float64)
    if codes.shape[-1] != len(schema.categorical) or cont.shape[-1] != len(schema.continuous):
        raise ShapeMismatchError(
            f"expected {len(schema.categorical)} categorical and {len(schema.continuous)} "
            f"continuous features, got {codes.shape[-1]} and {cont.shape[-1]}"
        )
    parts = []
    for i, feature in enumerate(schema.categorical):
        column = codes[..., i]
        if np.any(column < 0) or np.any(column >= feature.cardinality):
            bad = column[(column < 0) | (column >= feature.cardinality)]
            raise CategoryOutOfRangeError(
                f"{feature.name} has cardinality {feature.cardinality}, got codes {np.unique(bad)}"
            )
        parts.append(params[f"embedding.{feature.name}"][column])
    parts.append(cont)
    return np.concatenate(parts, axis=-1)


@dataclass(frozen=True)
class EncoderTrace:
    #: [g_{t-1}, y_{t-1}, v_t] at every step, shape (B, E, R + 1 + Dv)
    inputs: np.ndarray
    #: g_t after every step, shape (B, E, R)
    states: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.states[:, -1]


def encoder_trace(params: ModelParams, y: np.ndarray, v: np.ndarray) -> EncoderTrace:
    """Run the recurrence ``g_t = tanh(W [g_{t-1}, y_{t-1}, v_t] + b)`` with
    ``g_0 = 0`` and ``y_0 = 0``.

    :param params:
    :param y: encoder targets, shape ``(B, E)``
    :param v: embedded encoder inputs, shape ``(B, E, Dv)``
    :return:
    """
    if y.ndim != 2 or v.shape[:2] != y.shape:
        raise ShapeMismatchError(
            f"encoder targets of shape {y.shape} do not match inputs of shape {v.shape}"
        )
    weight, bias = params["encoder.weight"], params["encoder.bias"]
    n, steps = y.shape
    units = bias.shape[0]
    y_prev = np.concatenate([np.zeros((n, 1)), y[:, :-1]], axis=1)
    inputs = np.empty((n, steps, weight.shape[1]))
    states = np.empty((n, steps, units))
    g = np.zeros((n, units))
    for t in range(steps):
        u = np.concatenate([g, y_prev[:, t, None], v[:, t]], axis=-1)
        g = np.tanh(u @ weight.T + bias)
        inputs[:, t] = u
        states[:, t] = g
    return EncoderTrace(inputs=inputs, states=states)


def encode(params: ModelParams, y: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Final encoder state ``g_E`` of one window (``y`` of shape ``(E,)``) or a stack of
    windows (``(B, E)``)."""
    y = np.asarray(y, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if y.ndim == 1:
        return encoder_trace(params, y[None], v[None]).final[0]
    return encoder_trace(params, y, v).final


@dataclass(frozen=True)
class DecoderTrace:
    layers: tuple[LayerTrace, LayerTrace, LayerTrace]

    @property
    def out(self) -> np.ndarray:
        return self.layers[2].out


def decoder_trace(params: ModelParams, g: np.ndarray, v: np.ndarray) -> DecoderTrace:
    """
    :param params:
    :param g: shape ``(..., R)``, broadcast against the leading shape of ``v``
    :param v: shape ``(..., Dv)``
    :return:
    """
    g = np.broadcast_to(g, v.shape[:-1] + g.shape[-1:])
    first = _dense(params, "decoder.0", np.concatenate([g, v], axis=-1))
    second = _dense(params, "decoder.1", np.concatenate([first.out, v], axis=-1))
    third = _dense(params, "decoder.2", second.out)
    return DecoderTrace(layers=(first, second, third))


def decode_step(params: ModelParams, g: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``h_t`` for every decoder input ``v_t`` given the encoder state ``g``."""
    g_arr = np.asarray(g, dtype=np.float64)
    return decoder_trace(params, g_arr, np.asarray(v, dtype=np.float64)).out


def gaussian_head(params: ModelParams, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``mu = w_mu . h + b_mu``, ``sigma = softplus(w_sigma . h + b_sigma)``."""
    mu = _dense(params, "head.mu", h).pre[..., 0]
    sigma = softplus(_dense(params, "head.sigma", h).pre[..., 0])
    return mu, sigma


@dataclass(frozen=True)
class Ff2Trace:
    mu_layers: tuple[LayerTrace, LayerTrace]
    sigma_layers: tuple[LayerTrace, LayerTrace]


def ff2_trace(params: ModelParams, h: np.ndarray, m: np.ndarray, a: np.ndarray) -> Ff2Trace:
    mu_first = _dense(params, "ff2.mu.0", np.concatenate([h, m], axis=-1))
    sigma_first = _dense(params, "ff2.sigma.0", np.concatenate([h, a], axis=-1))
    return Ff2Trace(
        mu_layers=(mu_first, _dense(params, "ff2.mu.1", mu_first.out)),
        sigma_layers=(sigma_first, _dense(params, "ff2.sigma.1", sigma_first.out)),
    )


def ff2_combine(
    params: ModelParams, h: np.ndarray, m: np.ndarray, a: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Fuse the decoder output with the local prediction.

    :param params:
    :param h: shape ``(..., H)``
    :param m: local means, shape ``(..., J)``
    :param a: local variances, shape ``(..., J)``
    :return: mu and sigma, both of shape ``(...)``
    """
    trace = ff2_trace(params, h, m, a)
    mu = _dense(params, "head.mu", trace.mu_layers[1].out).pre[..., 0]
    sigma = softplus(_dense(params, "head.sigma", trace.sigma_layers[1].out).pre[..., 0])
    return mu, sigma


@dataclass(frozen=True)
class ForwardCache:
    """Everything the reverse pass needs from one forward pass over a batch."""

    head: Head
    mode: Mode
    #: embedded inputs, shape (B, E + K, Dv)
    v: np.ndarray
    encoder: EncoderTrace
    decoder: DecoderTrace
    #: the affine mean and scale outputs; absent for ARU-Direct
    mu_out: Optional[LayerTrace] = None
    sigma_out: Optional[LayerTrace] = None
    ff2: Optional[Ff2Trace] = None
    #: local parameters in force at every decoder step, (B, K, J, H + 1) and (B, K, J)
    theta_mu: Optional[np.ndarray] = None
    theta_sigma: Optional[np.ndarray] = None

    @property
    def h(self) -> np.ndarray:
        return self.decoder.out


@dataclass(frozen=True)
class ForwardResult:
    forecast: Forecast
    states: Optional[AruState]
    cache: ForwardCache


def _check_states(config: ModelConfig, states: Optional[AruState], n: int) -> AruState:
    assert config.aru is not None
    if states is None:
        return aru_init(config.aru, (n,))
    if states.config != config.aru:
        raise AruStateMismatchError(
            f"ARU state configured as {states.config} cannot be used with {config.aru}"
        )
    if states.batch_shape != (n,):
        raise AruStateMismatchError(
            f"expected ARU states for a batch of {n} windows, got batch shape {states.batch_shape}"
        )
    return states


def _solve_local_params(
    config: ModelConfig, state: AruState, h: np.ndarray, targets: Optional[np.ndarray]
) -> tuple[np.ndarray, np.ndarray, AruState]:
    """Local parameters in force at every decoder step.

    With targets (train mode) each step is predicted from the state before its own
    target is absorbed. Without them the state is constant across the horizon, so one
    solve serves every step.
    """
    if targets is None:
        solved_mu, solved_sigma = aru_local_params(state)
        shape = (h.shape[0], config.horizon)
        theta_mu = np.broadcast_to(solved_mu[:, None], shape + solved_mu.shape[1:])
        theta_sigma = np.broadcast_to(solved_sigma[:, None], shape + solved_sigma.shape[1:])
        return theta_mu, theta_sigma, state
    mus, sigmas = [], []
    for t in range(config.horizon):
        step_mu, step_sigma = aru_local_params(state)
        mus.append(step_mu)
        sigmas.append(step_sigma)
        m, _ = predict_from_params(step_mu, step_sigma, h[:, t])
        state = aru_update(state, h[:, t], targets[:, t], prediction=m)
    return np.stack(mus, axis=1), np.stack(sigmas, axis=1), state


def forward_batch(
    config: ModelConfig,
    params: ModelParams,
    batch: WindowBatch,
    states: Optional[AruState] = None,
    mode: Mode = Mode.INFER,
    local_override: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> ForwardResult:
    """Forecast the decoder span of every window in a batch.

    In train mode the ARU heads predict each decoder step from the current state and
    only then absorb that step's target (predict, emit, update). In infer mode the
    state is only read.

    :param config:
    :param params:
    :param batch:
    :param states: batched ARU states, one per window. Zero states are used when None.
        Ignored by the baseline head.
    :param mode:
    :param local_override: local parameters ``(theta_mu, theta_sigma)`` with shapes
        ``(B, K, J, H + 1)`` and ``(B, K, J)`` used in place of the ones solved from the
        state. The gradient checker uses this to hold them fixed while perturbing.
    :return:
    :raises MissingTargetsError: if targets required by the mode are not finite
    """
    if batch.encoder_length != config.encoder_length or batch.horizon != config.horizon:
        raise ShapeMismatchError(
            f"model expects windows of ({config.encoder_length}, {config.horizon}) steps, "
            f"got ({batch.encoder_length}, {batch.horizon})"
        )
    if not np.all(np.isfinite(batch.encoder_targets)):
        raise MissingTargetsError("every encoder step needs a finite target")
    if mode is Mode.TRAIN and not batch.has_targets:
        raise MissingTargetsError("train mode needs finite targets for every decoder step")

    e = config.encoder_length
    v = embed_inputs(params, config.schema, batch.categorical, batch.continuous)
    encoder = encoder_trace(params, batch.encoder_targets, v[:, :e])
    decoder = decoder_trace(params, encoder.final[:, None, :], v[:, e:])
    h = decoder.out

    if config.head is Head.BASELINE:
        mu_out = _dense(params, "head.mu", h)
        sigma_out = _dense(params, "head.sigma", h)
        cache = ForwardCache(
            head=config.head,
            mode=mode,
            v=v,
            encoder=encoder,
            decoder=decoder,
            mu_out=mu_out,
            sigma_out=sigma_out,
        )
        forecast = Forecast(mu=mu_out.pre[..., 0], sigma=softplus(sigma_out.pre[..., 0]))
        return ForwardResult(forecast=forecast, states=states, cache=cache)

    state = _check_states(config, states, len(batch))
    targets = batch.decoder_targets if mode is Mode.TRAIN else None
    theta_mu, theta_sigma, state = _solve_local_params(config, state, h, targets)
    if local_override is not None:
        theta_mu, theta_sigma = local_override
    m, a = predict_from_params(theta_mu, theta_sigma, h)

    if config.head is Head.ARU_DIRECT:
        cache = ForwardCache(
            head=config.head,
            mode=mode,
            v=v,
            encoder=encoder,
            decoder=decoder,
            theta_mu=theta_mu,
            theta_sigma=theta_sigma,
        )
        sigma = np.sqrt(np.maximum(a[..., 0], config.direct_variance_floor))
        return ForwardResult(
            forecast=Forecast(mu=m[..., 0], sigma=sigma, m=m, a=a), states=state, cache=cache
        )

    ff2 = ff2_trace(params, h, m, a)
    mu_out = _dense(params, "head.mu", ff2.mu_layers[1].out)
    sigma_out = _dense(params, "head.sigma", ff2.sigma_layers[1].out)
    cache = ForwardCache(
        head=config.head,
        mode=mode,
        v=v,
        encoder=encoder,
        decoder=decoder,
        mu_out=mu_out,
        sigma_out=sigma_out,
        ff2=ff2,
        theta_mu=theta_mu,
        theta_sigma=theta_sigma,
    )
    forecast = Forecast(mu=mu_out.pre[..., 0], sigma=softplus(sigma_out.pre[..., 0]), m=m, a=a)
    return ForwardResult(forecast=forecast, states=state, cache=cache)


def forward_window(
    config: ModelConfig,
    params: ModelParams,
    window: WindowSample,
    state: Optional[AruState] = None,
    mode: Mode = Mode.INFER,
) -> tuple[Forecast, Optional[AruState]]:
    """:func:`forward_batch` for a single window and a single series state."""
    batch = WindowBatch.from_windows([window])
    states = stack_states([state]) if state is not None else None
    result = forward_batch(config, params, batch, states, mode)
    f = result.forecast
    forecast = Forecast(
        mu=f.mu[0],
        sigma=f.sigma[0],
        m=None if f.m is None else f.m[0],
        a=None if f.a is None else f.a[0],
    )
    new_state = unstack_states(result.states)[0] if result.states is not None else None
    return forecast, new_state


class ForecastModel:
    """A model configuration together with its global parameters."""

    def __init__(self, config: ModelConfig, params: Optional[ModelParams] = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        self.params.check_shapes(config)

    @property
    def head(self) -> Head:
        return self.config.head

    def forward(
        self, batch: WindowBatch, states: Optional[AruState] = None, mode: Mode = Mode.INFER
    ) -> tuple[Forecast, Optional[AruState]]:
        result = forward_batch(self.config, self.params, batch, states, mode)
        return result.forecast, result.states

    def encode(self, batch: WindowBatch) -> np.ndarray:
        """Encoder state ``g`` of every window, shape ``(B, R)``."""
        e = self.config.encoder_length
        v = embed_inputs(
            self.params, self.config.schema, batch.categorical[:, :e], batch.continuous[:, :e]
        )
        return encoder_trace(self.params, batch.encoder_targets, v).final

    def decode(self, g: np.ndarray, categorical: np.ndarray, continuous: np.ndarray) -> np.ndarray:
        """Decoder outputs for arbitrary steps under the encoder context ``g``.

        :param g: shape ``(B, R)``
        :param categorical: shape ``(B, N, n_categorical)``
        :param continuous: shape ``(B, N, n_continuous)``
        :return: h with shape ``(B, N, H)``
        """
        v = embed_inputs(self.params, self.config.schema, categorical, continuous)
        return decode_step(self.params, g[:, None, :], v)

    def adapt(self, state: AruState, h: np.ndarray, y: np.ndarray) -> AruState:
        """Absorb observations in step order.

        :param state: batched states with batch shape ``(B,)``, or a single state when
            ``h`` has no batch axis
        :param h: shape ``(B, N, H)`` or ``(N, H)``
        :param y: shape ``(B, N)`` or ``(N,)``
        :return:
        """
        for t in range(h.shape[-2]):
            state = aru_update(state, h[..., t, :], y[..., t])
        return state

    def build_state(self, windows: Sequence[WindowSample]) -> AruState:
        """ARU state of one series after replaying the decoder spans of its windows in
        chronological order.

        :param windows: windows of one series, ordered by start and with targets
        :return:
        """
        if self.config.aru is None:
            raise ValueError(f"the {self.config.head.name} head has no ARU state")
        state = aru_init(self.config.aru)
        if len(windows) == 0:
            return state
        batch = WindowBatch.from_windows(windows)
        if not batch.has_targets:
            raise MissingTargetsError("state replay needs the targets of every decoder step")
        h = self.decode(
            self.encode(batch),
            batch.categorical[:, self.config.encoder_length :],
            batch.continuous[:, self.config.encoder_length :],
        )
        return self.adapt(
            state,
            h.reshape(-1, self.config.hidden_size),
            batch.decoder_targets.reshape(-1),
        )
