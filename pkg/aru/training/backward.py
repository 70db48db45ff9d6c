"""Hand-written reverse pass of :func:`aru.model.forecaster.forward_batch`.

The ARU statistics are treated as constants: no gradient flows into the updates of
earlier steps. What remains is the dependence of the local mean
``m = theta_mu . [h 1]`` on the *current* ``h`` with ``theta_mu`` fixed, which can be
switched off with ``differentiate_local_mean=False``. The local variance ``a`` carries
no gradient.
"""

import logging
from typing import Optional

import numpy as np
from scipy.special import expit

from aru.adaptive import AruState
from aru.data.data import Head, Mode, WindowBatch
from aru.model.config import ModelConfig
from aru.model.forecaster import ForwardResult, LayerTrace, forward_batch
from aru.model.params import ModelParams
from aru.training.loss import nll_gradients, nll_loss

logger = logging.getLogger(__name__)


class NonFiniteGradientError(ArithmeticError):
    def __init__(self, blocks: list[str]):
        self.blocks = blocks
        super().__init__(f"non-finite gradients in parameter blocks {blocks}")


def _dense_backward(
    params: ModelParams, grads: ModelParams, prefix: str, trace: LayerTrace, d_pre: np.ndarray
) -> np.ndarray:
    """Accumulate weight and bias gradients of one affine layer and return the
    gradient with respect to its input."""
    weight = params[f"{prefix}.weight"]
    flat_in = trace.inputs.reshape(-1, trace.inputs.shape[-1])
    flat_d = d_pre.reshape(-1, d_pre.shape[-1])
    grads[f"{prefix}.weight"] += flat_d.T @ flat_in
    grads[f"{prefix}.bias"] += flat_d.sum(axis=0)
    result: np.ndarray = d_pre @ weight
    return result


def _relu_backward(
    params: ModelParams, grads: ModelParams, prefix: str, trace: LayerTrace, d_out: np.ndarray
) -> np.ndarray:
    return _dense_backward(params, grads, prefix, trace, d_out * (trace.pre > 0.0))


def backward(
    config: ModelConfig,
    params: ModelParams,
    batch: WindowBatch,
    result: ForwardResult,
    differentiate_local_mean: bool = True,
) -> ModelParams:
    """Gradients of the mean batch NLL with respect to every parameter.

    :param config:
    :param params: the parameters the forward pass ran with
    :param batch: the batch the forward pass ran on, with decoder targets
    :param result: the recorded forward pass
    :param differentiate_local_mean:
    :return: gradients, named and shaped like params
    :raises NonFiniteGradientError:
    """
    cache = result.cache
    d_mu, d_sigma = nll_gradients(result.forecast, batch.decoder_targets)
    grads = params.zeros_like()
    h = cache.h
    hidden = config.hidden_size
    d_h = np.zeros_like(h)
    d_m: Optional[np.ndarray] = None

    if cache.head is Head.ARU_DIRECT:
        d_m = np.zeros(h.shape[:-1] + (config.n_banks,))
        d_m[..., 0] = d_mu
    else:
        assert cache.mu_out is not None and cache.sigma_out is not None
        d_sigma_pre = d_sigma * expit(cache.sigma_out.pre[..., 0])
        d_mu_in = _dense_backward(params, grads, "head.mu", cache.mu_out, d_mu[..., None])
        d_sigma_in = _dense_backward(
            params, grads, "head.sigma", cache.sigma_out, d_sigma_pre[..., None]
        )
        if cache.head is Head.BASELINE:
            d_h += d_mu_in + d_sigma_in
        else:
            assert cache.ff2 is not None
            mu_first, mu_second = cache.ff2.mu_layers
            d = _relu_backward(params, grads, "ff2.mu.1", mu_second, d_mu_in)
            d = _relu_backward(params, grads, "ff2.mu.0", mu_first, d)
            d_h += d[..., :hidden]
            d_m = d[..., hidden:]
            sigma_first, sigma_second = cache.ff2.sigma_layers
            d = _relu_backward(params, grads, "ff2.sigma.1", sigma_second, d_sigma_in)
            d = _relu_backward(params, grads, "ff2.sigma.0", sigma_first, d)
            d_h += d[..., :hidden]

    if d_m is not None and differentiate_local_mean:
        assert cache.theta_mu is not None
        d_h += np.einsum("bkj,bkjd->bkd", d_m, cache.theta_mu)[..., :hidden]

    first, second, third = cache.decoder.layers
    d = _relu_backward(params, grads, "decoder.2", third, d_h)
    d = _relu_backward(params, grads, "decoder.1", second, d)
    h0 = config.hidden_sizes[0]
    d_v_dec = d[..., h0:]
    d = _relu_backward(params, grads, "decoder.0", first, d[..., :h0])
    units = config.rnn_units
    # g is shared by every decoder step
    d_g = d[..., :units].sum(axis=1)
    d_v_dec = d_v_dec + d[..., units:]

    encoder = cache.encoder
    weight = params["encoder.weight"]
    d_v_enc = np.zeros((len(batch), config.encoder_length, config.schema.input_width))
    for t in reversed(range(config.encoder_length)):
        g_t = encoder.states[:, t]
        d_pre = d_g * (1.0 - g_t * g_t)
        grads["encoder.weight"] += d_pre.T @ encoder.inputs[:, t]
        grads["encoder.bias"] += d_pre.sum(axis=0)
        d_u = d_pre @ weight
        d_g = d_u[:, :units]
        d_v_enc[:, t] = d_u[:, units + 1 :]

    d_v = np.concatenate([d_v_enc, d_v_dec], axis=1)
    offset = 0
    for i, feature in enumerate(config.schema.categorical):
        dim = feature.embedding_dim
        np.add.at(
            grads[f"embedding.{feature.name}"],
            batch.categorical[..., i].reshape(-1),
            d_v[..., offset : offset + dim].reshape(-1, dim),
        )
        offset += dim

    bad = grads.non_finite_blocks()
    if bad:
        raise NonFiniteGradientError(bad)
    return grads


def loss_and_gradients(
    config: ModelConfig,
    params: ModelParams,
    batch: WindowBatch,
    states: Optional[AruState] = None,
    mode: Mode = Mode.TRAIN,
    differentiate_local_mean: bool = True,
) -> tuple[float, ModelParams, ForwardResult]:
    result = forward_batch(config, params, batch, states, mode)
    loss = nll_loss(result.forecast, batch.decoder_targets)
    grads = backward(config, params, batch, result, differentiate_local_mean)
    return loss, grads, result
