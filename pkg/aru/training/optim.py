import logging
from dataclasses import dataclass

import numpy as np

from aru.model.params import ModelParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamState:
    """Bias-corrected Adam moments, shaped like the parameters they belong to."""

    first_moment: ModelParams
    second_moment: ModelParams
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def zeros_like(params: ModelParams) -> "AdamState":
        return AdamState(first_moment=params.zeros_like(), second_moment=params.zeros_like())


def adam_step(
    params: ModelParams, grads: ModelParams, adam: AdamState, lr: float
) -> tuple[ModelParams, AdamState]:
    """One Adam update. Neither the parameters nor the state passed in are modified.

    :param params:
    :param grads: shaped like params
    :param adam:
    :param lr:
    :return: the updated parameters and optimizer state
    """
    if params.names() != grads.names():
        raise ValueError("gradients do not match the parameters")
    t = adam.step + 1
    correction1 = 1.0 - adam.beta1**t
    correction2 = 1.0 - adam.beta2**t
    new_params: dict[str, np.ndarray] = {}
    first: dict[str, np.ndarray] = {}
    second: dict[str, np.ndarray] = {}
    for name, value in params.items():
        g = grads[name]
        if g.shape != value.shape:
            raise ValueError(f"gradient of {name} has shape {g.shape}, expected {value.shape}")
        m = adam.beta1 * adam.first_moment[name] + (1.0 - adam.beta1) * g
        v = adam.beta2 * adam.second_moment[name] + (1.0 - adam.beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[name] = value - lr * m_hat / (np.sqrt(v_hat) + adam.eps)
        first[name] = m
        second[name] = v
    return ModelParams(new_params), AdamState(
        first_moment=ModelParams(first),
        second_moment=ModelParams(second),
        step=t,
        beta1=adam.beta1,
        beta2=adam.beta2,
        eps=adam.eps,
    )


def clip_by_global_norm(grads: ModelParams, max_norm: float) -> tuple[ModelParams, float]:
    """Rescale all gradients together so their global norm is at most ``max_norm``.

    :return: the clipped gradients and the norm before clipping
    """
    norm = grads.global_norm()
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return ModelParams({name: g * scale for name, g in grads.items()}), norm
