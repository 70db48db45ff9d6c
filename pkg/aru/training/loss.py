import math

import numpy as np

from aru.data.data import Forecast

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class NonFiniteLossError(ArithmeticError):
    pass


def _check(mu: np.ndarray, sigma: np.ndarray, targets: np.ndarray) -> None:
    if mu.shape != targets.shape or sigma.shape != targets.shape:
        raise ValueError(
            f"forecast of shape {mu.shape} does not match targets of shape {targets.shape}"
        )
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise NonFiniteLossError("forecast contains non-finite values")
    if not np.all(np.isfinite(targets)):
        raise NonFiniteLossError("targets contain non-finite values")
    if np.any(sigma <= 0.0):
        raise ValueError("sigma must be strictly positive")


def gaussian_nll(mu: np.ndarray, sigma: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Elementwise ``1/2 log(2 pi sigma^2) + (y - mu)^2 / (2 sigma^2)``."""
    z = (targets - mu) / sigma
    return HALF_LOG_2PI + np.log(sigma) + 0.5 * z * z


def nll_loss(forecast: Forecast, targets: np.ndarray) -> float:
    """Gaussian negative log likelihood averaged over horizon steps and windows.

    :param forecast:
    :param targets: shaped like ``forecast.mu``
    :return:
    :raises NonFiniteLossError:
    """
    targets = np.asarray(targets, dtype=np.float64)
    _check(forecast.mu, forecast.sigma, targets)
    loss = float(np.mean(gaussian_nll(forecast.mu, forecast.sigma, targets)))
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"loss evaluated to {loss}")
    return loss


def nll_gradients(forecast: Forecast, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of :func:`nll_loss` with respect to ``mu`` and ``sigma``."""
    targets = np.asarray(targets, dtype=np.float64)
    _check(forecast.mu, forecast.sigma, targets)
    n = targets.size
    residual = targets - forecast.mu
    inv_var = 1.0 / (forecast.sigma * forecast.sigma)
    d_mu = -residual * inv_var / n
    d_sigma = (1.0 / forecast.sigma - residual * residual * inv_var / forecast.sigma) / n
    return d_mu, d_sigma
