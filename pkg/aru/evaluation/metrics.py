import numpy as np


class MetricUndefinedError(ValueError):
    pass


def _pair(truth: np.ndarray, predictions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(truth, dtype=np.float64).ravel()
    y_hat = np.asarray(predictions, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise ValueError(f"truth has {y.size} values but predictions have {y_hat.size}")
    if y.size == 0:
        raise MetricUndefinedError("no values to score")
    return y, y_hat


def nd_metric(truth: np.ndarray, predictions: np.ndarray) -> float:
    """Normalized deviation ``sum|y - y_hat| / sum|y|``, pooled over every value.

    :raises MetricUndefinedError: if the input is empty or the truth is all zero
    """
    y, y_hat = _pair(truth, predictions)
    denominator = np.sum(np.abs(y))
    if denominator == 0.0:
        raise MetricUndefinedError("normalized deviation is undefined for an all-zero truth")
    return float(np.sum(np.abs(y - y_hat)) / denominator)


def rmse_metric(truth: np.ndarray, predictions: np.ndarray) -> float:
    y, y_hat = _pair(truth, predictions)
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))
