import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from aru.adaptive import AruState
from aru.data.data import Mode, WindowBatch
from aru.model.config import ModelConfig
from aru.model.forecaster import ForwardCache, forward_batch
from aru.model.params import ModelParams
from aru.training.backward import backward
from aru.training.loss import nll_loss
from aru.utils.utils import rng_for

logger = logging.getLogger(__name__)

#: denominators of relative errors never drop below this
ABSOLUTE_FLOOR = 1e-4
#: a step that moves a ReLU pre-activation across zero is divided by this
STEP_SHRINK = 10.0


@dataclass(frozen=True)
class GradCheckReport:
    #: parameter block name to the largest relative error over its checked coordinates
    errors: dict[str, float]
    tolerance: float
    #: per block, coordinates left out because every step tried crossed a ReLU kink
    skipped: dict[str, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(err <= self.tolerance for err in self.errors.values())

    @property
    def failed_blocks(self) -> list[str]:
        return [name for name, err in self.errors.items() if err > self.tolerance]

    def __str__(self) -> str:
        width = max((len(name) for name in self.errors), default=0)
        lines = [
            f"{name:<{width}}  {err:.3e}  {'ok' if err <= self.tolerance else 'FAIL'}"
            + (f"  ({self.skipped[name]} skipped)" if self.skipped.get(name) else "")
            for name, err in self.errors.items()
        ]
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ABSOLUTE_FLOOR)
    result: np.ndarray = np.abs(analytic - numeric) / denominator
    return result


def relu_signs(cache: ForwardCache) -> np.ndarray:
    """Which ReLU pre-activations of a forward pass are positive, flattened."""
    layers = list(cache.decoder.layers)
    if cache.ff2 is not None:
        layers += [*cache.ff2.mu_layers, *cache.ff2.sigma_layers]
    return np.concatenate([(layer.pre > 0.0).reshape(-1) for layer in layers])


def grad_check(
    config: ModelConfig,
    params: ModelParams,
    batch: WindowBatch,
    states: Optional[AruState] = None,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    min_step: float = 1e-8,
    mode: Mode = Mode.TRAIN,
    differentiate_local_mean: bool = True,
    gradients: Optional[ModelParams] = None,
    max_coordinates: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients with central differences, block by block.

    The local parameters each decoder step solved in the unperturbed forward pass are
    held fixed while perturbing, so the finite-difference objective is the loss under
    the stop-gradient policy of :func:`aru.training.backward.backward`.

    A central difference whose perturbation moves any ReLU pre-activation across zero
    measures a one-sided slope. The step of such a coordinate shrinks until no
    pre-activation changes sign; a coordinate still crossing a kink at ``min_step`` is
    skipped and counted in :attr:`GradCheckReport.skipped`.

    :param config:
    :param params:
    :param batch: windows with decoder targets
    :param states: initial ARU states of the windows, zero when None
    :param tolerance:
    :param step: initial finite-difference step
    :param min_step: smallest step tried before a coordinate is skipped
    :param mode:
    :param differentiate_local_mean: must match the policy the analytic gradients used
    :param gradients: analytic gradients to check. Computed by :func:`backward` when None.
    :param max_coordinates: check at most this many randomly chosen coordinates per block
    :param seed: seeds the coordinate choice
    :return:
    """
    if config.uses_aru and not differentiate_local_mean:
        raise ValueError(
            "finite differences always see the local mean move with h; "
            "check with differentiate_local_mean=True"
        )
    if not 0.0 < min_step <= step:
        raise ValueError(f"need 0 < min_step <= step, got {min_step} and {step}")
    result = forward_batch(config, params, batch, states, mode)
    if gradients is None:
        gradients = backward(config, params, batch, result, differentiate_local_mean)
    override = None
    if result.cache.theta_mu is not None and result.cache.theta_sigma is not None:
        override = (result.cache.theta_mu, result.cache.theta_sigma)
    targets = batch.decoder_targets
    signs = relu_signs(result.cache)
    n_steps = int(np.floor(np.log(step / min_step) / np.log(STEP_SHRINK) + 1e-9)) + 1
    steps = step / STEP_SHRINK ** np.arange(n_steps)

    def objective(p: ModelParams) -> tuple[float, bool]:
        perturbed = forward_batch(config, p, batch, states, mode, local_override=override)
        smooth = bool(np.array_equal(relu_signs(perturbed.cache), signs))
        return nll_loss(perturbed.forecast, targets), smooth

    def central_difference(name: str, index: tuple[Any, ...]) -> Optional[float]:
        original = params[name][index]
        shifted = params.copy()
        for h in steps:
            shifted[name][index] = original + h
            plus, plus_smooth = objective(shifted)
            shifted[name][index] = original - h
            minus, minus_smooth = objective(shifted)
            if plus_smooth and minus_smooth:
                return float((plus - minus) / (2.0 * h))
        return None

    rng = rng_for(seed, "grad_check")
    errors: dict[str, float] = {}
    skipped: dict[str, int] = {}
    for name, value in params.items():
        coordinates = np.arange(value.size)
        if max_coordinates is not None and value.size > max_coordinates:
            coordinates = rng.choice(value.size, size=max_coordinates, replace=False)
        checked: list[int] = []
        numeric: list[float] = []
        for flat_index in coordinates:
            slope = central_difference(name, np.unravel_index(flat_index, value.shape))
            if slope is None:
                continue
            checked.append(int(flat_index))
            numeric.append(slope)
        if len(checked) < len(coordinates):
            skipped[name] = len(coordinates) - len(checked)
            logger.debug("%s: skipped %s coordinates at a ReLU kink", name, skipped[name])
        analytic = gradients[name].reshape(-1)[np.asarray(checked, dtype=np.int64)]
        errors[name] = float(np.max(relative_error(analytic, np.asarray(numeric)), initial=0.0))

    report = GradCheckReport(errors=errors, tolerance=tolerance, skipped=skipped)
    if report.passed:
        logger.info("gradient check passed for %s blocks", len(errors))
    else:
        logger.warning("gradient check failed:\n%s", report)
    return report
