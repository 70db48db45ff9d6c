"""The Adaptive Recurrent Unit.

An ARU keeps, per series, ``J`` banks of sufficient statistics of a local ridge
regression of the target ``y`` on the decoder output ``h``, each bank aged by its own
factor ``alpha_j``. It has two modes: *adapt* (:func:`aru_update`, fed ``h`` and the
realised ``y``) and *predict* (:func:`aru_predict`, closed form local mean and
variance). The state size does not depend on the length of the stream.

All operations accept statistics with an arbitrary leading batch shape, so a batch of
windows from different series can be adapted with one vectorised call. A state for a
single series simply has an empty batch shape.
"""

import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from aru.linalg import ShapeMismatchError, axpy_matrix, outer, spd_solve_batched
from aru.utils.constants import AGING_FACTOR_GRID
from aru.utils.utils import PathLike

logger = logging.getLogger(__name__)


class AruConfigError(ValueError):
    pass


class AruStateMismatchError(ValueError):
    """Raised when states with different configurations are combined, or a state does
    not fit the decoder it is used with."""

    pass


@dataclass(frozen=True)
class AruConfig:
    #: H, the width of the decoder output fed to the ARU
    feature_dim: int
    #: one aging factor per bank, each in (0, 1]
    aging_factors: tuple[float, ...]
    #: lambda, added to the diagonal at solve time only
    ridge: float = 1.0
    #: sxx is replaced by (sxx + sxx^T) / 2 every this many updates
    resymmetrize_every: int = 1000

    def __post_init__(self) -> None:
        # accept lists/ListConfig from yaml
        object.__setattr__(self, "aging_factors", tuple(float(a) for a in self.aging_factors))
        if self.feature_dim < 1:
            raise AruConfigError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if len(self.aging_factors) == 0:
            raise AruConfigError("at least one aging factor is required")
        for alpha in self.aging_factors:
            if not (0.0 < alpha <= 1.0):
                raise AruConfigError(f"aging factors must lie in (0, 1], got {alpha}")
        if not self.ridge > 0.0:
            raise AruConfigError(f"ridge must be > 0, got {self.ridge}")
        if self.resymmetrize_every < 1:
            raise AruConfigError(
                f"resymmetrize_every must be >= 1, got {self.resymmetrize_every}"
            )
        off_grid = [a for a in self.aging_factors if a not in AGING_FACTOR_GRID]
        if off_grid:
            logger.warning(
                "aging factors %s are outside the usual grid %s", off_grid, AGING_FACTOR_GRID
            )

    @property
    def n_banks(self) -> int:
        return len(self.aging_factors)

    @property
    def dim(self) -> int:
        """Width of the augmented input ``[h 1]``."""
        return self.feature_dim + 1

    @property
    def alphas(self) -> np.ndarray:
        return np.array(self.aging_factors, dtype=np.float64)

    @property
    def state_size(self) -> int:
        """Number of reals held by the state of one series."""
        return self.n_banks * (self.dim**2 + self.dim + 2)

    def to_dict(self) -> dict[str, Any]:
        return {
            "feature_dim": self.feature_dim,
            "aging_factors": list(self.aging_factors),
            "ridge": self.ridge,
            "resymmetrize_every": self.resymmetrize_every,
        }


@dataclass(frozen=True, eq=False)
class AruState:
    """Sufficient statistics ``[sxx, sxy, sn, ss]`` for every bank.

    Shapes, with ``...`` the batch shape, ``J`` the number of banks and ``d = H + 1``:
    ``sxx (..., J, d, d)``, ``sxy (..., J, d)``, ``sn (..., J)``, ``ss (..., J)``,
    ``step_count (...)``.

    States are values: operations return new states and never modify their inputs.
    """

    config: AruConfig
    sxx: np.ndarray
    sxy: np.ndarray
    sn: np.ndarray
    ss: np.ndarray
    step_count: np.ndarray = field(default_factory=lambda: np.zeros((), dtype=np.int64))

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return tuple(self.sn.shape[:-1])

    def equals(self, other: "AruState") -> bool:
        """Bitwise equality of configuration and every statistic."""
        return (
            self.config == other.config
            and np.array_equal(self.sxx, other.sxx)
            and np.array_equal(self.sxy, other.sxy)
            and np.array_equal(self.sn, other.sn)
            and np.array_equal(self.ss, other.ss)
            and np.array_equal(self.step_count, other.step_count)
        )

    def to_dict(self) -> dict[str, Any]:
        """Flat record: config header, then the banks in order with ``sxx`` row-major."""
        if self.batch_shape != ():
            raise ValueError("only the state of a single series can be serialised")
        return {
            "config": self.config.to_dict(),
            "step_count": int(self.step_count),
            "banks": [
                {
                    "alpha": alpha,
                    "sxx": self.sxx[j].ravel(order="C").tolist(),
                    "sxy": self.sxy[j].tolist(),
                    "sn": float(self.sn[j]),
                    "ss": float(self.ss[j]),
                }
                for j, alpha in enumerate(self.config.aging_factors)
            ],
        }

    @staticmethod
    def from_dict(record: Mapping[str, Any]) -> "AruState":
        config = AruConfig(**record["config"])
        banks = record["banks"]
        if len(banks) != config.n_banks:
            raise AruStateMismatchError(
                f"record holds {len(banks)} banks but its config declares {config.n_banks}"
            )
        d = config.dim
        return AruState(
            config=config,
            sxx=np.array([np.reshape(b["sxx"], (d, d)) for b in banks], dtype=np.float64),
            sxy=np.array([b["sxy"] for b in banks], dtype=np.float64),
            sn=np.array([b["sn"] for b in banks], dtype=np.float64),
            ss=np.array([b["ss"] for b in banks], dtype=np.float64),
            step_count=np.array(record["step_count"], dtype=np.int64),
        )


def aru_init(config: AruConfig, batch_shape: tuple[int, ...] = ()) -> AruState:
    """All statistics zero, step count zero."""
    j, d = config.n_banks, config.dim
    return AruState(
        config=config,
        sxx=np.zeros(batch_shape + (j, d, d)),
        sxy=np.zeros(batch_shape + (j, d)),
        sn=np.zeros(batch_shape + (j,)),
        ss=np.zeros(batch_shape + (j,)),
        step_count=np.zeros(batch_shape, dtype=np.int64),
    )


def augment(h: np.ndarray) -> np.ndarray:
    """``[h 1]``"""
    return np.concatenate([h, np.ones(h.shape[:-1] + (1,))], axis=-1)


def _check_input(state: AruState, h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    expected = state.batch_shape + (state.config.feature_dim,)
    if h.shape != expected:
        raise ShapeMismatchError(f"expected h of shape {expected}, got {h.shape}")
    return h


def aru_local_params(state: AruState) -> tuple[np.ndarray, np.ndarray]:
    """Closed form local parameters of every bank.

    ``theta_mu = (sxx + lambda I)^-1 sxy`` and ``theta_sigma = ss / sn`` (0 where
    ``sn`` is 0).

    :param state:
    :return: theta_mu with shape ``(..., J, d)`` and theta_sigma with shape ``(..., J)``
    :raises NotPositiveDefiniteError: propagated from the solver
    """
    d = state.config.dim
    regularised = state.sxx + state.config.ridge * np.eye(d)
    theta_mu = spd_solve_batched(regularised, state.sxy)
    theta_sigma = np.divide(
        state.ss, state.sn, out=np.zeros_like(state.ss), where=state.sn > 0.0
    )
    return theta_mu, theta_sigma


def predict_from_params(
    theta_mu: np.ndarray, theta_sigma: np.ndarray, h: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Local mean and variance from already solved parameters.

    Leading shapes of ``theta_mu (..., J, d)`` and ``h (..., H)`` broadcast, so one
    solve can serve every step of a horizon.

    :return: m and a, both ``(..., J)``
    """
    m = np.einsum("...jd,...d->...j", theta_mu, augment(h))
    a = np.broadcast_to(theta_sigma, m.shape).copy()
    return m, a


def aru_predict(state: AruState, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Predict mode: ``m_j = theta_mu_j . [h 1]``, ``a_j = theta_sigma_j``.

    Does not modify the state.

    :param state:
    :param h: shape ``(..., H)`` matching the state's batch shape
    :return: m and a, both ``(..., J)``
    """
    h = _check_input(state, h)
    theta_mu, theta_sigma = aru_local_params(state)
    return predict_from_params(theta_mu, theta_sigma, h)


def aru_update(
    state: AruState, h: np.ndarray, y: np.ndarray, prediction: Optional[np.ndarray] = None
) -> AruState:
    """Adapt mode: age every bank and absorb the observation ``(h, y)``.

    The residual accumulated into ``ss`` is prequential: it is measured against the
    prediction of the state *before* this observation is absorbed.

    :param state:
    :param h: shape ``(..., H)``
    :param y: shape ``(...)``
    :param prediction: the local means ``m`` of ``h`` under ``state``, shape ``(..., J)``,
        when the caller has already solved for them
    :return: the new state
    """
    h = _check_input(state, h)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != state.batch_shape:
        raise ShapeMismatchError(f"expected y of shape {state.batch_shape}, got {y.shape}")
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(y))):
        raise ValueError("ARU inputs must be finite")

    if prediction is None:
        m_before, _ = aru_predict(state, h)
    else:
        m_before = np.asarray(prediction, dtype=np.float64)
        expected = state.batch_shape + (state.config.n_banks,)
        if m_before.shape != expected:
            raise ShapeMismatchError(
                f"expected a prediction of shape {expected}, got {m_before.shape}"
            )
    x = augment(h)
    xx = outer(x)
    xy = x * y[..., None]

    sxx = np.empty_like(state.sxx)
    sxy = np.empty_like(state.sxy)
    for j, alpha in enumerate(state.config.aging_factors):
        sxx[..., j, :, :] = axpy_matrix(alpha, state.sxx[..., j, :, :], xx)
        sxy[..., j, :] = alpha * state.sxy[..., j, :] + xy
    alphas = state.config.alphas
    sn = alphas * state.sn + 1.0
    ss = alphas * state.ss + (y[..., None] - m_before) ** 2
    step_count = state.step_count + 1

    due = (step_count % state.config.resymmetrize_every) == 0
    if np.any(due):
        symmetric = 0.5 * (sxx + np.swapaxes(sxx, -1, -2))
        sxx = np.where(due[..., None, None, None], symmetric, sxx)

    return AruState(config=state.config, sxx=sxx, sxy=sxy, sn=sn, ss=ss, step_count=step_count)


def stack_states(states: Sequence[AruState]) -> AruState:
    """Stack single-series states into one state with batch shape ``(len(states),)``."""
    if len(states) == 0:
        raise ValueError("cannot stack zero states")
    config = states[0].config
    for s in states:
        if s.config != config:
            raise AruStateMismatchError(f"cannot stack states with configs {config} and {s.config}")
        if s.batch_shape != ():
            raise AruStateMismatchError("only single-series states can be stacked")
    return AruState(
        config=config,
        sxx=np.stack([s.sxx for s in states]),
        sxy=np.stack([s.sxy for s in states]),
        sn=np.stack([s.sn for s in states]),
        ss=np.stack([s.ss for s in states]),
        step_count=np.stack([s.step_count for s in states]),
    )


def unstack_states(state: AruState) -> list[AruState]:
    if len(state.batch_shape) != 1:
        raise AruStateMismatchError(
            f"can only unstack a state with one batch axis, got {state.batch_shape}"
        )
    return [
        AruState(
            config=state.config,
            sxx=state.sxx[i].copy(),
            sxy=state.sxy[i].copy(),
            sn=state.sn[i].copy(),
            ss=state.ss[i].copy(),
            step_count=state.step_count[i].copy(),
        )
        for i in range(state.batch_shape[0])
    ]


def save_states(states: Mapping[str, AruState], path: PathLike) -> None:
    """Checkpoint per-series states of a streaming deployment as json."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump({sid: s.to_dict() for sid, s in states.items()}, f)
        f.write("\n")


def load_states(path: PathLike) -> dict[str, AruState]:
    with open(path, encoding="utf-8") as f:
        records = json.load(f)
    return {sid: AruState.from_dict(record) for sid, record in records.items()}
