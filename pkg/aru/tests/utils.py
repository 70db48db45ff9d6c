from collections.abc import Sequence
from pathlib import Path
from typing import Optional

import numpy as np

from aru.adaptive import AruState, aru_init, aru_update
from aru.data.data import Head, ScalingMode, WindowBatch, WindowSample
from aru.model.config import FeatureSchema, ModelConfig
from aru.preprocessing.scaling import PreparedSeries

CONFIG_DIR = Path(__file__).parent.parent.joinpath("conf")

#: a schema with two categorical features and two continuous ones
TEST_SCHEMA = FeatureSchema.build(
    {"hour_of_day": 24, "store": 5}, ["price", "promo"], max_embedding_dim=3
)


def small_model_config(
    head: Head,
    schema: FeatureSchema = TEST_SCHEMA,
    encoder_length: int = 6,
    horizon: int = 4,
    aging_factors: Sequence[float] = (1.0, 0.9),
    preset: str = "small",
    ridge: float = 1.0,
) -> ModelConfig:
    return ModelConfig.from_preset(
        preset,
        encoder_length,
        horizon,
        schema,
        head=head,
        aging_factors=aging_factors,
        ridge=ridge,
    )


def random_windows(
    config: ModelConfig, n: int, seed: int = 0, series_id: str = "s"
) -> list[WindowSample]:
    rng = np.random.default_rng(seed)
    length = config.encoder_length + config.horizon
    schema = config.schema
    windows = []
    for i in range(n):
        categorical = np.zeros((length, len(schema.categorical)), dtype=np.int64)
        for j, feature in enumerate(schema.categorical):
            categorical[:, j] = rng.integers(0, feature.cardinality, size=length)
        windows.append(
            WindowSample(
                series_id=f"{series_id}{i}",
                start=i,
                y=rng.normal(size=length),
                categorical=categorical,
                continuous=rng.uniform(size=(length, len(schema.continuous))),
                encoder_length=config.encoder_length,
                horizon=config.horizon,
            )
        )
    return windows


def random_batch(config: ModelConfig, n: int, seed: int = 0) -> WindowBatch:
    return WindowBatch.from_windows(random_windows(config, n, seed))


def warm_states(config: ModelConfig, n: int, steps: int = 12, seed: int = 0) -> AruState:
    """Batched non-zero ARU states, as left behind by some history."""
    assert config.aru is not None
    rng = np.random.default_rng(seed)
    state = aru_init(config.aru, (n,))
    for _ in range(steps):
        state = aru_update(
            state, rng.uniform(0.0, 1.0, size=(n, config.aru.feature_dim)), rng.normal(size=n)
        )
    return state


def weighted_ridge_oracle(
    hs: np.ndarray, ys: np.ndarray, alpha: float, ridge: float
) -> tuple[np.ndarray, float]:
    """Direct solution of the exponentially weighted ridge problem over a whole stream,
    and the weighted mean of the prequential squared residuals."""
    t = len(ys)
    x = np.concatenate([hs, np.ones((t, 1))], axis=1)
    weights = alpha ** np.arange(t - 1, -1, -1, dtype=np.float64)
    gram = (x * weights[:, None]).T @ x + ridge * np.eye(x.shape[1])
    theta = np.linalg.solve(gram, (x * weights[:, None]).T @ ys)
    residuals = np.empty(t)
    for i in range(t):
        prefix_w = alpha ** np.arange(i - 1, -1, -1, dtype=np.float64)
        g = (x[:i] * prefix_w[:, None]).T @ x[:i] + ridge * np.eye(x.shape[1])
        theta_i = np.linalg.solve(g, (x[:i] * prefix_w[:, None]).T @ ys[:i])
        residuals[i] = (ys[i] - x[i] @ theta_i) ** 2
    theta_sigma = float(np.sum(weights * residuals) / np.sum(weights))
    return theta, theta_sigma


def prepared_series(
    y: np.ndarray,
    series_id: str = "s",
    n_categorical: int = 0,
    n_continuous: int = 0,
    scale: float = 1.0,
    scaling_mode: ScalingMode = ScalingMode.SERIES,
    timestamps: Optional[np.ndarray] = None,
) -> PreparedSeries:
    t = len(y)
    return PreparedSeries(
        series_id=series_id,
        timestamps=np.arange(t, dtype=np.int64) if timestamps is None else timestamps,
        y=np.asarray(y, dtype=np.float64),
        categorical=np.zeros((t, n_categorical), dtype=np.int64),
        continuous=np.zeros((t, n_continuous)),
        scale=scale,
        scaling_mode=scaling_mode,
    )
