"""Choice of the ARU aging factors and ridge by validation NLL.

Every candidate trains a fresh model from the same seed, so the candidates differ only
in their ARU settings.
"""

import dataclasses
import logging
import shutil
from dataclasses import dataclass
from typing import Any, Optional

from pydantic import BaseModel, Field

from aru.adaptive import AruConfig
from aru.model.config import ModelConfig
from aru.model.forecaster import ForecastModel
from aru.preprocessing.dataset import PreparedData
from aru.training.train import BEST_CHECKPOINT, EPOCH_LOG, LAST_CHECKPOINT, TrainConfig, Trainer
from aru.training.windows import training_windows, validation_windows
from aru.utils.utils import PathLike, as_path

logger = logging.getLogger(__name__)

SELECTION_DIR = "selection"
SELECTION_TABLE = "selection.tsv"
#: checkpoint metadata key holding the chosen ARU configuration
SELECTED_ARU = "selected_aru"


class SelectionConfig(BaseModel):
    aging_factor_sets: list[list[float]] = Field(
        default_factory=lambda: [[1.0], [0.99], [1.0, 0.95, 0.9]]
    )
    ridges: list[float] = Field(default_factory=lambda: [0.1, 1.0, 10.0])


@dataclass(frozen=True)
class Candidate:
    aging_factors: tuple[float, ...]
    ridge: float

    @property
    def name(self) -> str:
        alphas = "-".join(f"{a:g}" for a in self.aging_factors)
        return f"alpha{alphas}_ridge{self.ridge:g}"

    def apply(self, config: ModelConfig) -> ModelConfig:
        """``config`` with this candidate's ARU settings."""
        if config.aru is None:
            raise ValueError(f"the {config.head.name} head has no ARU to configure")
        aru = dataclasses.replace(config.aru, aging_factors=self.aging_factors, ridge=self.ridge)
        return dataclasses.replace(config, aru=aru)


@dataclass(frozen=True)
class SelectionRow:
    candidate: Candidate
    validation_nll: float

    HEADER = "aging_factors\tridge\tvalidation_nll"

    def to_tsv(self) -> str:
        alphas = ",".join(f"{a:g}" for a in self.candidate.aging_factors)
        return f"{alphas}\t{self.candidate.ridge:g}\t{self.validation_nll:.6f}"


@dataclass(frozen=True)
class SelectionResult:
    rows: list[SelectionRow]
    best: SelectionRow
    #: the model configuration of the winning candidate
    config: ModelConfig
    path: str


def candidates(grid: SelectionConfig) -> list[Candidate]:
    if not grid.aging_factor_sets or not grid.ridges:
        raise ValueError("the selection grid needs at least one aging factor set and ridge")
    return [
        Candidate(aging_factors=tuple(float(a) for a in alphas), ridge=float(ridge))
        for alphas in grid.aging_factor_sets
        for ridge in grid.ridges
    ]


def selected_aru(metadata: dict[str, Any]) -> Optional[AruConfig]:
    """The ARU configuration recorded by :func:`select_aru`, if any."""
    record = metadata.get(SELECTED_ARU)
    return None if record is None else AruConfig(**record)


def select_aru(
    config: ModelConfig,
    train_config: TrainConfig,
    data: PreparedData,
    grid: SelectionConfig,
    output_dir: PathLike,
    metadata: Optional[dict[str, Any]] = None,
) -> SelectionResult:
    """Train one model per (aging factor set, ridge) pair and keep the one with the
    lowest validation NLL.

    Candidates train under ``output_dir/selection/<name>``. The winner's checkpoints
    and epoch log are copied to ``output_dir``; every candidate records its ARU
    configuration in the checkpoint metadata.

    :param config: the model to train, its ARU settings are replaced per candidate
    :param train_config:
    :param data:
    :param grid:
    :param output_dir:
    :param metadata: stored in every checkpoint
    :return:
    :raises ValueError: for a baseline model, or data without validation windows
    :raises TrainingDivergedError: if a candidate diverges
    """
    if not config.uses_aru:
        raise ValueError("only ARU heads have aging factors and a ridge to select")
    train = training_windows(data, train_config.stride)
    validation = validation_windows(data)
    if not validation:
        raise ValueError("selecting the ARU settings needs validation windows")
    output_dir = as_path(output_dir)
    rows: list[SelectionRow] = []
    configs: dict[Candidate, ModelConfig] = {}
    for candidate in candidates(grid):
        candidate_config = candidate.apply(config)
        assert candidate_config.aru is not None
        trainer = Trainer(
            ForecastModel(candidate_config, seed=train_config.seed),
            train_config,
            output_dir=output_dir / SELECTION_DIR / candidate.name,
            metadata={**(metadata or {}), SELECTED_ARU: candidate_config.aru.to_dict()},
        )
        trainer.fit(train, validation, data.series)
        assert trainer.best_validation_nll is not None
        rows.append(SelectionRow(candidate, trainer.best_validation_nll))
        configs[candidate] = candidate_config
        logger.info(
            "candidate %s: validation nll %.6f", candidate.name, trainer.best_validation_nll
        )
    best = min(rows, key=lambda row: row.validation_nll)
    logger.info("selected %s", best.candidate.name)

    path = output_dir / SELECTION_TABLE
    with open(path, "w", encoding="utf-8") as f:
        f.write(SelectionRow.HEADER + "\n")
        for row in rows:
            f.write(row.to_tsv() + "\n")
    winner_dir = output_dir / SELECTION_DIR / best.candidate.name
    for name in (BEST_CHECKPOINT, LAST_CHECKPOINT, EPOCH_LOG):
        shutil.copyfile(winner_dir / name, output_dir / name)
    return SelectionResult(rows=rows, best=best, config=configs[best.candidate], path=str(path))
