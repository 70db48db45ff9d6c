"""Grid of synthetic train and evaluate runs, one row per cell of (series id feature,
gamma, series length, head).

Cells are independent and seeded alike, so they can run in any order or in parallel
ray workers; rows are always merged in grid order.
"""

import logging
import traceback
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, Field
from tqdm import tqdm

from aru.data.data import Head, Protocol
from aru.evaluation.protocols import eval_fixed
from aru.model.checkpoint import load_checkpoint
from aru.model.config import ModelConfig
from aru.model.forecaster import ForecastModel
from aru.preprocessing.dataset import DataConfig, prepare_dataset
from aru.preprocessing.synthetic import DOW_COLUMNS, HOUR_COLUMNS, SynthConfig, synth_generate
from aru.training.train import BEST_CHECKPOINT, TrainConfig, Trainer
from aru.training.windows import training_windows, validation_windows
from aru.utils.utils import PathLike, as_path

logger = logging.getLogger(__name__)

SWEEP_TABLE = "sweep.tsv"
OK = "ok"


class SweepIncompleteError(RuntimeError):
    def __init__(self, failed: int, total: int, path: str):
        self.failed = failed
        super().__init__(f"{failed} of {total} sweep cells failed, see {path}")


class SweepConfig(BaseModel):
    lengths: list[int] = Field(default_factory=lambda: [200, 500, 1000, 2000])
    heads: list[str] = Field(default_factory=lambda: ["baseline", "aru"])
    gammas: list[float] = Field(default_factory=lambda: [20.0])
    with_series_id: list[bool] = Field(default_factory=lambda: [False])
    n_series: int = Field(10, ge=1)
    noise: float = Field(1.0, ge=0)
    preset: str = "medium"
    # decoder widths replacing the preset ones; H = hidden_sizes[2] must span the 31
    # calendar indicators for the local regression to recover each series
    rnn_units: Optional[int] = Field(None, ge=1)
    hidden_sizes: Optional[list[int]] = Field(default_factory=lambda: [64, 48, 32])
    max_embedding_dim: int = Field(8, ge=1)
    encoder_length: int = Field(24, ge=1)
    horizon: int = Field(24, ge=1)
    aging_factors: list[float] = Field(default_factory=lambda: [1.0])
    ridge: float = Field(1.0, gt=0)
    seed: int = 0
    max_parallel: int = Field(1, ge=1)  # more than 1 runs cells in ray workers


@dataclass(frozen=True)
class SweepCell:
    length: int
    head: str
    gamma: float
    with_series_id: bool

    @property
    def name(self) -> str:
        ids = "ids" if self.with_series_id else "noids"
        return f"{self.head}_len{self.length}_gamma{self.gamma:g}_{ids}"


@dataclass(frozen=True)
class SweepRow:
    cell: SweepCell
    rmse: Optional[float]
    nd: Optional[float]
    status: str = OK

    HEADER = "length\thead\tgamma\twith_series_id\trmse\tnd\tstatus"

    def to_tsv(self) -> str:
        rmse = "" if self.rmse is None else f"{self.rmse:.6f}"
        nd = "" if self.nd is None else f"{self.nd:.6f}"
        status = " ".join(self.status.split())
        return (
            f"{self.cell.length}\t{self.cell.head}\t{self.cell.gamma:g}\t"
            f"{str(self.cell.with_series_id).lower()}\t{rmse}\t{nd}\t{status}"
        )


def sweep_grid(config: SweepConfig) -> list[SweepCell]:
    return [
        SweepCell(length=length, head=head, gamma=gamma, with_series_id=with_id)
        for with_id in config.with_series_id
        for gamma in config.gammas
        for length in config.lengths
        for head in config.heads
    ]


def run_cell(
    cell: SweepCell, config: SweepConfig, train_config: TrainConfig, output_dir: PathLike
) -> SweepRow:
    """Generate, train and evaluate one cell. Failures are returned as a row."""
    cell_dir = as_path(output_dir) / cell.name
    try:
        synthetic = synth_generate(
            SynthConfig(
                n_series=config.n_series,
                length=cell.length,
                gamma=cell.gamma,
                noise=config.noise,
                with_series_id=cell.with_series_id,
                seed=config.seed,
            )
        )
        data_config = DataConfig(
            time_features=False,
            categorical_columns=synthetic.categorical_columns,
            continuous_columns=list(HOUR_COLUMNS + DOW_COLUMNS),
            encoder_length=config.encoder_length,
            horizon=config.horizon,
            max_embedding_dim=config.max_embedding_dim,
        )
        data = prepare_dataset(synthetic.dataset, data_config, Protocol.FIXED)
        model_config = ModelConfig.from_preset(
            config.preset,
            config.encoder_length,
            config.horizon,
            data.schema,
            head=Head.from_config(cell.head),
            aging_factors=config.aging_factors,
            ridge=config.ridge,
            rnn_units=config.rnn_units,
            hidden_sizes=config.hidden_sizes,
        )
        trainer = Trainer(
            ForecastModel(model_config, seed=config.seed), train_config, output_dir=cell_dir
        )
        trainer.fit(
            training_windows(data, train_config.stride), validation_windows(data), data.series
        )
        model = load_checkpoint(cell_dir / BEST_CHECKPOINT, expected_config=model_config).model
        report = eval_fixed(model, data, method=cell.head)
    except Exception as e:
        logger.warning("sweep cell %s failed: %s", cell.name, e)
        logger.debug(traceback.format_exc())
        return SweepRow(cell=cell, rmse=None, nd=None, status=f"failed: {e}")
    logger.info("sweep cell %s: RMSE %.4f, ND %.4f", cell.name, report.rmse, report.nd)
    return SweepRow(cell=cell, rmse=report.rmse, nd=report.nd)


def _run_parallel(
    cells: list[SweepCell],
    config: SweepConfig,
    train_config: TrainConfig,
    output_dir: Path,
) -> list[SweepRow]:
    import ray

    ray.init(num_cpus=config.max_parallel, configure_logging=False, log_to_driver=True)
    try:
        remote_cell: Any = ray.remote(num_cpus=1)(run_cell)
        futures = [
            remote_cell.remote(cell, config, train_config, str(output_dir)) for cell in cells
        ]
        rows: list[SweepRow] = ray.get(futures)
    finally:
        ray.shutdown()
    return rows


def run_sweep(
    config: SweepConfig, train_config: TrainConfig, output_dir: PathLike
) -> tuple[list[SweepRow], str]:
    """Run every cell and write the sweep table.

    :return: the rows in grid order and the path of the table
    :raises SweepIncompleteError: after the table is written, if any cell failed
    """
    output_dir = as_path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    cells = sweep_grid(config)
    logger.info("running %s sweep cells", len(cells))
    cell_train_config = train_config.copy(update={"progress_bar": False})
    if config.max_parallel > 1:
        rows = _run_parallel(cells, config, cell_train_config, output_dir)
    else:
        rows = [
            run_cell(cell, config, cell_train_config, output_dir)
            for cell in tqdm(cells, desc="sweep", disable=not train_config.progress_bar)
        ]
    path = output_dir / SWEEP_TABLE
    with open(path, "w", encoding="utf-8") as f:
        f.write(SweepRow.HEADER + "\n")
        for row in rows:
            f.write(row.to_tsv() + "\n")
    logger.info("wrote %s", path)
    failed = sum(1 for row in rows if row.status != OK)
    if failed:
        raise SweepIncompleteError(failed, len(rows), str(path))
    return rows, str(path)
