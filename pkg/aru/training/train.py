import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, Field
from tqdm import tqdm

from aru.data.data import Mode, WindowSample
from aru.model.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from aru.model.forecaster import ForecastModel, forward_batch
from aru.preprocessing.scaling import PreparedSeries
from aru.training.backward import NonFiniteGradientError, loss_and_gradients
from aru.training.loss import NonFiniteLossError, nll_loss
from aru.training.optim import AdamState, adam_step, clip_by_global_norm
from aru.training.history import HistoryStates, history_states, window_origins
from aru.training.windows import iterate_batches
from aru.utils.utils import PathLike, as_path, rng_for

logger = logging.getLogger(__name__)

BEST_CHECKPOINT = "best.ckpt"
LAST_CHECKPOINT = "last.ckpt"
EPOCH_LOG = "train_log.tsv"


class TrainConfig(BaseModel):
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(1e-4, gt=0)
    stride: int = Field(1, ge=1)  # steps between consecutive training windows
    epochs: int = Field(10, ge=1)
    seed: int = 0
    clip_norm: float = Field(10.0, gt=0)  # global gradient norm
    # when false the local mean is a constant of the loss, not only its statistics
    differentiate_local_mean: bool = True
    # windows start from the ARU state of the series history before their origin
    replay_history: bool = True
    progress_bar: bool = True


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, cause: Exception):
        self.epoch = epoch
        super().__init__(f"training diverged in epoch {epoch}: {cause}")


@dataclass(frozen=True)
class EpochLogLine:
    epoch: int
    train_nll: float
    validation_nll: Optional[float]
    seconds: float

    HEADER = "epoch\ttrain_nll\tvalidation_nll\tseconds"

    def to_tsv(self) -> str:
        validation = "" if self.validation_nll is None else f"{self.validation_nll:.6f}"
        return f"{self.epoch}\t{self.train_nll:.6f}\t{validation}\t{self.seconds:.3f}"


class Trainer:
    """Minimizes the mean Gaussian NLL over sliding windows with Adam.

    Given the series history, every window of an ARU head starts from the state of its
    series at the window origin, replayed once per epoch with the current parameters;
    otherwise from an empty state. The states are data, so windows can be shuffled
    freely. When ``output_dir`` is set, every epoch appends a line to the epoch log and
    overwrites the last checkpoint, and the best checkpoint follows the lowest
    validation NLL.
    """

    def __init__(
        self,
        model: ForecastModel,
        config: TrainConfig,
        output_dir: Optional[PathLike] = None,
        adam: Optional[AdamState] = None,
        epoch: int = 0,
        best_validation_nll: Optional[float] = None,
        metadata: Optional[dict[str, Any]] = None,
    ):
        self.model = model
        self.config = config
        self.output_dir: Optional[Path] = None if output_dir is None else as_path(output_dir)
        self.adam = adam if adam is not None else AdamState.zeros_like(model.params)
        self.epoch = epoch
        self.best_validation_nll = best_validation_nll
        self.metadata = metadata if metadata is not None else {}

    @staticmethod
    def resume(
        config: TrainConfig,
        output_dir: PathLike,
        metadata: Optional[dict[str, Any]] = None,
    ) -> "Trainer":
        """Continue from the last checkpoint in ``output_dir``, keeping its optimizer
        state and epoch counter."""
        checkpoint = load_checkpoint(as_path(output_dir) / LAST_CHECKPOINT)
        logger.info("resuming after epoch %s", checkpoint.epoch)
        return Trainer(
            model=checkpoint.model,
            config=config,
            output_dir=output_dir,
            adam=checkpoint.adam,
            epoch=checkpoint.epoch,
            best_validation_nll=checkpoint.best_validation_nll,
            metadata={**checkpoint.metadata, **(metadata or {})},
        )

    def _checkpoint(self) -> Checkpoint:
        return Checkpoint(
            model=self.model,
            adam=self.adam,
            epoch=self.epoch,
            best_validation_nll=self.best_validation_nll,
            metadata=self.metadata,
        )

    def train_epoch(
        self, windows: Sequence[WindowSample], history: Optional[HistoryStates] = None
    ) -> float:
        """One pass over ``windows`` in a seeded random order.

        :param windows:
        :param history: states at the window origins, empty states when None

        :return: the mean training NLL over all decoder steps of the epoch
        """
        epoch = self.epoch + 1
        rng = rng_for(self.config.seed, f"shuffle/{epoch}")
        batches = iterate_batches(windows, self.config.batch_size, rng)
        total, count = 0.0, 0
        for batch in tqdm(
            batches,
            total=-(-len(windows) // self.config.batch_size),
            desc=f"epoch {epoch}",
            disable=not self.config.progress_bar,
        ):
            try:
                loss, grads, _ = loss_and_gradients(
                    self.model.config,
                    self.model.params,
                    batch,
                    None if history is None else history.for_batch(batch),
                    mode=Mode.TRAIN,
                    differentiate_local_mean=self.config.differentiate_local_mean,
                )
            except (NonFiniteLossError, NonFiniteGradientError) as e:
                raise TrainingDivergedError(epoch, e) from e
            grads, norm = clip_by_global_norm(grads, self.config.clip_norm)
            self.model.params, self.adam = adam_step(
                self.model.params, grads, self.adam, self.config.learning_rate
            )
            logger.debug("step %s: loss %.6f, gradient norm %.4f", self.adam.step, loss, norm)
            total += loss * len(batch)
            count += len(batch)
        return total / max(count, 1)

    def validation_nll(
        self, windows: Sequence[WindowSample], history: Optional[HistoryStates] = None
    ) -> Optional[float]:
        """Mean NLL with the same prequential within-window adaptation as training."""
        if len(windows) == 0:
            return None
        total, count = 0.0, 0
        for batch in iterate_batches(windows, self.config.batch_size):
            states = None if history is None else history.for_batch(batch)
            result = forward_batch(
                self.model.config, self.model.params, batch, states, mode=Mode.TRAIN
            )
            total += nll_loss(result.forecast, batch.decoder_targets) * len(batch)
            count += len(batch)
        return total / count

    def fit(
        self,
        train_windows: Sequence[WindowSample],
        validation_windows: Sequence[WindowSample] = (),
        series: Optional[Sequence[PreparedSeries]] = None,
    ) -> list[EpochLogLine]:
        """Train until ``config.epochs`` epochs are complete.

        :param train_windows:
        :param validation_windows:
        :param series: the prepared series the windows were cut from; with
            ``config.replay_history`` the ARU windows then start from their series history
        :raises TrainingDivergedError: on a non-finite loss or gradient
        """
        if len(train_windows) == 0:
            raise ValueError("no training windows; every series is shorter than one window")
        log_path = None
        if self.output_dir is not None:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            log_path = self.output_dir / EPOCH_LOG
            if self.epoch == 0 or not log_path.exists():
                log_path.write_text(EpochLogLine.HEADER + "\n", encoding="utf-8")
        logger.info(
            "training %s head on %s windows, %s validation windows, epochs %s to %s",
            self.model.head.name,
            len(train_windows),
            len(validation_windows),
            self.epoch + 1,
            self.config.epochs,
        )
        origins: Optional[dict[str, set[int]]] = None
        history: Optional[HistoryStates] = None
        if series is not None and self.config.replay_history and self.model.config.uses_aru:
            origins = window_origins([*train_windows, *validation_windows])
            history = history_states(self.model, series, origins)
        lines = []
        while self.epoch < self.config.epochs:
            started = time.perf_counter()
            train_nll = self.train_epoch(train_windows, history)
            if origins is not None and series is not None:
                history = history_states(self.model, series, origins)
            try:
                validation_nll = self.validation_nll(validation_windows, history)
            except NonFiniteLossError as e:
                raise TrainingDivergedError(self.epoch + 1, e) from e
            self.epoch += 1
            line = EpochLogLine(
                epoch=self.epoch,
                train_nll=train_nll,
                validation_nll=validation_nll,
                seconds=time.perf_counter() - started,
            )
            lines.append(line)
            logger.info(
                "epoch %s: train nll %.6f, validation nll %s",
                line.epoch,
                line.train_nll,
                "n/a" if validation_nll is None else f"{validation_nll:.6f}",
            )
            improved = validation_nll is not None and (
                self.best_validation_nll is None or validation_nll < self.best_validation_nll
            )
            if improved:
                self.best_validation_nll = validation_nll
            if self.output_dir is not None and log_path is not None:
                with open(log_path, "a", encoding="utf-8") as f:
                    f.write(line.to_tsv() + "\n")
                checkpoint = self._checkpoint()
                save_checkpoint(self.output_dir / LAST_CHECKPOINT, checkpoint)
                if improved or validation_nll is None:
                    save_checkpoint(self.output_dir / BEST_CHECKPOINT, checkpoint)
        return lines
