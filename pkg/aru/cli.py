"""Command line entry point.

Run ``aru command=<synth|train|eval|sweep>`` with ``Group.key=value`` overrides of
the config in ``aru/conf``, e.g.::

    aru command=synth Synth.gamma=1 output_dir=runs/synth
    aru command=train Data.path=runs/synth/synthetic.csv \\
        Data.manifest=runs/synth/manifest.json Model=small Model.head=aru output_dir=runs/aru
    aru command=eval Data.path=runs/synth/synthetic.csv \\
        Data.manifest=runs/synth/manifest.json output_dir=runs/aru Evaluation.protocol=streaming \\
        Evaluation.n_rolls=7
"""

import dataclasses
import logging
from typing import Callable, Optional

import hydra
from hydra.utils import instantiate
from omegaconf import DictConfig

from aru.data.data import Head, Protocol
from aru.evaluation.protocols import eval_fixed, eval_streaming, time_inference
from aru.evaluation.report import write_forecasts, write_report
from aru.evaluation.sweep import SweepConfig, run_sweep
from aru.model.checkpoint import CheckpointFormatError, load_checkpoint
from aru.model.config import FeatureSchema, ModelConfig
from aru.model.forecaster import ForecastModel
from aru.preprocessing.csv_loader import load_csv
from aru.preprocessing.dataset import DataConfig, PreparedData, prepare_dataset
from aru.preprocessing.scaling import ScalerState
from aru.preprocessing.synthetic import SynthConfig, synth_generate, write_synthetic
from aru.training.selection import SelectionConfig, select_aru, selected_aru
from aru.training.train import BEST_CHECKPOINT, LAST_CHECKPOINT, TrainConfig, Trainer
from aru.training.windows import training_windows, validation_windows
from aru.utils.constants import HYDRA_VERSION_BASE
from aru.utils.utils import as_path

logger = logging.getLogger(__name__)

SCALERS_FILE = "scalers.json"


def build_model_config(cfg: DictConfig, schema: FeatureSchema) -> ModelConfig:
    return ModelConfig.from_preset(
        cfg.Model.preset,
        cfg.Data.encoder_length,
        cfg.Data.horizon,
        schema,
        head=Head.from_config(cfg.Model.head),
        aging_factors=list(cfg.Aru.aging_factors),
        ridge=cfg.Aru.ridge,
        resymmetrize_every=cfg.Aru.resymmetrize_every,
        rnn_units=cfg.Model.rnn_units,
        hidden_sizes=None if cfg.Model.hidden_sizes is None else list(cfg.Model.hidden_sizes),
        ff2_sizes=tuple(cfg.Model.ff2_sizes),
        direct_variance_floor=cfg.Model.direct_variance_floor,
    )


def _protocol(cfg: DictConfig) -> Protocol:
    result: Protocol = Protocol.from_config(cfg.Evaluation.protocol)
    return result


def load_data(cfg: DictConfig, scalers: Optional[ScalerState] = None) -> PreparedData:
    data_config: DataConfig = instantiate(cfg.Data).with_manifest()
    if data_config.path is None:
        raise ValueError("Data.path must point to a csv file")
    usecols: Optional[list[str]] = None
    if data_config.continuous_columns is not None:
        usecols = [*data_config.categorical_columns, *data_config.continuous_columns]
    return prepare_dataset(
        load_csv(data_config.path, usecols=usecols),
        data_config,
        protocol=_protocol(cfg),
        n_rolls=cfg.Evaluation.n_rolls,
        scalers=scalers,
    )


def cmd_synth(cfg: DictConfig) -> None:
    synth_config: SynthConfig = instantiate(cfg.Synth)
    window = cfg.Data.encoder_length + cfg.Data.horizon
    if synth_config.length < window:
        raise ValueError(
            f"synthetic series of length {synth_config.length} cannot hold a single window "
            f"of {cfg.Data.encoder_length} + {cfg.Data.horizon} steps"
        )
    write_synthetic(synth_generate(synth_config), cfg.output_dir)


def cmd_train(cfg: DictConfig) -> None:
    train_config: TrainConfig = instantiate(cfg.Training.params)
    output_dir = as_path(cfg.output_dir)
    data = load_data(cfg)
    metadata = {
        "protocol": _protocol(cfg).name.lower(),
        "n_rolls": cfg.Evaluation.n_rolls,
    }
    if cfg.Training.select:
        if cfg.Training.resume:
            raise ValueError("Training.select trains every candidate afresh and cannot resume")
        grid: SelectionConfig = instantiate(cfg.Training.selection)
        output_dir.mkdir(parents=True, exist_ok=True)
        data.scalers.save(output_dir / SCALERS_FILE)
        result = select_aru(
            build_model_config(cfg, data.schema), train_config, data, grid, output_dir, metadata
        )
        logger.info(
            "selected aging factors %s and ridge %s, table in %s",
            list(result.best.candidate.aging_factors),
            result.best.candidate.ridge,
            result.path,
        )
        return
    if cfg.Training.resume and (output_dir / LAST_CHECKPOINT).exists():
        trainer = Trainer.resume(train_config, output_dir, metadata)
        if trainer.model.config != build_model_config(cfg, data.schema):
            raise CheckpointFormatError(
                f"cannot resume: {output_dir / LAST_CHECKPOINT} was trained with another model"
            )
    else:
        model = ForecastModel(build_model_config(cfg, data.schema), seed=train_config.seed)
        trainer = Trainer(model, train_config, output_dir=output_dir, metadata=metadata)
    output_dir.mkdir(parents=True, exist_ok=True)
    data.scalers.save(output_dir / SCALERS_FILE)
    trainer.fit(training_windows(data, train_config.stride), validation_windows(data), data.series)
    logger.info("training finished, best checkpoint in %s", output_dir / BEST_CHECKPOINT)


def cmd_eval(cfg: DictConfig) -> None:
    output_dir = as_path(cfg.output_dir)
    checkpoint_path = as_path(cfg.Evaluation.checkpoint or output_dir / BEST_CHECKPOINT)
    scalers = ScalerState.load(checkpoint_path.parent / SCALERS_FILE)
    data = load_data(cfg, scalers)
    checkpoint = load_checkpoint(checkpoint_path)
    expected = build_model_config(cfg, data.schema)
    aru = selected_aru(checkpoint.metadata)
    if aru is not None and expected.aru is not None:
        expected = dataclasses.replace(expected, aru=aru)
    if checkpoint.model.config != expected:
        raise CheckpointFormatError(
            f"{checkpoint_path} was trained with {checkpoint.model.config}, which does not match "
            f"{expected}"
        )
    trained_protocol = checkpoint.metadata.get("protocol")
    trained_rolls = checkpoint.metadata.get("n_rolls")
    if trained_protocol is not None and (
        trained_protocol != _protocol(cfg).name.lower() or trained_rolls != cfg.Evaluation.n_rolls
    ):
        logger.warning(
            "%s was trained holding out a %s test range of %s rolls, evaluating %s with %s",
            checkpoint_path,
            trained_protocol,
            trained_rolls,
            cfg.Evaluation.protocol,
            cfg.Evaluation.n_rolls,
        )
    model = checkpoint.model
    method = cfg.Evaluation.method
    if _protocol(cfg) is Protocol.FIXED:
        report = eval_fixed(model, data, method=method)
    else:
        report = eval_streaming(
            model,
            data,
            cfg.Evaluation.n_rolls,
            adapt_steps=cfg.Evaluation.adapt_steps,
            method=method,
        )
    if cfg.Evaluation.time_inference:
        report = report.with_timing(time_inference(model, data, cfg.Evaluation.timing_repeats))
    write_report(report, output_dir)
    if cfg.Evaluation.emit_forecasts:
        write_forecasts(report, output_dir)


def cmd_sweep(cfg: DictConfig) -> None:
    sweep_config: SweepConfig = instantiate(cfg.Sweep)
    train_config: TrainConfig = instantiate(cfg.Training.params)
    run_sweep(sweep_config, train_config, cfg.output_dir)


COMMANDS: dict[str, Callable[[DictConfig], None]] = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def run(cfg: DictConfig) -> None:
    try:
        command = COMMANDS[cfg.command]
    except KeyError:
        raise ValueError(
            f"unknown command {cfg.command}. Choose from {list(COMMANDS)}"
        ) from None
    logger.info("running %s with output directory %s", cfg.command, cfg.output_dir)
    command(cfg)


@hydra.main(version_base=HYDRA_VERSION_BASE, config_path="conf", config_name="config")
def start(cfg: DictConfig) -> None:
    run(cfg)


if __name__ == "__main__":
    start()
