import dataclasses
import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
import pandas as pd

from aru.adaptive import AruConfig
from aru.data.data import Protocol
from aru.evaluation.metrics import MetricUndefinedError, nd_metric, rmse_metric
from aru.preprocessing.csv_loader import SERIES_ID, TIMESTAMP
from aru.utils.utils import PathLike, as_path

logger = logging.getLogger(__name__)

REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"
FORECAST_DIR = "forecasts"


@dataclass(frozen=True)
class SeriesForecast:
    """Forecasts of one series over every evaluated roll, in target units."""

    series_id: str
    timestamps: np.ndarray
    y_true: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                SERIES_ID: self.series_id,
                TIMESTAMP: self.timestamps,
                "y_true": self.y_true,
                "mu": self.mu,
                "sigma": self.sigma,
            }
        )


@dataclass(frozen=True)
class SeriesMetrics:
    series_id: str
    #: None when the series' truth is all zero
    nd: Optional[float]
    rmse: float
    n_points: int


@dataclass(frozen=True)
class EvalReport:
    method: str
    protocol: Protocol
    n_rolls: int
    nd: float
    rmse: float
    per_series: tuple[SeriesMetrics, ...]
    inference_seconds: Optional[float] = None
    forecasts: tuple[SeriesForecast, ...] = ()
    #: ARU settings of the evaluated model, None for the baseline head
    aging_factors: Optional[tuple[float, ...]] = None
    ridge: Optional[float] = None

    @staticmethod
    def from_forecasts(
        method: str, protocol: Protocol, n_rolls: int, forecasts: Sequence[SeriesForecast]
    ) -> "EvalReport":
        """Pool the metrics over every series and step.

        :raises MetricUndefinedError: if there is nothing to score or the pooled truth
            is all zero
        """
        if len(forecasts) == 0:
            raise MetricUndefinedError("no forecasts to score")
        per_series = []
        for f in forecasts:
            try:
                nd: Optional[float] = nd_metric(f.y_true, f.mu)
            except MetricUndefinedError:
                nd = None
            per_series.append(
                SeriesMetrics(
                    series_id=f.series_id,
                    nd=nd,
                    rmse=rmse_metric(f.y_true, f.mu),
                    n_points=int(f.y_true.size),
                )
            )
        y_true = np.concatenate([f.y_true for f in forecasts])
        mu = np.concatenate([f.mu for f in forecasts])
        return EvalReport(
            method=method,
            protocol=protocol,
            n_rolls=n_rolls,
            nd=nd_metric(y_true, mu),
            rmse=rmse_metric(y_true, mu),
            per_series=tuple(per_series),
            forecasts=tuple(forecasts),
        )

    def with_timing(self, seconds: float) -> "EvalReport":
        return dataclasses.replace(self, inference_seconds=seconds)

    def with_aru(self, aru: Optional[AruConfig]) -> "EvalReport":
        if aru is None:
            return self
        return dataclasses.replace(self, aging_factors=aru.aging_factors, ridge=aru.ridge)

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "protocol": self.protocol.name.lower(),
            "n_rolls": self.n_rolls,
            "nd": self.nd,
            "rmse": self.rmse,
            "inference_seconds": self.inference_seconds,
            "aging_factors": None if self.aging_factors is None else list(self.aging_factors),
            "ridge": self.ridge,
            "per_series": [dataclasses.asdict(m) for m in self.per_series],
        }


def format_table(reports: Sequence[EvalReport]) -> str:
    """An aligned plain text table with one row per report, e.g. one per head."""
    frame = pd.DataFrame(
        [
            {
                "method": r.method,
                "protocol": r.protocol.name.lower(),
                "rolls": r.n_rolls,
                "ND": f"{r.nd:.4f}",
                "RMSE": f"{r.rmse:.4f}",
                "seconds": "" if r.inference_seconds is None else f"{r.inference_seconds:.4f}",
            }
            for r in reports
        ]
    )
    return frame.to_string(index=False) + "\n"


def write_report(report: EvalReport, output_dir: PathLike) -> tuple[str, str]:
    """Write the report as json and as a text table.

    :return: the paths of both files
    """
    output_dir = as_path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    json_path = output_dir / REPORT_JSON
    text_path = output_dir / REPORT_TEXT
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)
        f.write("\n")
    text_path.write_text(format_table([report]), encoding="utf-8")
    logger.info(
        "%s: ND %.4f, RMSE %.4f, report in %s", report.method, report.nd, report.rmse, json_path
    )
    return str(json_path), str(text_path)


def write_forecasts(report: EvalReport, output_dir: PathLike) -> list[str]:
    """One csv per series under ``<output_dir>/forecasts``."""
    forecast_dir = as_path(output_dir) / FORECAST_DIR
    forecast_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for f in report.forecasts:
        path = forecast_dir / f"{f.series_id}.csv"
        f.to_frame().to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
        paths.append(str(path))
    logger.info("wrote %s forecast files to %s", len(paths), forecast_dir)
    return paths
