from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

from .config import AxisName, ExperimentConfig
from .results import Outcome, ResultRow


@dataclass(frozen=True)
class RunExperiment:
    config: ExperimentConfig


@dataclass(frozen=True)
class ScaleExperiment:
    config: ExperimentConfig
    axis: AxisName
    values: Tuple[float, ...]


@dataclass(frozen=True)
class CompareTable1:
    config: ExperimentConfig


@dataclass(frozen=True)
class EmitPlotData:
    rows: Tuple[ResultRow, ...]
    directory: Path


Command = Union[
    RunExperiment,
    ScaleExperiment,
    CompareTable1,
    EmitPlotData,
]


class Handler:
    def __call__(self, cmd: Command) -> Outcome:
        ...
