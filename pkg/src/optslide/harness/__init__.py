from . import commands
from .commands import Command, Handler
from .config import ExperimentConfig, Method, ProblemSpec, load_config
from .experiments import (
    ExperimentHandler,
    build_problem,
    fit_power_law,
    run_experiment,
    scaling_study,
    table1_comparison,
)
from .results import ResultRow, emit_results


__all__ = [
    'Command',
    'ExperimentConfig',
    'ExperimentHandler',
    'Handler',
    'Method',
    'ProblemSpec',
    'ResultRow',
    'build_problem',
    'commands',
    'emit_results',
    'fit_power_law',
    'load_config',
    'run_experiment',
    'scaling_study',
    'table1_comparison',
]
