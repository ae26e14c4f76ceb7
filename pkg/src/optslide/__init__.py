from loguru import logger

from . import base_solvers, catalyst_sliding, numerics, oracles, problems, reductions
from .base_solvers import (
    SolverReport,
    StopKind,
    StoppingRule,
    composite_fgm,
    composite_gd,
    plain_fgm_baseline,
    quadratic_prox,
    varag_solve,
)
from .catalyst_sliding import (
    CatalystState,
    CostEstimate,
    SlidingConfig,
    catalyst_outer,
    choose_L,
    estimate_cost,
    sliding_solve,
)
from .errors import (
    ConfigError,
    InconsistentConstants,
    InnerSolverFailure,
    OptslideError,
    ResultsWriteError,
)
from .oracles import CompositeObjective, OracleCounters

logger.disable('optslide')


__all__ = [
    'CatalystState',
    'CompositeObjective',
    'ConfigError',
    'CostEstimate',
    'InconsistentConstants',
    'InnerSolverFailure',
    'OptslideError',
    'OracleCounters',
    'ResultsWriteError',
    'SlidingConfig',
    'SolverReport',
    'StopKind',
    'StoppingRule',
    'base_solvers',
    'catalyst_outer',
    'catalyst_sliding',
    'choose_L',
    'composite_fgm',
    'composite_gd',
    'estimate_cost',
    'numerics',
    'oracles',
    'plain_fgm_baseline',
    'problems',
    'quadratic_prox',
    'reductions',
    'sliding_solve',
    'varag_solve',
]
