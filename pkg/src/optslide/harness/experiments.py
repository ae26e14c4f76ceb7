"""Instance construction, method runs and the two studies built on them."""
import time
from dataclasses import dataclass
from functools import singledispatchmethod
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.stats
from loguru import logger
from pydantic import ValidationError

from ..base_solvers import SolverReport, StoppingRule, plain_fgm_baseline
from ..catalyst_sliding import (
    ProblemConstants,
    SlidingConfig,
    catalyst_vr_solve,
    estimate_cost,
    resolve_L,
    sliding_solve,
)
from ..errors import (
    ConfigError,
    DimensionMismatch,
    InconsistentConstants,
    InnerSolverFailure,
    NonFiniteValue,
    SolverDiverged,
)
from ..oracles import CompositeObjective, OracleCounters, eval_F, grad_F
from ..problems import (
    GLMSpec,
    Loss,
    ProblemParts,
    assemble_problem,
    make_glm,
    make_quadratic,
    optimal_value,
)
from ..reductions import (
    LossKind,
    ScalarLoss,
    regularize,
    smooth_loss,
    smoothing_accuracy,
)
from .commands import (
    CompareTable1,
    EmitPlotData,
    Handler,
    RunExperiment,
    ScaleExperiment,
)
from .config import (
    AxisName,
    ExperimentConfig,
    Method,
    ProblemSpec,
    SolverSettings,
    describe,
)
from .results import Outcome, ResultRow, write_plot_data

DEFAULT_LAMBDA_MAX = 1.0
DEFAULT_RADIUS = 1.0
ABORTS = (SolverDiverged, InnerSolverFailure, NonFiniteValue)


@dataclass(frozen=True)
class Instance:
    spec: ProblemSpec
    objective: CompositeObjective
    # certified optimum, present for strongly convex all-quadratic instances
    f_star: Optional[float]


def _loss(spec: ProblemSpec, eps: float) -> Optional[Loss]:
    if spec.loss == 'none':
        return None
    base = ScalarLoss(LossKind[spec.loss.upper()])
    if base.smooth:
        return base
    eta = spec.eta if spec.eta is not None else smoothing_accuracy(eps / 2.0, base)
    return smooth_loss(base, eta)


def _glm(spec: ProblemSpec, loss: Loss, lambda_max: float) -> GLMSpec:
    glm = make_glm(spec.m, spec.n, spec.s, loss, spec.seed + 1)
    if spec.lipschitz_g is not None:
        return glm.rescaled(spec.lipschitz_g)
    if spec.lipschitz_ratio is not None:
        L_f = lambda_max + spec.mu_reg
        return glm.rescaled(spec.lipschitz_ratio * spec.m * L_f)
    return glm


def build_problem(spec: ProblemSpec, eps: float) -> Instance:
    eps = spec.eps if spec.eps is not None else eps
    lambda_max = spec.lambda_max_target or DEFAULT_LAMBDA_MAX
    try:
        quadratic = make_quadratic(spec.n, lambda_max, spec.mu_floor, spec.seed)
        if spec.linear_term:
            rng = np.random.default_rng([spec.seed, 2])
            quadratic = quadratic.with_linear_term(rng.standard_normal(spec.n))
        loss = _loss(spec, eps)
        glm = None if loss is None else _glm(spec, loss, lambda_max)
        objective = assemble_problem(quadratic, glm, spec.mu_reg)
        if spec.radius is not None:
            objective = regularize(objective, eps / 2.0, spec.radius)
    except (InconsistentConstants, DimensionMismatch) as exc:
        raise ConfigError(f'cannot build instance: {exc}') from exc
    f_star = None
    parts = objective.parts
    if objective.mu > 0 and isinstance(parts, ProblemParts) and parts.all_quadratic:
        f_star = optimal_value(objective)
    return Instance(spec, objective, f_star)


def final_gap(instance: Instance, x: np.ndarray) -> float:
    """Certified F(x) - F* when available, else ||grad F||^2 / (2 mu)."""
    scratch = OracleCounters()
    obj = instance.objective
    if instance.f_star is not None:
        return eval_F(obj, x, scratch) - instance.f_star
    gradient = grad_F(obj, x, scratch)
    return float(np.dot(gradient, gradient)) / (2.0 * obj.mu)


def solve(
        instance: Instance,
        method: Method,
        eps: float,
        seed: int,
        settings: SolverSettings,
        grad_tol: Optional[float] = None,
        ctr: Optional[OracleCounters] = None,
) -> Tuple[SolverReport, float]:
    """Run one method; `grad_tol` replaces the default outer stopping rule."""
    obj = instance.objective
    ctr = OracleCounters() if ctr is None else ctr
    if method == Method.FGM_BASELINE:
        if grad_tol is not None:
            stop = StoppingRule.grad_norm(grad_tol, settings.fgm_max_iters)
        elif instance.f_star is not None:
            stop = StoppingRule.func_gap(eps, instance.f_star, settings.fgm_max_iters)
        else:
            stop = StoppingRule.grad_norm(
                float(np.sqrt(2.0 * obj.mu * eps)), settings.fgm_max_iters,
            )
        report = plain_fgm_baseline(obj, np.zeros(obj.n), stop, ctr)
        return report, obj.L_f + obj.L_g
    cfg = SlidingConfig(
        L=settings.L,
        eps=eps,
        outer_stop=None if grad_tol is None else StoppingRule.grad_norm(
            grad_tol, settings.outer_max_iters,
        ),
        outer_max_iters=settings.outer_max_iters,
        inner_gd_max_iters=settings.inner_gd_max_iters,
        vr_max_epochs=settings.vr_max_epochs,
        vr_tolerance_ratio=settings.vr_tolerance_ratio,
        warm_start=settings.warm_start,
        seed=seed,
    )
    solver = sliding_solve if method == Method.SLIDING else catalyst_vr_solve
    report = solver(obj, cfg, ctr)
    return report, report.diagnostics['L']


def run_method(
        instance: Instance,
        method: Method,
        cfg: ExperimentConfig,
        seed: int,
        grad_tol: Optional[float] = None,
) -> ResultRow:
    """One result row; an aborted solve becomes a non-converged row.

    An aborted row keeps the counters spent up to the abort and reports the
    gap at the starting point.
    """
    obj = instance.objective
    ctr = OracleCounters()
    started = time.perf_counter()
    try:
        report, L_used = solve(
            instance, method, cfg.eps, seed, cfg.solver, grad_tol, ctr,
        )
        x_out, converged = report.x_out, report.converged
    except ABORTS as exc:
        logger.warning('{} seed={} aborted: {!r}', method.value, seed, exc)
        x_out, converged = np.zeros(obj.n), False
        L_used = obj.L_f + obj.L_g if method == Method.FGM_BASELINE \
            else resolve_L(obj, SlidingConfig(L=cfg.solver.L, eps=cfg.eps))
    elapsed = time.perf_counter() - started
    counters = ctr.snapshot()
    gap = final_gap(instance, x_out)
    logger.info(
        '{} seed={} n={} m={}: grad_f={} grad_gk={} gap={:.3g} converged={}',
        method.value, seed, obj.n, obj.m,
        counters.grad_f_calls, counters.grad_gk_calls, gap, converged,
    )
    return ResultRow(
        method=method.value,
        n=obj.n,
        m=obj.m,
        s=instance.spec.s,
        eps=cfg.eps,
        L_used=L_used,
        grad_f_calls=counters.grad_f_calls,
        grad_gk_calls=counters.grad_gk_calls,
        wall_time_s=elapsed if cfg.record_wall_time else 0.0,
        final_gap=gap,
        converged=converged,
        seed=seed,
    )


def _revalidate(spec: ProblemSpec, **changes: Any) -> ProblemSpec:
    try:
        return ProblemSpec.model_validate({**spec.model_dump(), **changes})
    except ValidationError as exc:
        raise ConfigError(f'invalid problem: {describe(exc)}') from exc


def problem_at(
        spec: ProblemSpec, axis: Optional[AxisName], value: Optional[float], seed: int,
) -> ProblemSpec:
    """The problem for one grid point; the run seed replaces the problem seed."""
    if axis is None:
        return _revalidate(spec, seed=seed)
    if axis == 'mu':
        return _revalidate(spec, seed=seed, mu_floor=value)
    if not float(value).is_integer():
        raise ConfigError(f'axis {axis} needs integer values, got {value}')
    return _revalidate(spec, seed=seed, **{axis: int(value)})


def _require_strongly_convex(instance: Instance) -> None:
    if instance.objective.mu <= 0:
        raise ConfigError(
            'instance is not strongly convex; set mu_floor, mu_reg or radius'
        )


def _run_grid(cfg: ExperimentConfig) -> List[Tuple[Optional[float], ResultRow]]:
    axis = cfg.axis.name if cfg.axis else None
    values: Sequence[Optional[float]] = cfg.axis.values if cfg.axis else [None]
    keyed = []
    for value in values:
        for seed in cfg.seeds:
            instance = build_problem(problem_at(cfg.problem, axis, value, seed), cfg.eps)
            _require_strongly_convex(instance)
            for method in cfg.methods:
                row = run_method(instance, method, cfg, seed)
                keyed.append(((method.value, value or 0.0, seed), value, row))
    keyed.sort(key=lambda item: item[0])
    return [(value, row) for _, value, row in keyed]


def run_experiment(cfg: ExperimentConfig) -> List[ResultRow]:
    return [row for _, row in _run_grid(cfg)]


@dataclass(frozen=True)
class PowerLaw:
    slope: float
    intercept: float
    residual: float

    def as_dict(self) -> Dict[str, float]:
        return {
            'slope': self.slope,
            'intercept': self.intercept,
            'residual': self.residual,
        }


def fit_power_law(xs: Sequence[float], ys: Sequence[float]) -> PowerLaw:
    """Least-squares line through (log x, log y)."""
    if len(xs) < 3:
        raise ConfigError(f'a scaling fit needs at least 3 points, got {len(xs)}')
    x, y = np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError('power-law fit needs positive data')
    log_x, log_y = np.log(x), np.log(y)
    fit = scipy.stats.linregress(log_x, log_y)
    residuals = log_y - (fit.intercept + fit.slope * log_x)
    return PowerLaw(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        residual=float(np.sqrt(np.mean(residuals ** 2))),
    )


def scaling_study(
        cfg: ExperimentConfig, axis: AxisName, values: Sequence[float],
) -> Outcome:
    """Per-seed medians of both counters against the axis, fitted on log-log.

    The mu axis is regressed against 1/mu.
    """
    if len(set(values)) < 3:
        raise ConfigError('scaling study needs at least 3 distinct axis values')
    if any(value <= 0 for value in values):
        raise ConfigError('axis values must be positive')
    cfg = cfg.with_axis(axis, sorted(set(values)))
    grid = _run_grid(cfg)
    summary: Dict[str, Any] = {'axis': axis, 'values': cfg.axis.values, 'methods': {}}
    for method in cfg.methods:
        xs, grad_f_median, grad_gk_median = [], [], []
        for value in cfg.axis.values:
            rows = [r for v, r in grid if v == value and r.method == method.value]
            xs.append(1.0 / value if axis == 'mu' else value)
            grad_f_median.append(float(np.median([r.grad_f_calls for r in rows])))
            grad_gk_median.append(float(np.median([r.grad_gk_calls for r in rows])))
        summary['methods'][method.value] = {
            'grad_f': fit_power_law(xs, grad_f_median).as_dict(),
            'grad_gk': fit_power_law(xs, grad_gk_median).as_dict(),
            'medians': {
                'x': xs,
                'grad_f_calls': grad_f_median,
                'grad_gk_calls': grad_gk_median,
            },
        }
    return Outcome([row for _, row in grid], summary)


def weighted_cost(row: ResultRow) -> float:
    """Arithmetic cost with O(s) per grad g_k and O(n^2) per grad f."""
    return float(row.grad_gk_calls * row.s + row.grad_f_calls * row.n ** 2)


def table1_problem(cfg: ExperimentConfig) -> ProblemSpec:
    spec = cfg.problem
    lambda_cap = 1.0 / (cfg.eps * spec.m)
    changes: Dict[str, Any] = {}
    if spec.lambda_max_target is None:
        changes['lambda_max_target'] = lambda_cap
    elif spec.lambda_max_target > lambda_cap:
        logger.warning(
            'lambda_max(C)={:.4g} exceeds 1/(eps m)={:.4g}',
            spec.lambda_max_target, lambda_cap,
        )
    if spec.radius is None and spec.mu_floor == 0 and spec.mu_reg == 0:
        changes['radius'] = DEFAULT_RADIUS
    if spec.loss not in ('abs', 'hinge'):
        logger.warning('loss {} is not a smoothed nonsmooth loss', spec.loss)
    if spec.s <= 1:
        logger.warning('s={} is not much larger than 1', spec.s)
    return _revalidate(spec, **changes) if changes else spec


def table1_comparison(cfg: ExperimentConfig) -> Outcome:
    """FGM baseline against sliding on one smoothed, regularized instance.

    Both methods stop on ||grad F|| <= sqrt(mu eps / 2), which certifies
    F(x) - F* <= eps / 4 for either of them.
    """
    spec = table1_problem(cfg)
    methods = (Method.FGM_BASELINE, Method.SLIDING)
    rows: List[ResultRow] = []
    predicted: Dict[str, float] = {}
    for seed in sorted(cfg.seeds):
        instance = build_problem(problem_at(spec, None, None, seed), cfg.eps)
        _require_strongly_convex(instance)
        obj = instance.objective
        grad_tol = float(np.sqrt(obj.mu * cfg.eps / 2.0))
        for method in methods:
            rows.append(run_method(instance, method, cfg, seed, grad_tol))
        if not predicted:
            L = rows[-1].L_used
            estimate = estimate_cost(ProblemConstants.of(obj), L)
            predicted = {
                Method.SLIDING.value:
                    estimate.grad_gk_est * spec.s + estimate.grad_f_est * obj.n ** 2,
                Method.FGM_BASELINE.value:
                    float(np.sqrt((obj.L_f + obj.L_g) / obj.mu))
                    * (obj.m * spec.s + obj.n ** 2),
            }
            regime = {
                'm_within_condition': obj.m_within_condition,
                'sliding_regime': obj.sliding_regime,
            }
    costs = {
        method.value: float(np.median([
            weighted_cost(row) for row in rows if row.method == method.value
        ]))
        for method in methods
    }
    gaps = {
        method.value: max(row.final_gap for row in rows if row.method == method.value)
        for method in methods
    }
    winner = min(costs, key=lambda name: (costs[name], name))
    summary = {
        'weighted_cost': costs,
        'predicted_cost': predicted,
        'final_gap': gaps,
        'winner': winner,
        'regime': regime,
        'instance': spec.model_dump(mode='json'),
    }
    logger.info('table1: {} wins, costs {}', winner, costs)
    rows.sort(key=lambda row: (row.method, row.seed))
    return Outcome(rows, summary)


class ExperimentHandler(Handler):
    @singledispatchmethod
    def __call__(self, cmd) -> Outcome:
        raise NotImplementedError

    @__call__.register
    def run(self, cmd: RunExperiment) -> Outcome:
        return Outcome(run_experiment(cmd.config))

    @__call__.register
    def scale(self, cmd: ScaleExperiment) -> Outcome:
        return scaling_study(cmd.config, cmd.axis, cmd.values)

    @__call__.register
    def compare(self, cmd: CompareTable1) -> Outcome:
        return table1_comparison(cmd.config)

    @__call__.register
    def plot(self, cmd: EmitPlotData) -> Outcome:
        files = write_plot_data(cmd.rows, cmd.directory)
        return Outcome(list(cmd.rows), {'files': [str(path) for path in files]})
