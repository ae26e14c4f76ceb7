"""Catalyst outer loop and the three-level sliding composition.

sliding_solve nests: catalyst_outer over F(x) + L/2 ||x - y_k||^2, whose
inner solver is composite_gd (one grad f per step), whose anchored model is
solved by varag_solve (component gradients only). Counters are scoped per
level: `outer`, `inner_gd`, `vr`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Callable, List, Literal, Optional, Union

import numpy as np
from loguru import logger
from pydantic.dataclasses import dataclass as pydantic_dataclass

from .base_solvers import (
    ProximalSubproblem,
    QuadraticAnchors,
    SolverReport,
    StoppingRule,
    composite_gd,
    varag_solve,
)
from .errors import InconsistentConstants, InnerSolverFailure, OptslideError
from .numerics import Vector
from .oracles import (
    CompositeObjective,
    FiniteSumTerm,
    OracleCounters,
    SmoothTerm,
    eval_F,
    grad_F,
)
from .problems import ProblemParts, optimal_value

GRID_POINTS = 64
ACCURACY_DECAY = 0.9


@dataclass(frozen=True)
class ProblemConstants:
    m: int
    L_f: float
    L_g: float
    mu: float

    @classmethod
    def of(cls, obj: CompositeObjective) -> ProblemConstants:
        return cls(m=obj.m, L_f=obj.L_f, L_g=obj.L_g, mu=obj.mu)


@dataclass(frozen=True)
class CostEstimate:
    grad_f_est: float
    grad_gk_est: float
    L_used: float


def estimate_cost(spec: ProblemConstants, L: float) -> CostEstimate:
    """Oracle-count model of the sliding scheme with log factors dropped."""
    mu, L_f = spec.mu, spec.L_f
    if mu <= 0:
        raise InconsistentConstants('cost model needs mu > 0')
    slack = 1e-12 * L_f
    if not mu - slack <= L <= L_f + slack:
        raise InconsistentConstants(f'L={L} outside [mu, L_f] = [{mu}, {L_f}]')
    outer = np.sqrt(L / mu)
    gd_steps = L_f / (L + mu)
    vr_calls = np.sqrt(spec.m * spec.L_g / (L_f + L))
    return CostEstimate(
        grad_f_est=float(outer * gd_steps),
        grad_gk_est=float(spec.m * outer + outer * gd_steps * vr_calls),
        L_used=float(L),
    )


def choose_L(spec: ProblemConstants, grid_points: int = GRID_POINTS) -> float:
    """Grid argmin of the grad g_k estimate on [mu, L_f]; ties go to larger L."""
    if spec.mu <= 0:
        raise InconsistentConstants('choosing L needs mu > 0')
    if spec.mu >= spec.L_f:
        return spec.L_f
    grid = np.geomspace(spec.mu, spec.L_f, grid_points)
    grid[0], grid[-1] = spec.mu, spec.L_f
    costs = np.array([estimate_cost(spec, L).grad_gk_est for L in grid])
    best = len(grid) - 1 - int(np.argmin(costs[::-1]))
    return float(grid[best])


def next_alpha(alpha: float, q: float) -> float:
    """Root in (0, 1) of a^2 = (1 - a) alpha^2 + q a."""
    c = q - alpha * alpha
    return (c + np.sqrt(c * c + 4.0 * alpha * alpha)) / 2.0


@dataclass(frozen=True)
class CatalystState:
    x_k: Vector
    y_k: Vector
    alpha_k: float
    q: float
    L: float

    @classmethod
    def start(cls, x0: Vector, mu: float, L: float) -> CatalystState:
        q = mu / (mu + L)
        return cls(x_k=x0, y_k=x0, alpha_k=float(np.sqrt(q)), q=q, L=L)

    def advance(self, x_next: Vector) -> CatalystState:
        alpha = next_alpha(self.alpha_k, self.q)
        beta = self.alpha_k * (1.0 - self.alpha_k) / (self.alpha_k ** 2 + alpha)
        return replace(
            self,
            x_k=x_next,
            y_k=x_next + beta * (x_next - self.x_k),
            alpha_k=alpha,
        )


@pydantic_dataclass(frozen=True)
class SlidingConfig:
    L: Union[float, Literal['auto']] = 'auto'
    eps: float = 1e-6
    outer_stop: Optional[StoppingRule] = None
    inner_gd_budget: Optional[StoppingRule] = None
    vr_budget: Optional[StoppingRule] = None
    outer_max_iters: int = 1000
    inner_gd_max_iters: int = 200
    vr_max_epochs: int = 2000
    vr_tolerance_ratio: float = 0.1
    warm_start: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ValueError('eps must be positive')
        if self.vr_tolerance_ratio <= 0:
            raise ValueError('vr_tolerance_ratio must be positive')


def resolve_L(obj: CompositeObjective, cfg: SlidingConfig) -> float:
    constants = ProblemConstants.of(obj)
    if cfg.L == 'auto':
        return choose_L(constants)
    L = float(cfg.L)
    if not obj.mu <= L <= obj.L_f:
        raise InconsistentConstants(
            f'L={L} must satisfy mu <= L <= L_f = [{obj.mu}, {obj.L_f}]'
        )
    return L


def default_outer_stop(obj: CompositeObjective, cfg: SlidingConfig) -> StoppingRule:
    """Certified gap when F* is computable, else ||grad F|| <= sqrt(2 mu eps)."""
    if cfg.outer_stop is not None:
        return cfg.outer_stop
    if isinstance(obj.parts, ProblemParts) and obj.parts.all_quadratic:
        return StoppingRule.func_gap(
            cfg.eps, optimal_value(obj), max_iters=cfg.outer_max_iters,
        )
    return StoppingRule.grad_norm(
        float(np.sqrt(2.0 * obj.mu * cfg.eps)), max_iters=cfg.outer_max_iters,
    )


InnerProx = Callable[[Vector, Vector, float, OracleCounters], SolverReport]


def catalyst_outer(
        obj: CompositeObjective,
        cfg: SlidingConfig,
        inner: InnerProx,
        ctr: OracleCounters,
        x0: Optional[Vector] = None,
) -> SolverReport:
    """Accelerated inexact proximal point loop.

    `inner(center, start, accuracy, ctr)` approximately minimizes
    F(x) + L/2 ||x - center||^2 to function accuracy `accuracy`; accuracies
    tighten geometrically, eps_0 * (1 - 0.9 sqrt(q))^k. One full grad F per
    iteration, plus one at the start, is charged to the `outer` level.
    """
    obj.require_strongly_convex()
    L = resolve_L(obj, cfg)
    stop = default_outer_stop(obj, cfg)
    outer_ctr = ctr.level('outer')
    x_init = np.zeros(obj.n) if x0 is None else np.array(x0, dtype=np.float64)
    state = CatalystState.start(x_init, obj.mu, L)
    rho = 1.0 - ACCURACY_DECAY * np.sqrt(state.q)

    gradient = grad_F(obj, x_init, outer_ctr)
    eps0 = float(np.dot(gradient, gradient)) / (2.0 * obj.mu)
    trace = [(0, eval_F(obj, x_init, outer_ctr))]
    converged = stop.satisfied(
        0, grad_norm=float(np.linalg.norm(gradient)), value=trace[0][1],
    ) and not stop.fixed_budget
    logger.info(
        'catalyst start: L={:.4g} q={:.4g} eps0={:.4g} stop={}',
        L, state.q, eps0, stop.kind.name,
    )
    iteration = 0
    inner_unconverged = 0
    while not converged and iteration < stop.limit:
        iteration += 1
        accuracy = eps0 * rho ** iteration
        start = state.x_k if cfg.warm_start else x_init
        try:
            report = inner(state.y_k, start, accuracy, ctr)
        except OptslideError as exc:
            raise InnerSolverFailure('catalyst_outer', iteration) from exc
        inner_unconverged += not report.converged
        state = state.advance(report.x_out)
        gradient = grad_F(obj, state.x_k, outer_ctr)
        value = eval_F(obj, state.x_k, outer_ctr)
        trace.append((iteration, value))
        grad_norm = float(np.linalg.norm(gradient))
        logger.debug(
            'catalyst iteration {}: F={:.10g} |grad F|={:.3g} accuracy={:.3g}',
            iteration, value, grad_norm, accuracy,
        )
        converged = stop.satisfied(iteration, grad_norm=grad_norm, value=value)
    logger.info(
        'catalyst finished: {} iterations, F={:.10g}, converged={}',
        iteration, trace[-1][1], converged,
    )
    return SolverReport(
        x_out=state.x_k,
        iterations=iteration,
        counters=ctr.snapshot(),
        trace=trace,
        converged=converged,
        diagnostics={'L': L, 'inner_unconverged': inner_unconverged},
    )


def _seed(base: int, call: int) -> int:
    return int(np.random.SeedSequence([base, call]).generate_state(1)[0])


def warn_regime(obj: CompositeObjective) -> None:
    if not obj.m_within_condition:
        logger.warning(
            'regime: m={} exceeds L_g/mu={:.4g}', obj.m, obj.L_g / obj.mu,
        )
    if not obj.sliding_regime:
        logger.warning(
            'regime: m*L_f={:.4g} exceeds L_g={:.4g}', obj.m * obj.L_f, obj.L_g,
        )


def sliding_solve(
        obj: CompositeObjective,
        cfg: SlidingConfig,
        ctr: OracleCounters,
        x0: Optional[Vector] = None,
) -> SolverReport:
    obj.require_strongly_convex()
    warn_regime(obj)
    L = resolve_L(obj, cfg)
    cfg = replace(cfg, L=L)
    gd_ctr = ctr.level('inner_gd')
    vr_ctr = ctr.level('vr')
    sigma = obj.L_f + L
    vr_calls = itertools.count()
    gd_reports: List[SolverReport] = []
    vr_unconverged = 0

    def inner(
            center: Vector, start: Vector, accuracy: float, _: OracleCounters,
    ) -> SolverReport:
        mapping_tol = float(np.sqrt(2.0 * (obj.mu + L) * accuracy))
        budget = cfg.inner_gd_budget or StoppingRule.grad_norm(
            mapping_tol, max_iters=cfg.inner_gd_max_iters,
        )
        vr_stop = cfg.vr_budget or StoppingRule.grad_norm(
            cfg.vr_tolerance_ratio * mapping_tol * sigma / obj.L_f,
            max_iters=cfg.vr_max_epochs,
        )

        def vr_solver(
                fs: FiniteSumTerm,
                anchors: QuadraticAnchors,
                x_start: Vector,
                __: OracleCounters,
        ) -> SolverReport:
            nonlocal vr_unconverged
            report = varag_solve(
                fs, anchors, x_start, vr_stop, _seed(cfg.seed, next(vr_calls)), vr_ctr,
            )
            vr_unconverged += not report.converged
            return report

        report = composite_gd(
            ProximalSubproblem(obj, L, center, start), vr_solver, budget, gd_ctr,
        )
        gd_reports.append(report)
        return report

    report = catalyst_outer(obj, cfg, inner, ctr, x0=x0)
    report.diagnostics.update({
        'inner_gd_calls': len(gd_reports),
        'inner_gd_iterations': sum(r.iterations for r in gd_reports),
        'vr_calls': next(vr_calls),
        'vr_unconverged': vr_unconverged,
        'regime': {
            'm_within_condition': obj.m_within_condition,
            'sliding_regime': obj.sliding_regime,
        },
    })
    return report


@dataclass(frozen=True)
class CoupledSum(FiniteSumTerm):
    """Components f + g_k: every component query also queries grad f."""

    smooth: Optional[SmoothTerm] = None

    @classmethod
    def of(cls, obj: CompositeObjective) -> CoupledSum:
        g = obj.g
        return cls(
            m=g.m,
            component_value=g.component_value,
            component_gradient=g.component_gradient,
            lipschitz_grad=obj.L_f + obj.L_g,
            batch_values=g.batch_values,
            batch_gradients=g.batch_gradients,
            smooth=obj.f,
        )

    def gradient(self, k: int, x: Vector, ctr: OracleCounters) -> Vector:
        return self.smooth.gradient(x, ctr) + super().gradient(k, x, ctr)

    def gradient_table(self, x: Vector, ctr: OracleCounters) -> np.ndarray:
        return super().gradient_table(x, ctr) + self.smooth.gradient(x, ctr)[None, :]

    def value(self, x: Vector, ctr: OracleCounters) -> float:
        return super().value(x, ctr) + self.smooth.value(x, ctr)


def catalyst_vr_solve(
        obj: CompositeObjective,
        cfg: SlidingConfig,
        ctr: OracleCounters,
        x0: Optional[Vector] = None,
) -> SolverReport:
    """Catalyst with the variance-reduced solver applied to F directly."""
    obj.require_strongly_convex()
    L = resolve_L(obj, cfg)
    cfg = replace(cfg, L=L)
    coupled = CoupledSum.of(obj)
    vr_ctr = ctr.level('vr')
    calls = itertools.count()

    def inner(
            center: Vector, start: Vector, accuracy: float, _: OracleCounters,
    ) -> SolverReport:
        stop = cfg.vr_budget or StoppingRule.grad_norm(
            float(np.sqrt(2.0 * (obj.mu + L) * accuracy)),
            max_iters=cfg.vr_max_epochs,
        )
        anchors = QuadraticAnchors(
            shift=np.zeros(obj.n), Lf=0.0, xtilde=center, L=L, center=center,
        )
        return varag_solve(
            coupled, anchors, start, stop, _seed(cfg.seed, next(calls)), vr_ctr,
        )

    return catalyst_outer(obj, cfg, inner, ctr, x0=x0)
