"""Building-block solvers: composite FGM, composite gradient descent on the
proximal subproblem, and an accelerated variance-reduced finite-sum method
whose composite part is a sum of quadratic anchors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Protocol, Tuple

import numpy as np
from loguru import logger
from pydantic import model_validator
from pydantic.dataclasses import dataclass as pydantic_dataclass

from .errors import (
    InconsistentConstants,
    InnerSolverFailure,
    OptslideError,
    SolverDiverged,
)
from .numerics import Vector, check_finite
from .oracles import (
    CompositeObjective,
    CounterSnapshot,
    FiniteSumTerm,
    OracleCounters,
    eval_F,
    grad_F,
    grad_f,
)

DIVERGENCE_WINDOW = 50
# relative rise above the best objective that counts towards divergence
DIVERGENCE_MARGIN = 1e-3
TRACE_POINTS = 1000


class StopKind(Enum):
    GRAD_NORM = 'GRAD_NORM'
    FUNC_GAP = 'FUNC_GAP'
    FIXED_ITERS = 'FIXED_ITERS'


@pydantic_dataclass(frozen=True)
class StoppingRule:
    kind: StopKind
    tol: float = 0.0
    f_star: Optional[float] = None
    iters: int = 0
    max_iters: int = 10_000

    @model_validator(mode='after')
    def check_consistency(self) -> StoppingRule:
        if self.max_iters < 1:
            raise ValueError('max_iters must be >= 1')
        if self.kind == StopKind.FIXED_ITERS and self.iters < 1:
            raise ValueError('FIXED_ITERS needs iters >= 1')
        if self.kind != StopKind.FIXED_ITERS and self.tol <= 0:
            raise ValueError(f'{self.kind.name} needs tol > 0')
        if self.kind == StopKind.FUNC_GAP and self.f_star is None:
            raise ValueError('FUNC_GAP needs f_star')
        return self

    @classmethod
    def grad_norm(cls, tol: float, max_iters: int = 10_000) -> StoppingRule:
        return cls(kind=StopKind.GRAD_NORM, tol=tol, max_iters=max_iters)

    @classmethod
    def func_gap(
            cls, tol: float, f_star: float, max_iters: int = 10_000,
    ) -> StoppingRule:
        return cls(kind=StopKind.FUNC_GAP, tol=tol, f_star=f_star, max_iters=max_iters)

    @classmethod
    def fixed(cls, iters: int) -> StoppingRule:
        return cls(kind=StopKind.FIXED_ITERS, iters=iters, max_iters=iters)

    @property
    def fixed_budget(self) -> bool:
        return self.kind == StopKind.FIXED_ITERS

    @property
    def limit(self) -> int:
        return self.iters if self.fixed_budget else self.max_iters

    def satisfied(
            self,
            iteration: int,
            grad_norm: Optional[float] = None,
            value: Optional[float] = None,
    ) -> bool:
        if self.kind == StopKind.FIXED_ITERS:
            return iteration >= self.iters
        if self.kind == StopKind.GRAD_NORM:
            return grad_norm is not None and grad_norm <= self.tol
        return value is not None and value - self.f_star <= self.tol


@dataclass
class SolverReport:
    x_out: Vector
    iterations: int
    counters: CounterSnapshot
    trace: List[Tuple[int, float]]
    converged: bool
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.trace[-1][1]

    def to_json(self) -> Dict[str, Any]:
        trace = self.trace
        if len(trace) > TRACE_POINTS:
            keep = np.unique(np.linspace(0, len(trace) - 1, TRACE_POINTS).round())
            trace = [trace[int(i)] for i in keep]
        counters = self.counters.as_dict()
        return {
            'x_out': [float(v) for v in self.x_out],
            'iterations': self.iterations,
            'converged': self.converged,
            'objective': self.objective,
            'counters': {k: v for k, v in counters.items() if k != 'levels'},
            'levels': counters['levels'],
            'trace': [[k, v] for k, v in trace],
            'diagnostics': self.diagnostics,
        }


def quadratic_prox(
        v: Vector,
        gamma: float,
        xbar: Vector,
        Lf: float,
        xtilde: Vector,
        L: float,
        xk: Vector,
) -> Vector:
    """argmin <v,x> + ||x - xbar||^2/(2 gamma) + Lf/2 ||x - xtilde||^2
    + L/2 ||x - xk||^2, coordinatewise."""
    if gamma <= 0:
        raise InconsistentConstants('prox step gamma must be positive')
    if Lf < 0 or L < 0:
        raise InconsistentConstants('anchor weights must be non-negative')
    return (xbar / gamma + Lf * xtilde + L * xk - v) / (1.0 / gamma + Lf + L)


@dataclass(frozen=True)
class QuadraticAnchors:
    """<shift, x - xtilde> + Lf/2 ||x - xtilde||^2 + L/2 ||x - center||^2."""

    shift: Vector
    Lf: float
    xtilde: Vector
    L: float
    center: Vector

    @property
    def strong_convexity(self) -> float:
        return self.Lf + self.L

    def value(self, x: Vector) -> float:
        d = x - self.xtilde
        c = x - self.center
        return float(
            np.dot(self.shift, d)
            + 0.5 * self.Lf * np.dot(d, d)
            + 0.5 * self.L * np.dot(c, c)
        )

    def gradient(self, x: Vector) -> Vector:
        return self.shift + self.Lf * (x - self.xtilde) + self.L * (x - self.center)

    def prox(self, v: Vector, gamma: float, xbar: Vector) -> Vector:
        return quadratic_prox(
            v + self.shift, gamma, xbar, self.Lf, self.xtilde, self.L, self.center,
        )

    def prox_operator(self) -> Prox:
        return lambda point, step: self.prox(np.zeros_like(point), step, point)


class SmoothModel(Protocol):
    def gradient(self, x: Vector, ctr: OracleCounters) -> Vector:
        ...

    def value(self, x: Vector, ctr: OracleCounters) -> float:
        ...


Prox = Callable[[Vector, float], Vector]


@dataclass(frozen=True)
class ObjectiveModel:
    """F = f + g seen as a single smooth function."""

    obj: CompositeObjective

    def gradient(self, x: Vector, ctr: OracleCounters) -> Vector:
        return grad_F(self.obj, x, ctr)

    def value(self, x: Vector, ctr: OracleCounters) -> float:
        return eval_F(self.obj, x, ctr)


@dataclass(frozen=True)
class FiniteSumModel:
    fs: FiniteSumTerm

    def gradient(self, x: Vector, ctr: OracleCounters) -> Vector:
        return self.fs.full_gradient(x, ctr)

    def value(self, x: Vector, ctr: OracleCounters) -> float:
        return self.fs.value(x, ctr)


def identity_prox(point: Vector, step: float) -> Vector:
    return point


def composite_fgm(
        smooth: SmoothModel,
        prox: Prox,
        L_smooth: float,
        mu: float,
        x0: Vector,
        stop: StoppingRule,
        ctr: OracleCounters,
        composite_value: Callable[[Vector], float] = lambda x: 0.0,
) -> SolverReport:
    """Accelerated composite gradient method.

    Gradients are only queried on `smooth`; `prox(point, step)` returns
    argmin psi(x) + ||x - point||^2 / (2 step) for the composite psi. With
    mu > 0 the momentum is constant, (sqrt(L) - sqrt(mu)) / (sqrt(L) + sqrt(mu));
    with mu = 0 the t_k sequence is used. The momentum restarts whenever the
    objective goes up. The run aborts once it stays above the best value seen
    for DIVERGENCE_WINDOW iterations. GRAD_NORM tests the gradient mapping.
    """
    if not L_smooth > 0 or not 0 <= mu <= L_smooth:
        raise InconsistentConstants(f'need L >= mu >= 0, got L={L_smooth} mu={mu}')
    step = 1.0 / L_smooth
    strong_momentum = (np.sqrt(L_smooth) - np.sqrt(mu)) / (np.sqrt(L_smooth) + np.sqrt(mu))

    def objective(x: Vector) -> float:
        return smooth.value(x, ctr) + composite_value(x)

    x = np.array(x0, dtype=np.float64)
    y = x.copy()
    t = 1.0
    trace = [(0, objective(x))]
    best = trace[0][1]
    increases = 0
    converged = False
    iteration = 0
    for iteration in range(1, stop.limit + 1):
        gradient = smooth.gradient(y, ctr)
        x_next = prox(y - step * gradient, step)
        check_finite(x_next, 'fgm iterate')
        mapping_norm = L_smooth * float(np.linalg.norm(y - x_next))
        value = objective(x_next)
        restart = value > trace[-1][1]
        if value > best + DIVERGENCE_MARGIN * (1.0 + abs(best)):
            increases += 1
        else:
            increases = 0
        best = min(best, value)
        trace.append((iteration, value))
        if increases >= DIVERGENCE_WINDOW:
            raise SolverDiverged(
                f'objective above its best for {increases} consecutive iterations '
                f'(iteration {iteration}, value {value:.6g})'
            )
        if restart:
            beta = 0.0
            t = 1.0
        elif mu > 0:
            beta = strong_momentum
        else:
            t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
            beta = (t - 1.0) / t_next
            t = t_next
        y = x_next + beta * (x_next - x)
        x = x_next
        if stop.satisfied(iteration, grad_norm=mapping_norm, value=value):
            converged = True
            break
    logger.debug(
        'fgm finished after {} iterations, value {:.6g}, converged={}',
        iteration, trace[-1][1], converged,
    )
    return SolverReport(
        x_out=x,
        iterations=iteration,
        counters=ctr.snapshot(),
        trace=trace,
        converged=converged,
    )


def plain_fgm_baseline(
        obj: CompositeObjective,
        x0: Vector,
        stop: StoppingRule,
        ctr: OracleCounters,
) -> SolverReport:
    """FGM on F as a whole: one grad f and m grad g_k per iteration."""
    return composite_fgm(
        smooth=ObjectiveModel(obj),
        prox=identity_prox,
        L_smooth=obj.L_f + obj.L_g,
        mu=obj.mu,
        x0=x0,
        stop=stop,
        ctr=ctr,
    )


@dataclass(frozen=True)
class ProximalSubproblem:
    """F(x) + L/2 ||x - center||^2, started at `start`."""

    obj: CompositeObjective
    L: float
    center: Vector
    start: Vector

    def value(self, x: Vector, ctr: OracleCounters) -> float:
        d = x - self.center
        return eval_F(self.obj, x, ctr) + 0.5 * self.L * float(np.dot(d, d))


AnchoredSolver = Callable[
    [FiniteSumTerm, QuadraticAnchors, Vector, OracleCounters], SolverReport,
]


def composite_gd(
        subproblem: ProximalSubproblem,
        inner_solver: AnchoredSolver,
        budget: StoppingRule,
        ctr: OracleCounters,
) -> SolverReport:
    """Non-accelerated composite gradient method on the proximal subproblem.

    g + L/2 ||x - center||^2 is the composite; each step linearizes f at the
    current point (one grad f call) and hands the anchored model to
    `inner_solver`. GRAD_NORM tests the gradient mapping L_f ||x_l - x_{l+1}||.
    """
    obj = subproblem.obj
    L_f = obj.L_f
    if L_f <= 0:
        raise InconsistentConstants('composite gradient step needs L_f > 0')
    x = np.array(subproblem.start, dtype=np.float64)
    trace = [(0, subproblem.value(x, ctr))]
    converged = False
    unconverged_inner = 0
    iteration = 0
    for iteration in range(1, budget.limit + 1):
        gradient = grad_f(obj, x, ctr)
        anchors = QuadraticAnchors(
            shift=gradient, Lf=L_f, xtilde=x, L=subproblem.L, center=subproblem.center,
        )
        try:
            report = inner_solver(obj.g, anchors, x, ctr)
        except OptslideError as exc:
            raise InnerSolverFailure('composite_gd', iteration) from exc
        unconverged_inner += not report.converged
        mapping_norm = L_f * float(np.linalg.norm(x - report.x_out))
        x = report.x_out
        value = subproblem.value(x, ctr)
        trace.append((iteration, value))
        if budget.satisfied(iteration, grad_norm=mapping_norm, value=value):
            converged = True
            break
    return SolverReport(
        x_out=x,
        iterations=iteration,
        counters=ctr.snapshot(),
        trace=trace,
        converged=converged,
        diagnostics={'inner_unconverged': unconverged_inner},
    )


def varag_epoch_lengths(m: int, epochs: int) -> List[int]:
    """2^(s-1) until s0 = floor(log2 m) + 1, then fixed."""
    s0 = m.bit_length()
    return [2 ** (min(s, s0) - 1) for s in range(1, epochs + 1)]


def varag_oracle_count(m: int, epochs: int) -> int:
    """Component-gradient calls of `varag_solve` under FIXED_ITERS(epochs)."""
    return epochs * m + sum(varag_epoch_lengths(m, epochs))


@dataclass(frozen=True)
class _EpochParameters:
    alpha: float
    p: float
    gamma: float
    mu: float
    weights: np.ndarray


def _epoch_parameters(
        s: int, length: int, m: int, L: float, sigma: float,
) -> _EpochParameters:
    s0 = m.bit_length()
    well_conditioned = m >= 3.0 * L / (4.0 * sigma)
    p = 0.5
    if well_conditioned or s > s0:
        alpha = 0.5 if well_conditioned else np.sqrt(m * sigma / (3.0 * L))
        gamma = 1.0 / (3.0 * L * alpha)
        ratio = 1.0 + sigma * gamma
        # Gamma_{t-1} - (1 - alpha - p) Gamma_t, scaled by Gamma_T
        base = np.power(ratio, np.arange(length, dtype=np.float64) - length)
        weights = base - (1.0 - alpha - p) * base * ratio
        weights[-1] = base[-1]
        return _EpochParameters(alpha, p, gamma, sigma, weights)
    # warm-up epochs ignore strong convexity
    alpha = 0.5
    gamma = 1.0 / (3.0 * L * alpha)
    weights = np.full(length, alpha + p)
    weights[-1] = 1.0
    return _EpochParameters(alpha, p, gamma, 0.0, weights)


def varag_solve(
        fs: FiniteSumTerm,
        anchors: QuadraticAnchors,
        x0: Vector,
        stop: StoppingRule,
        seed: int,
        ctr: OracleCounters,
) -> SolverReport:
    """Accelerated variance-reduced method for (1/m) sum g_k + anchors.

    Each epoch takes the m reference component gradients at the epoch's
    reference point, then runs single-component steps with the estimator
    grad g_k(x) - grad g_k(ref) + mean_k grad g_k(ref), each closed by the
    anchors' quadratic prox. FIXED_ITERS counts epochs; GRAD_NORM tests the
    exact subproblem gradient at each reference point.
    """
    sigma = anchors.strong_convexity
    if sigma <= 0:
        raise InconsistentConstants('anchors must be strongly convex (Lf + L > 0)')
    m = fs.m
    L = fs.lipschitz_grad if fs.lipschitz_grad > 0 else sigma
    rng = np.random.default_rng(seed)

    def objective(x: Vector) -> float:
        return fs.value(x, ctr) + anchors.value(x)

    x_ref = np.array(x0, dtype=np.float64)
    x_prox = x_ref.copy()
    trace = [(0, objective(x_ref))]
    converged = False
    epoch = 0
    while True:
        if stop.kind == StopKind.FUNC_GAP \
                and stop.satisfied(epoch, value=trace[-1][1]):
            converged = True
            break
        if not stop.fixed_budget and epoch >= stop.max_iters:
            break
        table = fs.gradient_table(x_ref, ctr)
        full = table.mean(axis=0)
        if not stop.fixed_budget:
            grad_norm = float(np.linalg.norm(full + anchors.gradient(x_ref)))
            if stop.satisfied(epoch, grad_norm=grad_norm):
                converged = True
                break
        epoch += 1
        length = varag_epoch_lengths(m, epoch)[-1]
        params = _epoch_parameters(epoch, length, m, L, sigma)
        x_ref, x_prox = _run_epoch(
            fs, anchors, table, full, x_ref, x_prox, params,
            rng.integers(0, m, size=length), ctr,
        )
        trace.append((epoch, objective(x_ref)))
        if stop.fixed_budget and epoch >= stop.iters:
            converged = True
            break
    logger.debug(
        'varag finished after {} epochs, value {:.6g}, converged={}',
        epoch, trace[-1][1], converged,
    )
    return SolverReport(
        x_out=x_ref,
        iterations=epoch,
        counters=ctr.snapshot(),
        trace=trace,
        converged=converged,
    )


def _run_epoch(
        fs: FiniteSumTerm,
        anchors: QuadraticAnchors,
        table: np.ndarray,
        full: Vector,
        x_ref: Vector,
        x_prox: Vector,
        params: _EpochParameters,
        samples: np.ndarray,
        ctr: OracleCounters,
) -> Tuple[Vector, Vector]:
    alpha, p, gamma, mu = params.alpha, params.p, params.gamma, params.mu
    mg = mu * gamma
    lower_scale = 1.0 + mg * (1.0 - alpha)
    x_bar = x_ref.copy()
    accumulated = np.zeros_like(x_ref)
    for t, k in enumerate(samples):
        x_low = (
            (1.0 + mg) * (1.0 - alpha - p) * x_bar
            + alpha * x_prox
            + (1.0 + mg) * p * x_ref
        ) / lower_scale
        estimate = fs.gradient(int(k), x_low, ctr) - table[k] + full
        if mu > 0:
            inverse_step = 1.0 / gamma + mu
            center = (x_prox / gamma + mu * x_low) / inverse_step
            x_prox = anchors.prox(estimate, 1.0 / inverse_step, center)
        else:
            x_prox = anchors.prox(estimate, gamma, x_prox)
        x_bar = (1.0 - alpha - p) * x_bar + alpha * x_prox + p * x_ref
        accumulated += params.weights[t] * x_bar
    x_next = accumulated / params.weights.sum()
    check_finite(x_next, 'varag reference point')
    return x_next, x_prox
